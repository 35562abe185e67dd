#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "cropuf/errors.hpp"
#include "cropuf/keyshare.hpp"
#include "cropuf/serial.hpp"

namespace cropuf {

constexpr int kProtocolVersion = 1;
constexpr std::size_t kDefaultMaxFrame = 16u * 1024 * 1024;

// --- message variants --------------------------------------------------------

namespace msg {

struct Hello {
    std::string device_id;
    int n = 0;
    int m = 0;
    friend bool operator==(const Hello&, const Hello&) = default;
};

/// Counter-read batch: lexicographic path indices measured at one simulated
/// ambient temperature (enrollment happens pre-deployment, with the chip in
/// a thermal chamber).
struct ReadRequest {
    std::vector<std::uint64_t> paths;
    double temperature = 25.0;
    int repeats = 1;
    friend bool operator==(const ReadRequest&, const ReadRequest&) = default;
};

struct ReadResponse {
    std::vector<std::uint64_t> paths;
    std::vector<double> counts;
    double temperature = 25.0;
    friend bool operator==(const ReadResponse&, const ReadResponse&) = default;
};

struct BurnFuse {
    friend bool operator==(const BurnFuse&, const BurnFuse&) = default;
};

struct BurnAck {
    friend bool operator==(const BurnAck&, const BurnAck&) = default;
};

struct Provision {
    std::string key_id;
    KeyChallenges challenges;
    friend bool operator==(const Provision&, const Provision&) = default;
};

struct KeyAck {
    std::string key_id;
    friend bool operator==(const KeyAck&, const KeyAck&) = default;
};

struct Data {
    std::string key_id;
    std::vector<std::uint8_t> ciphertext;
    friend bool operator==(const Data&, const Data&) = default;
};

struct Error {
    std::string code;
    std::string detail;
    friend bool operator==(const Error&, const Error&) = default;
};

}  // namespace msg

using Payload = std::variant<msg::Hello, msg::ReadRequest, msg::ReadResponse, msg::BurnFuse, msg::BurnAck,
                             msg::Provision, msg::KeyAck, msg::Data, msg::Error>;

struct ProtocolMessage {
    int v = kProtocolVersion;
    std::uint64_t seq = 0;
    Payload payload;

    friend bool operator==(const ProtocolMessage&, const ProtocolMessage&) = default;
};

inline const char* type_tag(const Payload& p) {
    struct Visitor {
        const char* operator()(const msg::Hello&) const { return "HELLO"; }
        const char* operator()(const msg::ReadRequest&) const { return "READ_REQUEST"; }
        const char* operator()(const msg::ReadResponse&) const { return "READ_RESPONSE"; }
        const char* operator()(const msg::BurnFuse&) const { return "BURN_FUSE"; }
        const char* operator()(const msg::BurnAck&) const { return "BURN_ACK"; }
        const char* operator()(const msg::Provision&) const { return "PROVISION"; }
        const char* operator()(const msg::KeyAck&) const { return "KEY_ACK"; }
        const char* operator()(const msg::Data&) const { return "DATA"; }
        const char* operator()(const msg::Error&) const { return "ERROR"; }
    };
    return std::visit(Visitor{}, p);
}

// --- hex ----------------------------------------------------------------------

inline std::string to_hex(const std::vector<std::uint8_t>& bytes) {
    static const char* digits = "0123456789abcdef";
    std::string s;
    s.reserve(bytes.size() * 2);
    for (std::uint8_t b : bytes) {
        s.push_back(digits[b >> 4]);
        s.push_back(digits[b & 0xf]);
    }
    return s;
}

inline std::vector<std::uint8_t> from_hex(const std::string& s) {
    auto nibble = [](char c) -> int {
        if (c >= '0' && c <= '9') return c - '0';
        if (c >= 'a' && c <= 'f') return c - 'a' + 10;
        if (c >= 'A' && c <= 'F') return c - 'A' + 10;
        throw DataError("invalid hex digit");
    };
    if (s.size() % 2) throw DataError("odd-length hex string");
    std::vector<std::uint8_t> out(s.size() / 2);
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = static_cast<std::uint8_t>(nibble(s[2 * i]) << 4 | nibble(s[2 * i + 1]));
    return out;
}

// --- JSON payload codec ---------------------------------------------------------

inline json payload_to_json(const Payload& p) {
    struct Visitor {
        json operator()(const msg::Hello& m) const {
            return json{{"device_id", m.device_id}, {"n", m.n}, {"m", m.m}};
        }
        json operator()(const msg::ReadRequest& m) const {
            return json{{"paths", m.paths}, {"temperature", m.temperature}, {"repeats", m.repeats}};
        }
        json operator()(const msg::ReadResponse& m) const {
            return json{{"readings",
                         json{{"paths", m.paths}, {"counts", m.counts}, {"temperature", m.temperature}}}};
        }
        json operator()(const msg::BurnFuse&) const { return json::object(); }
        json operator()(const msg::BurnAck&) const { return json::object(); }
        json operator()(const msg::Provision& m) const {
            return json{{"key_id", m.key_id}, {"challenges", to_json(m.challenges)}};
        }
        json operator()(const msg::KeyAck& m) const { return json{{"key_id", m.key_id}}; }
        json operator()(const msg::Data& m) const {
            return json{{"key_id", m.key_id}, {"ciphertext", to_hex(m.ciphertext)}};
        }
        json operator()(const msg::Error& m) const { return json{{"code", m.code}, {"detail", m.detail}}; }
    };
    return std::visit(Visitor{}, p);
}

inline Payload payload_from_json(const std::string& type, const json& j) {
    if (type == "HELLO")
        return msg::Hello{j.at("device_id").get<std::string>(), j.at("n").get<int>(), j.at("m").get<int>()};
    if (type == "READ_REQUEST")
        return msg::ReadRequest{j.at("paths").get<std::vector<std::uint64_t>>(),
                                j.at("temperature").get<double>(), j.at("repeats").get<int>()};
    if (type == "READ_RESPONSE") {
        const json& r = j.at("readings");
        return msg::ReadResponse{r.at("paths").get<std::vector<std::uint64_t>>(),
                                 r.at("counts").get<std::vector<double>>(), r.at("temperature").get<double>()};
    }
    if (type == "BURN_FUSE") return msg::BurnFuse{};
    if (type == "BURN_ACK") return msg::BurnAck{};
    if (type == "PROVISION")
        return msg::Provision{j.at("key_id").get<std::string>(), key_challenges_from_json(j.at("challenges"))};
    if (type == "KEY_ACK") return msg::KeyAck{j.at("key_id").get<std::string>()};
    if (type == "DATA")
        return msg::Data{j.at("key_id").get<std::string>(), from_hex(j.at("ciphertext").get<std::string>())};
    if (type == "ERROR") return msg::Error{j.at("code").get<std::string>(), j.at("detail").get<std::string>()};
    throw DecodeError("unknown message type '" + type + "'");
}

// --- framing --------------------------------------------------------------------
// frame = 4-byte big-endian body length + UTF-8 JSON body {v, seq, type, payload}

inline std::vector<std::uint8_t> encode_message(const ProtocolMessage& m,
                                                std::size_t max_frame = kDefaultMaxFrame) {
    json body{{"v", m.v}, {"seq", m.seq}, {"type", type_tag(m.payload)}, {"payload", payload_to_json(m.payload)}};
    std::string text = body.dump();
    if (text.size() > max_frame) throw FrameError("frame body exceeds maximum size");
    std::vector<std::uint8_t> out;
    out.reserve(4 + text.size());
    std::uint32_t len = static_cast<std::uint32_t>(text.size());
    out.push_back(static_cast<std::uint8_t>(len >> 24));
    out.push_back(static_cast<std::uint8_t>(len >> 16));
    out.push_back(static_cast<std::uint8_t>(len >> 8));
    out.push_back(static_cast<std::uint8_t>(len));
    out.insert(out.end(), text.begin(), text.end());
    return out;
}

inline ProtocolMessage decode_body(const std::uint8_t* data, std::size_t size) {
    json body;
    try {
        body = json::parse(data, data + size);
    } catch (const json::parse_error& e) {
        throw DecodeError(std::string("frame body is not valid JSON: ") + e.what());
    }
    ProtocolMessage m;
    try {
        m.v = body.at("v").get<int>();
        m.seq = body.at("seq").get<std::uint64_t>();
        m.payload = payload_from_json(body.at("type").get<std::string>(), body.at("payload"));
    } catch (const json::exception& e) {
        throw DecodeError(std::string("malformed message: ") + e.what());
    }
    if (m.v != kProtocolVersion) throw DecodeError("unsupported protocol version " + std::to_string(m.v));
    return m;
}

inline ProtocolMessage decode_message(const std::vector<std::uint8_t>& frame,
                                      std::size_t max_frame = kDefaultMaxFrame) {
    if (frame.size() < 4) throw FrameError("truncated frame: missing length prefix");
    std::size_t len = (std::size_t{frame[0]} << 24) | (std::size_t{frame[1]} << 16) |
                      (std::size_t{frame[2]} << 8) | std::size_t{frame[3]};
    if (len > max_frame) throw FrameError("frame length exceeds maximum size");
    if (frame.size() != 4 + len) throw FrameError("frame length prefix disagrees with body size");
    return decode_body(frame.data() + 4, len);
}

/// Stream reassembly: removes and returns one complete frame from the front
/// of `buffer`, or nullopt if more bytes are needed.
inline std::optional<std::vector<std::uint8_t>> extract_frame(std::vector<std::uint8_t>& buffer,
                                                              std::size_t max_frame = kDefaultMaxFrame) {
    if (buffer.size() < 4) return std::nullopt;
    std::size_t len = (std::size_t{buffer[0]} << 24) | (std::size_t{buffer[1]} << 16) |
                      (std::size_t{buffer[2]} << 8) | std::size_t{buffer[3]};
    if (len > max_frame) throw FrameError("frame length exceeds maximum size");
    if (buffer.size() < 4 + len) return std::nullopt;
    std::vector<std::uint8_t> frame(buffer.begin(), buffer.begin() + 4 + len);
    buffer.erase(buffer.begin(), buffer.begin() + 4 + len);
    return frame;
}

// --- XOR messaging ----------------------------------------------------------------
// One-time-pad discipline: the key must cover the whole message and is never
// cycled. Bits are consumed MSB-first within each byte.

inline std::vector<std::uint8_t> xor_apply(const SharedKey& key, const std::vector<std::uint8_t>& data) {
    if (key.bits.size() < data.size() * 8)
        throw ParamError("key too short: " + std::to_string(key.bits.size()) + " bits for " +
                         std::to_string(data.size() * 8) + " message bits (key reuse is not allowed)");
    std::vector<std::uint8_t> out(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
        std::uint8_t k = 0;
        for (int b = 0; b < 8; ++b) k = static_cast<std::uint8_t>((k << 1) | key.bits[i * 8 + b]);
        out[i] = data[i] ^ k;
    }
    return out;
}

inline std::vector<std::uint8_t> xor_encrypt(const SharedKey& key, const std::vector<std::uint8_t>& plaintext) {
    return xor_apply(key, plaintext);
}

inline std::vector<std::uint8_t> xor_decrypt(const SharedKey& key, const std::vector<std::uint8_t>& ciphertext) {
    return xor_apply(key, ciphertext);
}

/// Bit-level XOR of equal-length bitstrings ("10100101" ^ "01101001").
inline std::string xor_bitstrings(const std::string& a, const std::string& b) {
    if (a.size() != b.size()) throw ParamError("bitstring lengths differ");
    std::string out(a.size(), '0');
    for (std::size_t i = 0; i < a.size(); ++i) {
        if ((a[i] != '0' && a[i] != '1') || (b[i] != '0' && b[i] != '1'))
            throw ParamError("bitstrings must contain only 0 and 1");
        out[i] = (a[i] != b[i]) ? '1' : '0';
    }
    return out;
}

}  // namespace cropuf
