#pragma once

#include <algorithm>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "cropuf/crp.hpp"
#include "cropuf/device.hpp"
#include "cropuf/errors.hpp"
#include "cropuf/extraction.hpp"
#include "cropuf/keyshare.hpp"
#include "cropuf/serial.hpp"
#include "cropuf/wire.hpp"

namespace cropuf {

// ---------------------------------------------------------------------------
// Device-side agent: answers counter reads while the fuse is intact, burns
// the fuse on command, derives keys from provisioned challenges, and
// decrypts DATA sent under a derived key.

struct AgentConfig {
    std::string device_id;
    EnvCondition env{25.0};
    std::uint64_t rng_seed = 0;
    std::size_t max_frame = kDefaultMaxFrame;
};

class DeviceAgent {
public:
    DeviceAgent(PufInstance device, AgentConfig cfg)
        : device_(std::move(device)), cfg_(std::move(cfg)), rng_(cfg_.rng_seed) {
        if (cfg_.device_id.empty()) throw ParamError("device_id must be nonempty");
    }

    const std::string& device_id() const { return cfg_.device_id; }
    const PufInstance& device() const { return device_; }
    PufInstance& device() { return device_; }
    const AgentConfig& config() const { return cfg_; }

    /// Initial frame of a session; resets sequence bookkeeping.
    std::vector<std::uint8_t> hello_frame() {
        out_seq_ = 0;
        last_in_seq_ = 0;
        return frame(msg::Hello{cfg_.device_id, device_.n(), device_.m()});
    }

    void on_frame(const std::vector<std::uint8_t>& raw) {
        ProtocolMessage m;
        try {
            m = decode_message(raw, cfg_.max_frame);
        } catch (const Error& e) {
            queue(msg::Error{"decode_error", e.what()});
            return;
        }
        if (m.seq <= last_in_seq_) {
            queue(msg::Error{"bad_sequence", "sequence number did not increase"});
            return;
        }
        last_in_seq_ = m.seq;
        std::visit([&](const auto& payload) { handle(m.seq, payload); }, m.payload);
    }

    std::vector<std::vector<std::uint8_t>> take_outgoing() {
        std::vector<std::vector<std::uint8_t>> out(outgoing_.begin(), outgoing_.end());
        outgoing_.clear();
        return out;
    }

    const std::map<std::string, SharedKey>& keys() const { return keys_; }

    /// Encrypts plaintext under a derived key and frames it for the peer.
    std::vector<std::uint8_t> data_frame(const std::string& key_id, const std::vector<std::uint8_t>& plaintext) {
        auto it = keys_.find(key_id);
        if (it == keys_.end()) throw ProtocolError("unknown_key", "no key derived under id " + key_id);
        return frame(msg::Data{key_id, xor_encrypt(it->second, plaintext)});
    }

    struct ReceivedData {
        std::string key_id;
        std::vector<std::uint8_t> plaintext;
    };
    const std::vector<ReceivedData>& received() const { return received_; }

private:
    void handle(std::uint64_t, const msg::Hello&) { queue(msg::Error{"unexpected_message", "HELLO from peer"}); }

    void handle(std::uint64_t seq, const msg::ReadRequest& req) {
        if (!device_.fuse_intact()) {
            queue(msg::Error{"fuse_burned", "counter interface destroyed"});
            return;
        }
        if (req.repeats < 1) {
            queue(msg::Error{"bad_request", "repeats must be at least 1"});
            return;
        }
        msg::ReadResponse resp;
        resp.paths = req.paths;
        resp.temperature = req.temperature;
        resp.counts.reserve(req.paths.size());
        EnvCondition env{req.temperature};
        Rng request_stream = rng_.fork(seq);
        try {
            for (std::size_t k = 0; k < req.paths.size(); ++k) {
                PathConfig path = path_from_index(req.paths[k], device_.n(), device_.m());
                Rng stream = request_stream.fork(k);
                double acc = 0.0;
                for (int r = 0; r < req.repeats; ++r) acc += counter_reading(device_, path, env, stream).counts;
                resp.counts.push_back(acc / req.repeats);
            }
        } catch (const Error& e) {
            queue(msg::Error{"read_failed", e.what()});
            return;
        }
        queue(std::move(resp));
    }

    void handle(std::uint64_t, const msg::BurnFuse&) {
        device_.burn_fuse();
        queue(msg::BurnAck{});
    }

    void handle(std::uint64_t, const msg::Provision& prov) {
        try {
            for (const auto& chal : prov.challenges.per_bit) validate_challenge(chal, device_.n(), device_.m());
            if (prov.challenges.per_bit.empty()) throw DataError("empty challenge list");
        } catch (const Error& e) {
            queue(msg::Error{"bad_challenge", e.what()});
            return;
        }
        keys_[prov.key_id] = derive_key(device_, prov.challenges, cfg_.env, &rng_);
        queue(msg::KeyAck{prov.key_id});
    }

    void handle(std::uint64_t, const msg::Data& data) {
        auto it = keys_.find(data.key_id);
        if (it == keys_.end()) {
            queue(msg::Error{"unknown_key", "no key derived under id " + data.key_id});
            return;
        }
        try {
            received_.push_back({data.key_id, xor_decrypt(it->second, data.ciphertext)});
        } catch (const Error& e) {
            queue(msg::Error{"decrypt_failed", e.what()});
        }
    }

    void handle(std::uint64_t, const msg::ReadResponse&) {
        queue(msg::Error{"unexpected_message", "READ_RESPONSE at device"});
    }
    void handle(std::uint64_t, const msg::BurnAck&) { queue(msg::Error{"unexpected_message", "BURN_ACK at device"}); }
    void handle(std::uint64_t, const msg::KeyAck&) { queue(msg::Error{"unexpected_message", "KEY_ACK at device"}); }
    void handle(std::uint64_t, const msg::Error&) {}  // peer reported failure; nothing to answer

    template <typename M>
    void queue(M&& payload) {
        outgoing_.push_back(frame(std::forward<M>(payload)));
    }

    template <typename M>
    std::vector<std::uint8_t> frame(M&& payload) {
        ProtocolMessage m;
        m.seq = ++out_seq_;
        m.payload = std::forward<M>(payload);
        return encode_message(m, cfg_.max_frame);
    }

    PufInstance device_;
    AgentConfig cfg_;
    Rng rng_;
    std::uint64_t out_seq_ = 0;
    std::uint64_t last_in_seq_ = 0;
    std::deque<std::vector<std::uint8_t>> outgoing_;
    std::map<std::string, SharedKey> keys_;
    std::vector<ReceivedData> received_;
};

// ---------------------------------------------------------------------------
// Trusted third party. Drives enrollment (read grid over the probe
// temperature sweep, fit, threshold, burn), stores one model+threshold per
// device, and provisions shared keys as per-device challenge lists. The
// shared key itself never goes on the wire.

struct TtpConfig {
    ProbeConfig probe;
    double fit_temperature = 25.0;  ///< sweep temperature whose readings feed the fit
    double margin_factor = 1.5;
    PairPolicy pair_policy;
    double assumed_window = 1.0;  ///< counter window assumed when linearizing readings
    std::uint64_t max_enroll_paths = 1u << 20;
    std::size_t batch_paths = 8192;
    std::size_t max_frame = kDefaultMaxFrame;
    std::string store_dir;  ///< empty = no persistence

    int fit_index() const {
        for (std::size_t i = 0; i < probe.temperatures.size(); ++i)
            if (probe.temperatures[i] == fit_temperature) return static_cast<int>(i);
        return -1;
    }
};

struct EnrolledDevice {
    std::string device_id;
    int n = 0;
    int m = 0;
    PredictedDelayMatrix model;
    Threshold threshold;
};

using SessionId = std::uint64_t;

enum class SessionPhase { AwaitHello, Reading, AwaitBurnAck, Idle, AwaitKeyAck, Failed };

class TtpNode {
public:
    explicit TtpNode(TtpConfig cfg) : cfg_(std::move(cfg)) {
        if (cfg_.fit_index() < 0) throw ParamError("fit_temperature must be one of the probe temperatures");
        if (!cfg_.store_dir.empty()) load_store();
    }

    SessionId open_session() {
        std::lock_guard<std::mutex> lock(mu_);
        SessionId sid = ++next_session_;
        sessions_[sid];  // default AwaitHello
        return sid;
    }

    /// Aborts the session; an unfinished enrollment leaves no state behind.
    void close_session(SessionId sid) {
        std::lock_guard<std::mutex> lock(mu_);
        auto it = sessions_.find(sid);
        if (it == sessions_.end()) return;
        if (!it->second.device_id.empty()) {
            auto live = live_sessions_.find(it->second.device_id);
            if (live != live_sessions_.end() && live->second == sid) live_sessions_.erase(live);
        }
        sessions_.erase(it);
    }

    void on_frame(SessionId sid, const std::vector<std::uint8_t>& raw) {
        std::lock_guard<std::mutex> lock(mu_);
        Session& s = session(sid);
        ProtocolMessage m;
        try {
            m = decode_message(raw, cfg_.max_frame);
        } catch (const Error& e) {
            queue(s, msg::Error{"decode_error", e.what()});
            return;
        }
        if (m.seq <= s.last_in_seq) {
            queue(s, msg::Error{"bad_sequence", "sequence number did not increase"});
            return;
        }
        s.last_in_seq = m.seq;
        std::visit([&](const auto& payload) { handle(sid, s, payload); }, m.payload);
    }

    std::vector<std::vector<std::uint8_t>> take_outgoing(SessionId sid) {
        std::lock_guard<std::mutex> lock(mu_);
        Session& s = session(sid);
        std::vector<std::vector<std::uint8_t>> out(s.outgoing.begin(), s.outgoing.end());
        s.outgoing.clear();
        return out;
    }

    struct SessionInfo {
        SessionPhase phase = SessionPhase::AwaitHello;
        std::string device_id;
        bool enrolled_now = false;  ///< this session completed an enrollment
        std::string error_code;
        std::string error_detail;
    };

    SessionInfo session_info(SessionId sid) const {
        std::lock_guard<std::mutex> lock(mu_);
        auto it = sessions_.find(sid);
        if (it == sessions_.end()) throw ProtocolError("unknown_session", std::to_string(sid));
        const Session& s = it->second;
        return {s.phase, s.device_id, s.enrolled_now, s.error_code, s.error_detail};
    }

    bool is_enrolled(const std::string& device_id) const {
        std::lock_guard<std::mutex> lock(mu_);
        return enrolled_.count(device_id) > 0;
    }

    EnrolledDevice enrolled(const std::string& device_id) const {
        std::lock_guard<std::mutex> lock(mu_);
        auto it = enrolled_.find(device_id);
        if (it == enrolled_.end()) throw ProtocolError("unknown_device", device_id + " is not enrolled");
        return it->second;
    }

    std::vector<std::string> enrolled_ids() const {
        std::lock_guard<std::mutex> lock(mu_);
        std::vector<std::string> ids;
        for (const auto& [id, dev] : enrolled_) ids.push_back(id);
        return ids;
    }

    bool has_live_session(const std::string& device_id) const {
        std::lock_guard<std::mutex> lock(mu_);
        return live_sessions_.count(device_id) > 0;
    }

    /// Pre-fitted import path: registers a device without wire enrollment.
    void import_device(EnrolledDevice dev) {
        std::lock_guard<std::mutex> lock(mu_);
        if (dev.device_id.empty()) throw ParamError("device_id must be nonempty");
        commit(dev);
    }

    struct ProvisionOutcome {
        std::string key_id;
        SharedKey key;
        KeyChallenges challenges_a;  ///< audit copies of what was sent
        KeyChallenges challenges_b;
    };

    /// Draws a fresh key (or takes `fixed_key`), generates a per-device
    /// challenge list against each enrolled model, and queues PROVISION to
    /// both live sessions. The key is returned for audit; it is never
    /// serialized into any frame.
    ProvisionOutcome provision(const std::string& a, const std::string& b, std::size_t key_bits, Rng& rng,
                               const SharedKey* fixed_key = nullptr) {
        std::lock_guard<std::mutex> lock(mu_);
        if (a == b) throw ParamError("cannot provision a device with itself");
        const EnrolledDevice* da = find_enrolled(a);
        const EnrolledDevice* db = find_enrolled(b);
        if (!da) throw ProtocolError("unknown_device", a + " is not enrolled");
        if (!db) throw ProtocolError("unknown_device", b + " is not enrolled");
        auto la = live_sessions_.find(a);
        auto lb = live_sessions_.find(b);
        if (la == live_sessions_.end()) throw ProtocolError("no_session", a + " has no live session");
        if (lb == live_sessions_.end()) throw ProtocolError("no_session", b + " has no live session");

        SharedKey key = fixed_key ? *fixed_key : SharedKey::random(key_bits, rng);
        if (key.bits.empty()) throw ParamError("key must be nonempty");
        std::vector<std::uint8_t> id_bytes(16);
        for (auto& byte : id_bytes) byte = static_cast<std::uint8_t>(rng.below(256));
        std::string key_id = to_hex(id_bytes);

        KeyChallenges ca, cb;
        try {
            ca = generate_challenges(da->model, da->threshold, key, rng);
        } catch (const KeyUnsatisfiableError& e) {
            throw ProtocolError("provisioning_failed", a + ": " + e.what());
        }
        try {
            cb = generate_challenges(db->model, db->threshold, key, rng);
        } catch (const KeyUnsatisfiableError& e) {
            throw ProtocolError("provisioning_failed", b + ": " + e.what());
        }

        send_provision(session(la->second), key_id, ca);
        send_provision(session(lb->second), key_id, cb);
        provisioned_[key_id] = {key, {a, b}, {}};
        return {key_id, std::move(key), std::move(ca), std::move(cb)};
    }

    bool provision_acked(const std::string& key_id) const {
        std::lock_guard<std::mutex> lock(mu_);
        auto it = provisioned_.find(key_id);
        return it != provisioned_.end() && it->second.acks.size() == it->second.parties.size();
    }

    /// Audit record; the reference TTP retains provisioned keys.
    SharedKey provisioned_key(const std::string& key_id) const {
        std::lock_guard<std::mutex> lock(mu_);
        auto it = provisioned_.find(key_id);
        if (it == provisioned_.end()) throw ProtocolError("unknown_key", key_id);
        return it->second.key;
    }

    const TtpConfig& config() const { return cfg_; }

private:
    struct Session {
        SessionPhase phase = SessionPhase::AwaitHello;
        std::string device_id;
        int n = 0, m = 0;
        std::uint64_t paths = 0;

        // enrollment reading grid: [temp][repeat][path] -> counts
        std::vector<std::vector<std::vector<double>>> grid;
        std::size_t temp_idx = 0;
        std::size_t repeat_idx = 0;
        std::uint64_t batch_start = 0;
        std::vector<std::uint64_t> outstanding;  // path indices of the pending request
        double outstanding_temp = 0.0;

        std::unique_ptr<EnrolledDevice> pending_enrollment;
        std::string pending_key_ack;
        bool enrolled_now = false;
        std::string error_code;
        std::string error_detail;

        std::uint64_t out_seq = 0;
        std::uint64_t last_in_seq = 0;
        std::deque<std::vector<std::uint8_t>> outgoing;
    };

    Session& session(SessionId sid) {
        auto it = sessions_.find(sid);
        if (it == sessions_.end()) throw ProtocolError("unknown_session", std::to_string(sid));
        return it->second;
    }

    const EnrolledDevice* find_enrolled(const std::string& id) const {
        auto it = enrolled_.find(id);
        return it == enrolled_.end() ? nullptr : &it->second;
    }

    void handle(SessionId sid, Session& s, const msg::Hello& hello) {
        if (s.phase != SessionPhase::AwaitHello) {
            queue(s, msg::Error{"unexpected_message", "HELLO after session start"});
            return;
        }
        if (hello.device_id.empty() || hello.n < 2 || hello.m < 2) {
            fail(s, "bad_hello", "device id empty or dimensions unusable");
            return;
        }
        s.device_id = hello.device_id;
        s.n = hello.n;
        s.m = hello.m;
        live_sessions_[s.device_id] = sid;
        if (enrolled_.count(s.device_id)) {
            s.phase = SessionPhase::Idle;  // reconnect; enrollment not repeated
            return;
        }
        std::uint64_t total = path_count(s.n, s.m);
        if (total > cfg_.max_enroll_paths) {
            fail(s, "too_large", "path space exceeds enrollment cap");
            return;
        }
        s.paths = total;
        s.grid.assign(cfg_.probe.temperatures.size(),
                      std::vector<std::vector<double>>(static_cast<std::size_t>(cfg_.probe.repeats)));
        s.phase = SessionPhase::Reading;
        s.temp_idx = 0;
        s.repeat_idx = 0;
        s.batch_start = 0;
        request_next_batch(s);
    }

    void request_next_batch(Session& s) {
        msg::ReadRequest req;
        req.temperature = cfg_.probe.temperatures[s.temp_idx];
        req.repeats = 1;
        std::uint64_t end = std::min<std::uint64_t>(s.paths, s.batch_start + cfg_.batch_paths);
        req.paths.reserve(end - s.batch_start);
        for (std::uint64_t k = s.batch_start; k < end; ++k) req.paths.push_back(k);
        s.outstanding = req.paths;
        s.outstanding_temp = req.temperature;
        queue(s, std::move(req));
    }

    void handle(SessionId, Session& s, const msg::ReadResponse& resp) {
        if (s.phase != SessionPhase::Reading) {
            queue(s, msg::Error{"unexpected_message", "READ_RESPONSE outside enrollment"});
            return;
        }
        if (resp.paths != s.outstanding || resp.counts.size() != s.outstanding.size() ||
            resp.temperature != s.outstanding_temp) {
            fail(s, "bad_reading", "response does not match the outstanding request");
            return;
        }
        for (double c : resp.counts) {
            if (!(c > 0.0) || !std::isfinite(c)) {
                fail(s, "bad_reading", "counts must be positive and finite");
                return;
            }
        }
        auto& slot = s.grid[s.temp_idx][s.repeat_idx];
        slot.insert(slot.end(), resp.counts.begin(), resp.counts.end());
        s.batch_start += resp.counts.size();
        if (s.batch_start < s.paths) {
            request_next_batch(s);
            return;
        }
        s.batch_start = 0;
        if (++s.repeat_idx < static_cast<std::size_t>(cfg_.probe.repeats)) {
            request_next_batch(s);
            return;
        }
        s.repeat_idx = 0;
        if (++s.temp_idx < cfg_.probe.temperatures.size()) {
            request_next_batch(s);
            return;
        }
        finish_reading(s);
    }

    void finish_reading(Session& s) {
        try {
            build_model(s);
        } catch (const Error& e) {
            fail(s, "enrollment_failed", e.what());
            return;
        }
        s.phase = SessionPhase::AwaitBurnAck;
        queue(s, msg::BurnFuse{});
    }

    /// Fit from the fit-temperature slice (averaged across repeats), then the
    /// threshold walk probed directly on the harvested reading grid: a
    /// challenge is unstable if any grid point answers differently.
    void build_model(Session& s) {
        const int n = s.n, m = s.m;
        std::size_t fit_idx = static_cast<std::size_t>(cfg_.fit_index());

        ReadingDataset data;
        data.n = n;
        data.m = m;
        data.window = cfg_.assumed_window;
        data.samples.reserve(s.paths);
        PathEnumerator it(n, m);
        for (std::uint64_t k = 0; k < s.paths; ++k) {
            double acc = 0.0;
            for (int r = 0; r < cfg_.probe.repeats; ++r) acc += s.grid[fit_idx][r][k];
            data.samples.push_back(
                {it.next(), acc / cfg_.probe.repeats, EnvCondition{cfg_.fit_temperature}});
        }
        PredictedDelayMatrix model = fit_delay_matrix(data);

        // measured delays per grid point, reused across the pair walk
        std::vector<std::vector<std::vector<double>>> meas(s.grid.size());
        for (std::size_t t = 0; t < s.grid.size(); ++t) {
            meas[t].resize(s.grid[t].size());
            for (std::size_t r = 0; r < s.grid[t].size(); ++r) {
                meas[t][r].resize(s.paths);
                for (std::uint64_t k = 0; k < s.paths; ++k) meas[t][r][k] = cfg_.assumed_window / s.grid[t][r][k];
            }
        }

        CrpSet crps = enumerate_crps(n, m, cfg_.pair_policy);
        std::vector<double> sums = all_path_sums(model.entries);
        std::vector<std::uint32_t> order = detail::sort_by_abs_delta(sums, crps);

        Threshold t;
        t.margin_factor = cfg_.margin_factor;
        t.probe = cfg_.probe;
        t.pairs_considered = crps.pairs.size();
        t.sampled_pairs = crps.sampled;
        bool found = false;
        for (std::uint32_t rank = 0; rank < order.size() && !found; ++rank) {
            const PathPair& pair = crps.pairs[order[rank]];
            double delta = std::abs(pair_delta(sums, pair));
            if (delta == 0.0) break;
            int reference = -1;
            bool stable = true;
            for (std::size_t ti = 0; ti < meas.size() && stable; ++ti) {
                for (std::size_t r = 0; r < meas[ti].size(); ++r) {
                    int bit = meas[ti][r][pair.first] > meas[ti][r][pair.second] ? 1 : 0;
                    if (reference < 0) reference = bit;
                    if (bit != reference) {
                        stable = false;
                        break;
                    }
                }
            }
            if (!stable) {
                t.trigger_delta = delta;
                t.value = delta * cfg_.margin_factor;
                found = true;
            }
        }
        if (!found) {
            double min_nonzero = 0.0;
            for (const auto& pair : crps.pairs) {
                double d = std::abs(pair_delta(sums, pair));
                if (d > 0.0 && (min_nonzero == 0.0 || d < min_nonzero)) min_nonzero = d;
            }
            if (min_nonzero == 0.0) throw DataError("degenerate model: all CRP differences zero");
            t.value = min_nonzero;
            t.trigger_delta = min_nonzero;
            t.degenerate = true;
        }

        s.pending_enrollment.reset(new EnrolledDevice{s.device_id, n, m, std::move(model), std::move(t)});
        s.grid.clear();
    }

    void handle(SessionId, Session& s, const msg::BurnAck&) {
        if (s.phase != SessionPhase::AwaitBurnAck || !s.pending_enrollment) {
            queue(s, msg::Error{"unexpected_message", "BURN_ACK without pending enrollment"});
            return;
        }
        commit(*s.pending_enrollment);
        s.pending_enrollment.reset();
        s.enrolled_now = true;
        s.phase = SessionPhase::Idle;
    }

    void handle(SessionId, Session& s, const msg::KeyAck& ack) {
        if (s.phase != SessionPhase::AwaitKeyAck || ack.key_id != s.pending_key_ack) {
            queue(s, msg::Error{"unexpected_message", "KEY_ACK does not match a pending provision"});
            return;
        }
        auto it = provisioned_.find(ack.key_id);
        if (it != provisioned_.end()) it->second.acks.insert(s.device_id);
        s.pending_key_ack.clear();
        s.phase = SessionPhase::Idle;
    }

    void handle(SessionId, Session& s, const msg::Error& err) {
        // device-side failure; abort whatever was in flight, keep no state
        if (s.phase == SessionPhase::Reading || s.phase == SessionPhase::AwaitBurnAck) {
            s.phase = SessionPhase::Failed;
            s.error_code = err.code == "fuse_burned" ? "enrollment_refused" : err.code;
            s.error_detail = err.detail;
            s.pending_enrollment.reset();
            s.grid.clear();
        } else if (s.phase == SessionPhase::AwaitKeyAck) {
            s.phase = SessionPhase::Failed;
            s.error_code = err.code;
            s.error_detail = err.detail;
        }
    }

    void handle(SessionId, Session& s, const msg::ReadRequest&) {
        queue(s, msg::Error{"unexpected_message", "READ_REQUEST at TTP"});
    }
    void handle(SessionId, Session& s, const msg::BurnFuse&) {
        queue(s, msg::Error{"unexpected_message", "BURN_FUSE at TTP"});
    }
    void handle(SessionId, Session& s, const msg::Provision&) {
        queue(s, msg::Error{"unexpected_message", "PROVISION at TTP"});
    }
    void handle(SessionId, Session& s, const msg::Data&) {
        queue(s, msg::Error{"unexpected_message", "DATA at TTP"});
    }

    void send_provision(Session& s, const std::string& key_id, KeyChallenges challenges) {
        if (s.phase != SessionPhase::Idle) throw ProtocolError("busy_session", "session not idle");
        s.pending_key_ack = key_id;
        s.phase = SessionPhase::AwaitKeyAck;
        queue(s, msg::Provision{key_id, std::move(challenges)});
    }

    void fail(Session& s, const std::string& code, const std::string& detail) {
        s.phase = SessionPhase::Failed;
        s.error_code = code;
        s.error_detail = detail;
        s.pending_enrollment.reset();
        s.grid.clear();
        queue(s, msg::Error{code, detail});
    }

    void commit(const EnrolledDevice& dev) {
        enrolled_[dev.device_id] = dev;
        if (!cfg_.store_dir.empty()) {
            std::filesystem::create_directories(cfg_.store_dir);
            json j{{"device_id", dev.device_id},
                   {"n", dev.n},
                   {"m", dev.m},
                   {"model", to_json(dev.model)},
                   {"threshold", to_json(dev.threshold)}};
            save_json_file((std::filesystem::path(cfg_.store_dir) / (dev.device_id + ".json")).string(), j);
        }
    }

    void load_store() {
        namespace fs = std::filesystem;
        if (!fs::exists(cfg_.store_dir)) return;
        for (const auto& entry : fs::directory_iterator(cfg_.store_dir)) {
            if (entry.path().extension() != ".json") continue;
            json j = load_json_file(entry.path().string());
            EnrolledDevice dev;
            dev.device_id = j.at("device_id").get<std::string>();
            dev.n = j.at("n").get<int>();
            dev.m = j.at("m").get<int>();
            dev.model = model_from_json(j.at("model"));
            dev.threshold = threshold_from_json(j.at("threshold"));
            enrolled_[dev.device_id] = std::move(dev);
        }
    }

    template <typename M>
    void queue(Session& s, M&& payload) {
        ProtocolMessage m;
        m.seq = ++s.out_seq;
        m.payload = std::forward<M>(payload);
        s.outgoing.push_back(encode_message(m, cfg_.max_frame));
    }

    struct ProvisionRecord {
        SharedKey key;
        std::set<std::string> parties;
        std::set<std::string> acks;
    };

    TtpConfig cfg_;
    mutable std::mutex mu_;
    SessionId next_session_ = 0;
    std::map<SessionId, Session> sessions_;
    std::map<std::string, SessionId> live_sessions_;
    std::map<std::string, EnrolledDevice> enrolled_;
    std::map<std::string, ProvisionRecord> provisioned_;
};

// ---------------------------------------------------------------------------
// In-process wiring: shuttles frames between the TTP and device agents,
// recording every frame for transcript inspection.

class InProcessHarness {
public:
    explicit InProcessHarness(TtpConfig cfg) : ttp_(std::move(cfg)) {}

    TtpNode& ttp() { return ttp_; }

    SessionId attach(DeviceAgent& agent) {
        SessionId sid = ttp_.open_session();
        slots_.push_back({&agent, sid});
        deliver_to_ttp(sid, agent.hello_frame());
        pump();
        return sid;
    }

    /// Full enrollment of a fresh device; throws ProtocolError on refusal.
    std::string enroll(DeviceAgent& agent) {
        if (ttp_.is_enrolled(agent.device_id()))
            throw ProtocolError("enrollment_refused", agent.device_id() + " is already enrolled");
        SessionId sid = attach(agent);
        auto info = ttp_.session_info(sid);
        if (info.phase == SessionPhase::Failed)
            throw ProtocolError(info.error_code.empty() ? "enrollment_failed" : info.error_code, info.error_detail);
        if (!info.enrolled_now) throw ProtocolError("enrollment_failed", "enrollment did not complete");
        return info.device_id;
    }

    /// Fault-injection hook applied to frames travelling TTP -> device; the
    /// transcript records what actually went over the wire.
    using FrameHook = std::function<std::vector<std::uint8_t>(const std::string& device_id,
                                                              const std::vector<std::uint8_t>&)>;
    void set_ttp_to_device_hook(FrameHook hook) { hook_ = std::move(hook); }

    TtpNode::ProvisionOutcome provision(const std::string& a, const std::string& b, std::size_t key_bits,
                                        Rng& rng, const SharedKey* fixed_key = nullptr) {
        auto outcome = ttp_.provision(a, b, key_bits, rng, fixed_key);
        pump();
        if (!ttp_.provision_acked(outcome.key_id)) {
            std::string detail = "missing KEY_ACK";
            for (const auto& slot : slots_) {
                auto info = ttp_.session_info(slot.sid);
                if (info.phase == SessionPhase::Failed) detail = info.error_code + ": " + info.error_detail;
            }
            throw ProtocolError("provisioning_failed", detail);
        }
        return outcome;
    }

    /// Moves frames until both sides go quiet.
    void pump() {
        bool progress = true;
        while (progress) {
            progress = false;
            for (auto& slot : slots_) {
                for (auto& f : ttp_.take_outgoing(slot.sid)) {
                    if (hook_) f = hook_(slot.agent->device_id(), f);
                    transcript_.push_back(f);
                    slot.agent->on_frame(f);
                    progress = true;
                }
                for (auto& f : slot.agent->take_outgoing()) {
                    deliver_to_ttp(slot.sid, f);
                    progress = true;
                }
            }
        }
    }

    const std::vector<std::vector<std::uint8_t>>& transcript() const { return transcript_; }

private:
    void deliver_to_ttp(SessionId sid, const std::vector<std::uint8_t>& frame) {
        transcript_.push_back(frame);
        ttp_.on_frame(sid, frame);
    }

    struct Slot {
        DeviceAgent* agent;
        SessionId sid;
    };

    TtpNode ttp_;
    std::vector<Slot> slots_;
    std::vector<std::vector<std::uint8_t>> transcript_;
    FrameHook hook_;
};

/// True if `needle` occurs in any transcript frame (byte-level scan).
inline bool transcript_contains(const std::vector<std::vector<std::uint8_t>>& transcript,
                                const std::string& needle) {
    if (needle.empty()) return true;
    for (const auto& frame : transcript) {
        auto it = std::search(frame.begin(), frame.end(), needle.begin(), needle.end());
        if (it != frame.end()) return true;
    }
    return false;
}

}  // namespace cropuf
