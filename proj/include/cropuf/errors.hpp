#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace cropuf {

/// Base class for all library errors.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// Invalid construction parameters or arguments.
class ParamError : public Error {
public:
    using Error::Error;
};

/// Mismatched grid/path/challenge dimensions.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// Counter interface no longer available (fuse burned).
class FuseBurnedError : public Error {
public:
    FuseBurnedError() : Error("counter interface destroyed: fuse is burned") {}
};

/// Effective delay left the supported range (non-positive).
class EnvRangeError : public Error {
public:
    using Error::Error;
};

/// Two paths share a cell and cannot coexist in one configuration.
class InfeasiblePairError : public Error {
public:
    using Error::Error;
};

/// Linear system rank-deficient beyond the per-column gauge freedom.
class UnderdeterminedError : public Error {
public:
    using Error::Error;
};

/// Non-finite or otherwise unusable input data.
class DataError : public Error {
public:
    using Error::Error;
};

/// Challenge search exhausted its attempt budget for one key bit.
class KeyUnsatisfiableError : public Error {
public:
    KeyUnsatisfiableError(std::size_t bit_index, std::size_t attempts)
        : Error("no challenge satisfies key bit " + std::to_string(bit_index) + " after " +
                std::to_string(attempts) + " attempts (threshold too high for this model)"),
          bit_index(bit_index) {}
    std::size_t bit_index;
};

/// Malformed or oversize wire frame.
class FrameError : public Error {
public:
    using Error::Error;
};

/// Frame decoded but the message inside is invalid.
class DecodeError : public Error {
public:
    using Error::Error;
};

/// Protocol-level failure; carries the wire error code.
class ProtocolError : public Error {
public:
    ProtocolError(std::string code, const std::string& detail)
        : Error(code + ": " + detail), code(std::move(code)) {}
    std::string code;
};

/// File or stream I/O failure.
class IoError : public Error {
public:
    using Error::Error;
};

}  // namespace cropuf
