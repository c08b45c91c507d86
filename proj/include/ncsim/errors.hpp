#pragma once

#include <stdexcept>
#include <string>

namespace ncsim {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class NumericDomainError : public Error {
public:
    using Error::Error;
};

class IndexError : public Error {
public:
    using Error::Error;
};

/// A delayed read reached before the start of recorded history.
class HistoryUnderflowError : public Error {
public:
    using Error::Error;
};

/// The sampled state left the quantization cell.
class QuantizerOverflowError : public Error {
public:
    QuantizerOverflowError(const std::string& what, double time)
        : Error(what), time_(time) {}
    [[nodiscard]] double time() const noexcept { return time_; }

private:
    double time_;
};

class ProtocolError : public Error {
public:
    using Error::Error;
};

class DecodeError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class DivergenceError : public Error {
public:
    DivergenceError(const std::string& what, double time)
        : Error(what), time_(time) {}
    [[nodiscard]] double time() const noexcept { return time_; }

private:
    double time_;
};

class InsufficientDataError : public Error {
public:
    using Error::Error;
};

class LookupError : public Error {
public:
    using Error::Error;
};

}  // namespace ncsim
