#pragma once

#include <stdexcept>
#include <string>

namespace fcad {

/// Base class for all library errors.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Bad user-supplied configuration (unknown backbone id, invalid variant, ...).
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Tensor shape mismatch between operands.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// Filesystem / serialization failures.
class IoError : public Error {
public:
    using Error::Error;
};

/// Dataset layout or content violations.
class DataError : public Error {
public:
    using Error::Error;
};

/// Invalid input to a metric (single-class labels, empty masks, ...).
class MetricError : public Error {
public:
    using Error::Error;
};

inline void check_config(bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
}

inline void check_shape(bool ok, const std::string& msg) {
    if (!ok) throw ShapeError(msg);
}

}  // namespace fcad
