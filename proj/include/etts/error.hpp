#pragma once

#include <stdexcept>
#include <string>

namespace etts {

/// Base class for all recoverable errors raised by the toolkit.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed or unsupported file content (WAV header, checkpoint blob, ...).
class FormatError : public Error {
public:
    using Error::Error;
};

/// Tensor or sequence shapes that do not satisfy an operation's contract.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// Invalid or unknown configuration keys / values.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Input data that cannot be processed (empty corpus, no voiced frames, ...).
class DataError : public Error {
public:
    using Error::Error;
};

/// A required file or directory does not exist.
class MissingPathError : public Error {
public:
    explicit MissingPathError(std::string path)
        : Error("missing path: " + path), path_(std::move(path)) {}

    const std::string& path() const noexcept { return path_; }

private:
    std::string path_;
};

}  // namespace etts
