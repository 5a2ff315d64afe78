#pragma once

#include <stdexcept>
#include <string>

namespace ngf {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Numeric argument outside the domain of an operation (e.g. a zero quaternion).
class InvalidParameter : public Error {
public:
    using Error::Error;
};

/// Inconsistent dimensions or settings between cooperating objects.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// A file or document violates its schema. The message starts with the path
/// of the offending field or file.
class ValidationError : public Error {
public:
    using Error::Error;
};

/// An API was called with state that did not come from the matching call,
/// e.g. a backward pass fed a workspace from a different forward pass.
class ContractViolation : public Error {
public:
    using Error::Error;
};

class ProtocolError : public Error {
public:
    using Error::Error;
};

class SpawnError : public Error {
public:
    using Error::Error;
};

class PluginTimeout : public Error {
public:
    using Error::Error;
};

/// Raised by the trainer when the loss becomes non-finite.
class TrainingAborted : public Error {
public:
    TrainingAborted(const std::string& what, std::string dump_path)
        : Error(what), dump_path_(std::move(dump_path)) {}
    const std::string& dump_path() const { return dump_path_; }

private:
    std::string dump_path_;
};

} // namespace ngf
