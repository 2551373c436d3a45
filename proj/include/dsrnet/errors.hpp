#pragma once

#include <stdexcept>
#include <string>

namespace dsrnet {

// Base for everything thrown by this library.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Mismatched or otherwise impossible tensor/image geometry.
class ShapeError : public Error {
public:
    explicit ShapeError(const std::string& msg) : Error(msg) {}
};

// Channel-count violations (odd gate width and friends).
class ChannelCountError : public ShapeError {
public:
    explicit ChannelCountError(const std::string& msg) : ShapeError(msg) {}
};

// Inconsistent widths, bad ranges and other configuration mistakes.
class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};

// Input values outside their documented domain (e.g. pixels not in [0,1]).
class DomainError : public Error {
public:
    explicit DomainError(const std::string& msg) : Error(msg) {}
};

// Missing files, unreadable weights, empty source directories.
class ResourceError : public Error {
public:
    explicit ResourceError(const std::string& msg) : Error(msg) {}
};

// Malformed on-disk datasets (unpaired or mismatched files).
class IngestionError : public Error {
public:
    explicit IngestionError(const std::string& msg) : Error(msg) {}
};

// Checkpoint version/corruption problems.
class CheckpointError : public Error {
public:
    explicit CheckpointError(const std::string& msg) : Error(msg) {}
};

} // namespace dsrnet
