#pragma once

#include <stdexcept>
#include <string>

namespace dmm {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid motion data (non-finite values, wrong joint counts, bad indices).
class DataError : public Error {
public:
    using Error::Error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

/// A NaN/Inf surfaced in a forward pass or a loss.
class NumericError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

enum class MotionFileErrc { open_failed, malformed_header, joint_count, non_finite, truncated };

class MotionFileError : public IoError {
public:
    MotionFileError(MotionFileErrc code, const std::string& what) : IoError(what), code_(code) {}
    MotionFileErrc code() const noexcept { return code_; }

private:
    MotionFileErrc code_;
};

enum class CheckpointErrc { open_failed, version, shape, truncated, missing_field };

class CheckpointError : public IoError {
public:
    CheckpointError(CheckpointErrc code, const std::string& what) : IoError(what), code_(code) {}
    CheckpointErrc code() const noexcept { return code_; }

private:
    CheckpointErrc code_;
};

} // namespace dmm
