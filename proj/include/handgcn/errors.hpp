#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>

namespace handgcn {

/// Root of every error thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Bad or inconsistent input data (files, poses, labels). CLI exit code 2.
class DataError : public Error {
public:
    using Error::Error;
};

/// Numerical failure during training or inference. CLI exit code 3.
class NumericalError : public Error {
public:
    using Error::Error;
};

class DimensionMismatch : public Error {
public:
    using Error::Error;
};

class DegenerateJoint : public DataError {
public:
    DegenerateJoint(std::string joint, std::size_t first, std::size_t middle, std::size_t last,
                    std::string source_id = {})
        : DataError(format(joint, first, middle, last, source_id)),
          joint_(std::move(joint)), first_(first), middle_(middle), last_(last),
          source_id_(std::move(source_id)) {}

    const std::string& joint() const { return joint_; }
    std::size_t first() const { return first_; }
    std::size_t middle() const { return middle_; }
    std::size_t last() const { return last_; }
    const std::string& source_id() const { return source_id_; }

    DegenerateJoint with_source(std::string id) const {
        return DegenerateJoint(joint_, first_, middle_, last_, std::move(id));
    }

private:
    static std::string format(const std::string& joint, std::size_t a, std::size_t b, std::size_t c,
                              const std::string& source) {
        std::string msg = "degenerate joint";
        if (!joint.empty()) msg += " " + joint;
        msg += " (" + std::to_string(a) + ", " + std::to_string(b) + ", " + std::to_string(c) + ")";
        if (!source.empty()) msg += " in sample '" + source + "'";
        return msg;
    }

    std::string joint_;
    std::size_t first_, middle_, last_;
    std::string source_id_;
};

class DegeneratePose : public DataError {
public:
    explicit DegeneratePose(std::string source_id = {})
        : DataError(source_id.empty() ? "degenerate pose: all landmarks coincide"
                                      : "degenerate pose: all landmarks coincide in sample '" +
                                            source_id + "'"),
          source_id_(std::move(source_id)) {}
    const std::string& source_id() const { return source_id_; }

private:
    std::string source_id_;
};

class InvalidPose : public DataError {
public:
    using DataError::DataError;
};

class ParseError : public DataError {
public:
    ParseError(std::size_t line, const std::string& reason)
        : DataError("line " + std::to_string(line) + ": " + reason), line_(line) {}
    std::size_t line() const { return line_; }

private:
    std::size_t line_;
};

class UnknownLabel : public DataError {
public:
    explicit UnknownLabel(const std::string& name)
        : DataError("unknown class label '" + name + "'"), name_(name) {}
    const std::string& name() const { return name_; }

private:
    std::string name_;
};

class LabelOutOfRange : public DataError {
public:
    using DataError::DataError;
};

class EmptyDataset : public DataError {
public:
    using DataError::DataError;
};

class TooFewSamples : public DataError {
public:
    using DataError::DataError;
};

class VersionMismatch : public DataError {
public:
    using DataError::DataError;
};

class CorruptFile : public DataError {
public:
    CorruptFile(const std::string& reason, std::optional<std::size_t> byte_offset)
        : DataError(byte_offset ? reason + " (at byte " + std::to_string(*byte_offset) + ")" : reason),
          byte_offset_(byte_offset) {}
    std::optional<std::size_t> byte_offset() const { return byte_offset_; }

private:
    std::optional<std::size_t> byte_offset_;
};

class IoError : public DataError {
public:
    using DataError::DataError;
};

class InsufficientBatch : public NumericalError {
public:
    using NumericalError::NumericalError;
};

class NonFiniteLoss : public NumericalError {
public:
    NonFiniteLoss(std::size_t epoch, std::size_t batch)
        : NumericalError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                         std::to_string(batch)),
          epoch_(epoch), batch_(batch) {}
    /// Validation loss of `epoch` was not finite.
    explicit NonFiniteLoss(std::size_t epoch)
        : NumericalError("non-finite validation loss at epoch " + std::to_string(epoch)),
          epoch_(epoch), batch_(0) {}
    std::size_t epoch() const { return epoch_; }
    std::size_t batch() const { return batch_; }

private:
    std::size_t epoch_, batch_;
};

/// Backward pass invoked with a cache that does not belong to the given batch or parameters.
class StaleCache : public Error {
public:
    using Error::Error;
};

} // namespace handgcn
