#pragma once
#include <stdexcept>
#include <string>

namespace mpdrive {

// Caller broke a documented precondition (bad shape, bad argument).
struct ContractViolation : std::invalid_argument {
    explicit ContractViolation(const std::string& what) : std::invalid_argument(what) {}
};

// Batch-norm forward in train mode needs at least two rows.
struct InvalidBatch : ContractViolation {
    explicit InvalidBatch(const std::string& what) : ContractViolation(what) {}
};

// Replay buffer holds fewer transitions than the requested sample size.
struct InsufficientData : std::runtime_error {
    explicit InsufficientData(const std::string& what) : std::runtime_error(what) {}
};

// One-class fit got fewer positive labels than the configured minimum.
struct InsufficientPositives : std::runtime_error {
    explicit InsufficientPositives(const std::string& what) : std::runtime_error(what) {}
};

// Persisted file has a format version this build does not read.
struct FormatError : std::runtime_error {
    explicit FormatError(const std::string& what) : std::runtime_error(what) {}
};

// Persisted file is truncated or fails its checksum; message names the file.
struct CorruptionError : std::runtime_error {
    explicit CorruptionError(const std::string& what) : std::runtime_error(what) {}
};

// Decision layer asked to pick from an empty option set.
struct NoAvailableOption : std::runtime_error {
    explicit NoAvailableOption(const std::string& what) : std::runtime_error(what) {}
};

} // namespace mpdrive
