#pragma once

// Shared error types and version constants.

#include <stdexcept>
#include <string>

namespace ticketlab {

inline constexpr const char* kToolName = "ticketlab";
inline constexpr const char* kToolVersion = "0.1.0";

// Process exit codes used by the CLI.
enum ExitCode : int {
    kExitOk = 0,
    kExitUsage = 1,
    kExitData = 2,
    kExitTraining = 3,
};

struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor shape disagreement; message names both shapes.
struct ShapeError : Error {
    using Error::Error;
};

// NaN/Inf produced by a numeric op.
struct NumericsError : Error {
    using Error::Error;
};

// Anything wrong with on-disk containers or dataset contents.
struct DataError : Error {
    enum class Kind {
        BadMagic,
        BadVersion,
        Truncated,
        ChecksumMismatch,
        ShapeMismatch,
        LabelOutOfRange,
        SplitOverlap,
        EmptySplit,
        MissingEntry,
        Malformed,
    };
    Kind kind;
    DataError(Kind k, const std::string& msg) : Error(msg), kind(k) {}
};

// Training could not proceed (divergence, bad preconditions on a run).
struct TrainingError : Error {
    using Error::Error;
};

struct UsageError : Error {
    using Error::Error;
};

const char* to_string(DataError::Kind k);

}  // namespace ticketlab
