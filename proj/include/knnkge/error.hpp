#pragma once
// Error kinds shared across the library. Everything throws knnkge::Error;
// the CLI turns them into nonzero exit codes.

#include <stdexcept>
#include <string>

namespace knnkge {

enum class ErrorKind {
    Io,          // file cannot be opened/read/written
    Parse,       // malformed input line
    Conflict,    // contradictory input (duplicate description, overlapping splits)
    Format,      // bad binary/text artifact (store, checkpoint, vocab)
    Argument,    // precondition violated by caller
    State,       // operation called in the wrong order
    Config,      // incompatible artifacts (dim mismatch, vocab/checkpoint mismatch)
    Training,    // divergence during optimization
    Lookup,      // unknown entity/relation label
    Infeasible,  // requested split cannot be constructed
};

inline const char* to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::Io: return "io";
        case ErrorKind::Parse: return "parse";
        case ErrorKind::Conflict: return "conflict";
        case ErrorKind::Format: return "format";
        case ErrorKind::Argument: return "argument";
        case ErrorKind::State: return "state";
        case ErrorKind::Config: return "config";
        case ErrorKind::Training: return "training";
        case ErrorKind::Lookup: return "lookup";
        case ErrorKind::Infeasible: return "infeasible";
    }
    return "unknown";
}

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
    throw Error(kind, message);
}

}  // namespace knnkge
