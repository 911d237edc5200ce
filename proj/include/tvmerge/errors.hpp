#pragma once

#include <stdexcept>
#include <string>

namespace tvmerge {

// Exit codes shared by the CLI and the machine-readable error output.
enum ExitCode : int {
    kExitOk         = 0,
    kExitValidation = 2,
    kExitIo         = 3,
    kExitEvaluator  = 4,
    kExitInternal   = 5,
};

struct ValidationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct EvaluatorError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct InternalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline int exit_code_for(const std::exception& e) {
    if (dynamic_cast<const ValidationError*>(&e)) return kExitValidation;
    if (dynamic_cast<const IoError*>(&e)) return kExitIo;
    if (dynamic_cast<const EvaluatorError*>(&e)) return kExitEvaluator;
    return kExitInternal;
}

inline const char* error_kind(int exit_code) {
    switch (exit_code) {
        case kExitValidation: return "validation";
        case kExitIo: return "io";
        case kExitEvaluator: return "evaluator";
        default: return "internal";
    }
}

}  // namespace tvmerge
