#pragma once

#include <string>
#include <vector>

namespace tvmerge {

struct SubprocessResult {
    int exit_code = -1;
    std::string out;  // child's stdout, captured fully
};

// Runs argv[0] with the given arguments (no shell involved). The child's
// stderr passes through; stdout is captured.
SubprocessResult run_subprocess(const std::vector<std::string>& argv);

}  // namespace tvmerge
