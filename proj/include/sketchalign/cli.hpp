#pragma once

#include <string>
#include <vector>

namespace sketchalign {

/// Entry point behind the command-line tool. Returns 0 on success, 2 on usage
/// errors, 1 on runtime failures.
int run_cli(const std::vector<std::string>& args);

}  // namespace sketchalign
