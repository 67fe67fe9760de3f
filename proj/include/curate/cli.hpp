#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace curate {

/// Entry point of the `curate` executable. `args` excludes the program
/// name. Returns the process exit code: 0 ok, 2 config error, 3 stage
/// failure, 4 budget exhausted.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace curate
