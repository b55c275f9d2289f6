#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace dualmim {

/// Entry point of the command-line tool. `args` excludes the program name.
/// Returns the process exit status: 0 on success, 1 on an error or a failed
/// internal threshold, CLI11's code for usage errors.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace dualmim
