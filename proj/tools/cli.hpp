#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace splitfix::cli {

// Exit codes: 0 success (including MaxIterations, reported in the summary), 1 failed validation
// or I/O error, 2 malformed input or usage, 3 parameter outside a convergence band.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

const std::vector<std::string>& demo_names();

}  // namespace splitfix::cli
