#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace edgediff::cli {

/// Runs one command line (without the program name). Exit codes: 0 success,
/// 1 validation or usage error, 2 I/O error.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace edgediff::cli
