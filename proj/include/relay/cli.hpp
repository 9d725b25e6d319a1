#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace relay {

/// Runs one subcommand. Exit codes: 0 success, 1 domain error, 2 usage error.
int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
/// `args` excludes the program name.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace relay
