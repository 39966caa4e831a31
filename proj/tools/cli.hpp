#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace dglight::cli {

// Runs one subcommand; returns the process exit code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace dglight::cli
