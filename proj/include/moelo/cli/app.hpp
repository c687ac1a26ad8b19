#pragma once

#include <ostream>

namespace moelo::cli {

// Parses argv, dispatches the subcommand and maps failures to exit codes:
// 0 success, 1 runtime failure, 2 usage or configuration error.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace moelo::cli
