#pragma once

#include <ostream>

namespace nplda {

inline constexpr const char* kToolkitVersion = "0.1.0";

/// Entry point of the `nplda` command line tool. Returns the process exit
/// code; 0 iff the command succeeded.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace nplda
