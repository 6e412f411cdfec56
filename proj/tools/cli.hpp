#pragma once

#include <iosfwd>

namespace wsds::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitFailure = 2;

/// Runs one `wsds` command line. Usage problems print help to `err` and
/// return 1; library errors print a message and return 2.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace wsds::cli
