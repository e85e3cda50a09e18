#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace dgkit::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

/// Environment variable consulted for the store path when --store is absent.
inline constexpr const char* kStoreEnv = "DGKIT_STORE";

/// Runs one subcommand. args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace dgkit::cli
