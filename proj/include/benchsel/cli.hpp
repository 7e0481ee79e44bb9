#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace benchsel {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitNumerical = 3;

/// Runs one command line (args[0] is the program name). Messages go to `out`
/// and `err`; the return value is the process exit code.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Hex SHA-256 of a file's bytes.
std::string file_digest(const std::string& path);

}  // namespace benchsel
