#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace plip::cli {

// Exit codes.
inline constexpr int kOk = 0;
inline constexpr int kFailure = 1;  // unexpected exception
inline constexpr int kUsage = 2;
inline constexpr int kConfigError = 3;
inline constexpr int kDataError = 4;
inline constexpr int kNumericError = 5;

/// Runs one subcommand; args[0] is the program name.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int dispatch(int argc, char** argv);

}  // namespace plip::cli
