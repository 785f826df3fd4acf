#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace lidpm::cli {

enum ExitCode : int {
  kOk = 0,
  kFailure = 1,
  kUsage = 2,
  kDataError = 3,
  kNumericalError = 4,
};

// Runs the command line (args exclude the program name). Never throws.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Hex SHA-1 of the git blob object wrapping content ("blob <n>\0" + content).
std::string git_blob_sha1(const std::string& content);

}  // namespace lidpm::cli
