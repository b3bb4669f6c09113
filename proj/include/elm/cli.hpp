#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace elm::cli {

// Exit codes by failure category.
enum ExitCode : int {
  kOk = 0,
  kUsage = 64,
  kConfig = 2,
  kIo = 3,
  kParse = 4,
  kData = 5,
  kBudget = 6,
  kDivergence = 7,
  kContract = 8,
  kInternal = 70,
};

// Runs one command. `args` excludes the program name. Reports go to `out`,
// categorized error messages to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace elm::cli
