#pragma once

// Command-line front end: verbs gen-data, gen-pretrain-corpus, pretrain,
// train, eval, ablate and render. Options come from `--key value` arguments
// and from an optional key=value file named by --config; command-line values
// win. The fully resolved configuration is printed before a verb runs.

#include <iosfwd>
#include <string>
#include <vector>

namespace itrl::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitDomainError = 1;
inline constexpr int kExitUsageError = 2;

// `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace itrl::cli
