#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace zodiac::cli {

enum ExitCode : int {
  kOk = 0,
  kFailed = 1,  // a check (gradcheck threshold, ablation target) did not pass
  kConfigError = 2,
  kDivergence = 3,
  kContractViolation = 4,
};

/// Output directory precedence: --out, then $ZODIAC_OUT_DIR, then "runs".
inline constexpr const char* kOutDirEnv = "ZODIAC_OUT_DIR";

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace zodiac::cli
