#pragma once

#include <string>
#include <vector>

#include "jmt/common.hpp"

namespace jmt {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

// Gradient checks for every differentiable op and layer, attention and
// softmax properties, the physiological CNN shape trace, CCC identities, and
// an end-to-end fusion gradient check at small dims. Runs in seconds.
std::vector<CheckResult> run_verification(uint64_t seed = 42);

}  // namespace jmt
