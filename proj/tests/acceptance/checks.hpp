#pragma once

// Result of one acceptance criterion; holds no library types.

#include <string>

namespace acceptance {

struct CheckResult {
  bool pass = false;
  std::string detail;
};

// Built against the 64-bit library.
CheckResult gradient_correctness();
CheckResult ablation_identities();

}  // namespace acceptance
