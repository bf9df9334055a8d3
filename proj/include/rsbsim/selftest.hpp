#pragma once

#include <string>
#include <vector>

namespace rsbsim {

struct SelftestResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

// Misspeculation-source demonstrations: s1 overfill/underfill, s2 direct
// software-stack manipulation (frame pop, push+jmp, pop+jmp), s3 persistence
// of speculatively pushed entries, s4 cross-context reuse. Each demo runs
// under both underfill modes and both kernel-entry refill settings.
// source: "s1" | "s2" | "s3" | "s4" | "all".
std::vector<SelftestResult> run_selftests(const std::string& source);

}  // namespace rsbsim
