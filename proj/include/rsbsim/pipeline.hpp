#pragma once

#include <cstdint>
#include <vector>

#include "rsbsim/machine.hpp"
#include "rsbsim/trace.hpp"

namespace rsbsim {

struct ScheduleSlice {
  int context_id = 0;
  unsigned budget = 0;  // committed-instruction budget; `yield` ends a slice early
};
using Schedule = std::vector<ScheduleSlice>;

enum class HaltReason { Halt, MaxCycles, Fault };

struct RunResult {
  HaltReason halt_reason = HaltReason::Halt;
  FaultKind fault = FaultKind::None;
  std::uint64_t cycles = 0;
  std::vector<TraceEvent> trace;
  ArchSnapshot final_snapshot;
};

// Speculative execution: committed instructions run in order; predicted
// returns/branches open a (single, non-nested) speculation frame whose
// transient instructions execute against checkpointed register state. On
// resolve, the frame commits or squashes; cache and RSB side effects are
// kept either way.
RunResult run(Machine& machine, const Schedule& schedule, std::uint64_t max_cycles);

// Architectural oracle: identical schedule semantics with no speculation, no
// cache timing (flat 1-cycle memory), and full permission enforcement at
// execute. Deliberately a separate interpreter from run().
RunResult reference_run(Machine& machine, const Schedule& schedule, std::uint64_t max_cycles);

}  // namespace rsbsim
