#pragma once

#include <string>
#include <vector>

#include "rsbsim/isa.hpp"

namespace rsbsim {

struct TraceEvent {
  enum class Kind {
    Commit,
    SpecIssue,
    SpecSquash,
    SpecCommit,
    RsbPush,
    RsbPop,
    Refill,
    CacheFill,
    CacheFlush,
    CtxSwitch,
    ModeSwitch,
  };

  std::uint64_t cycle = 0;
  int context = 0;
  Addr pc = 0;
  Kind kind = Kind::Commit;
  std::string detail;

  bool operator==(const TraceEvent&) const = default;
};

const char* trace_kind_name(TraceEvent::Kind k);

// One event per line, tab-separated: cycle ctx pc kind detail.
std::string serialize_trace(const std::vector<TraceEvent>& events);

}  // namespace rsbsim
