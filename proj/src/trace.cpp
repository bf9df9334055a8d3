#include "rsbsim/trace.hpp"

#include <sstream>

namespace rsbsim {

const char* trace_kind_name(TraceEvent::Kind k) {
  switch (k) {
    case TraceEvent::Kind::Commit: return "commit";
    case TraceEvent::Kind::SpecIssue: return "spec_issue";
    case TraceEvent::Kind::SpecSquash: return "spec_squash";
    case TraceEvent::Kind::SpecCommit: return "spec_commit";
    case TraceEvent::Kind::RsbPush: return "rsb_push";
    case TraceEvent::Kind::RsbPop: return "rsb_pop";
    case TraceEvent::Kind::Refill: return "refill";
    case TraceEvent::Kind::CacheFill: return "cache_fill";
    case TraceEvent::Kind::CacheFlush: return "cache_flush";
    case TraceEvent::Kind::CtxSwitch: return "ctx_switch";
    case TraceEvent::Kind::ModeSwitch: return "mode_switch";
  }
  return "?";
}

std::string serialize_trace(const std::vector<TraceEvent>& events) {
  std::ostringstream os;
  for (const auto& e : events) {
    os << e.cycle << '\t' << e.context << '\t' << "0x" << std::hex << e.pc << std::dec << '\t'
       << trace_kind_name(e.kind) << '\t' << e.detail << '\n';
  }
  return os.str();
}

}  // namespace rsbsim
