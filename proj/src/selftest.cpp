#include "rsbsim/selftest.hpp"

#include <algorithm>
#include <sstream>

#include "rsbsim/machine.hpp"
#include "rsbsim/pipeline.hpp"
#include "rsbsim/predictors.hpp"

namespace rsbsim {
namespace {

struct Combo {
  UnderfillMode underfill;
  bool refill;
};

const Combo kCombos[] = {
    {UnderfillMode::FallbackIndirect, false},
    {UnderfillMode::FallbackIndirect, true},
    {UnderfillMode::NoPrediction, false},
    {UnderfillMode::NoPrediction, true},
};

std::string combo_name(const Combo& c) {
  std::string s = c.underfill == UnderfillMode::FallbackIndirect ? "fallback" : "no-predict";
  s += c.refill ? "/refill" : "/no-refill";
  return s;
}

MachineConfig combo_config(const Combo& c) {
  MachineConfig cfg;
  cfg.rsb_underfill = c.underfill;
  cfg.defenses.rsb_refill_on_kernel_entry = c.refill;
  return cfg;
}

struct Demo {
  Machine m;
  std::vector<int> ctx;
  explicit Demo(const MachineConfig& cfg) : m(cfg) {}
};

int load_user(Machine& m, const std::string& src, Addr base) {
  ProgramImage img = assemble(src, base);
  Addr page = img.base & ~(kPageSize - 1);
  if (!m.find_page(0, page)) m.map_region(page, img.end() - page, true, false, true, Domain::User, 0);
  return m.spawn_context(img, Mode::User, 0);
}

bool has_event(const RunResult& r, TraceEvent::Kind kind, Addr pc) {
  return std::any_of(r.trace.begin(), r.trace.end(), [&](const TraceEvent& e) {
    return e.kind == kind && e.pc == pc;
  });
}

std::size_t count_kind(const RunResult& r, TraceEvent::Kind kind) {
  return std::size_t(std::count_if(r.trace.begin(), r.trace.end(),
                                   [&](const TraceEvent& e) { return e.kind == kind; }));
}

// S1: overfill wraps the ring (newest entries win); underfill either falls
// back to the BTB (which can hold a stale target) or makes no prediction.
SelftestResult demo_s1(const Combo& c) {
  SelftestResult res{"s1 " + combo_name(c), false, ""};

  ReturnStackBuffer rsb(16, c.underfill);
  for (Addr a = 1; a <= 20; a++) rsb.push(a * 0x100);
  bool ring_ok = true;
  for (Addr a = 20; a >= 5; a--) {
    Prediction p = rsb.predict_pop();
    ring_ok &= p.kind == Prediction::Kind::Address && p.addr == a * 0x100;
  }
  Prediction under = rsb.predict_pop();
  bool under_ok = c.underfill == UnderfillMode::FallbackIndirect
                      ? under.kind == Prediction::Kind::FallbackIndirect
                      : under.kind == Prediction::Kind::NoPrediction;

  // Underfilled ret at a BTB-trained pc: Intel-style fallback speculates to
  // the stale BTB target; the no-prediction mode stalls with no spec events.
  const char* src = R"(
.org 0x1000
main:
  push t1
theret:
  ret
t1:
  push t2
  jmp theret
t2:
  halt
)";
  Demo d(combo_config(c));
  load_user(d.m, src, 0x1000);
  RunResult r = run(d.m, {{0, 50}}, 100000);
  ProgramImage img = assemble(src, 0x1000);
  Addr t1 = img.labels.at("t1");
  bool spec_ok = c.underfill == UnderfillMode::FallbackIndirect
                     ? has_event(r, TraceEvent::Kind::SpecIssue, t1) &&
                           count_kind(r, TraceEvent::Kind::SpecSquash) > 0
                     : count_kind(r, TraceEvent::Kind::SpecIssue) == 0;
  bool arch_ok = r.halt_reason == HaltReason::Halt;

  res.passed = ring_ok && under_ok && spec_ok && arch_ok;
  if (!res.passed) {
    std::ostringstream os;
    os << "ring=" << ring_ok << " underfill=" << under_ok << " spec=" << spec_ok
       << " arch=" << arch_ok;
    res.detail = os.str();
  }
  return res;
}

struct S2Variant {
  const char* label;
  const char* src;
  const char* stale_label;  // where speculation must land
  const char* true_label;   // where execution must commit
};

const S2Variant kS2Variants[] = {
    {"frame-pop", R"(
.org 0x1000
main:
  call f1
after:
  halt
f1:
  call gadget
stale:
  nop
  halt
gadget:
  pop r12
  ret
)",
     "stale", "after"},
    {"push-jmp", R"(
.org 0x1000
main:
  call pollute
stale:
  nop
  halt
pollute:
  pop r12
  push target
  jmp func
func:
  ret
target:
  halt
)",
     "stale", "target"},
    {"pop-jmp", R"(
.org 0x1000
main:
  call f1
ret1:
  halt
f1:
  call f2
ret2:
  nop
  ret
f2:
  pop r12
  jmp r12
)",
     "ret2", "ret2"},
};

// S2: after each software-stack manipulation the RSB and the stack disagree,
// and the ret speculates to the stale RSB entry.
SelftestResult demo_s2(const Combo& c) {
  SelftestResult res{"s2 " + combo_name(c), true, ""};
  for (const S2Variant& v : kS2Variants) {
    Demo d(combo_config(c));
    load_user(d.m, v.src, 0x1000);
    RunResult r = run(d.m, {{0, 100}}, 100000);
    ProgramImage img = assemble(v.src, 0x1000);
    Addr stale = img.labels.at(v.stale_label);
    bool ok = has_event(r, TraceEvent::Kind::SpecIssue, stale) &&
              count_kind(r, TraceEvent::Kind::SpecSquash) > 0 && r.halt_reason == HaltReason::Halt;
    if (!ok) {
      res.passed = false;
      res.detail += std::string(v.label) + " failed; ";
    }
  }
  return res;
}

// S3: a call executed only transiently leaves its return address in the RSB
// after the squash, and the next ret speculates to it.
SelftestResult demo_s3(const Combo& c) {
  const char* src = R"(
.org 0x1000
main:
  mov r5, 1
  cmp r5, 0
  jnz skip
  call tfunc
tret:
  nop
  halt
skip:
  push final
  ret
final:
  halt
tfunc:
  nop
)";
  SelftestResult res{"s3 " + combo_name(c), false, ""};
  Demo d(combo_config(c));
  load_user(d.m, src, 0x1000);
  RunResult r = run(d.m, {{0, 50}}, 100000);
  ProgramImage img = assemble(src, 0x1000);
  Addr tret = img.labels.at("tret");
  bool pushed_transiently = std::any_of(r.trace.begin(), r.trace.end(), [&](const TraceEvent& e) {
    return e.kind == TraceEvent::Kind::RsbPush && e.pc == tret && e.detail == "transient";
  });
  bool predicted_it = has_event(r, TraceEvent::Kind::RsbPop, tret) &&
                      has_event(r, TraceEvent::Kind::SpecIssue, tret);
  res.passed = pushed_transiently && predicted_it && r.halt_reason == HaltReason::Halt;
  if (!res.passed)
    res.detail = "push=" + std::to_string(pushed_transiently) +
                 " predict=" + std::to_string(predicted_it);
  return res;
}

// S4: an entry pushed by one context predicts another context's ret after a
// switch, unless refilling scrubs the ring on the way.
SelftestResult demo_s4(const Combo& c) {
  const char* src_a = R"(
.org 0x1000
main:
  call f
ra:
  nop
  halt
f:
  yield
  ret
)";
  const char* src_b = R"(
.org 0x3000
main2:
  push tgt
  ret
tgt:
  halt
)";
  SelftestResult res{"s4 " + combo_name(c), false, ""};
  Demo d(combo_config(c));
  load_user(d.m, src_a, 0x1000);
  load_user(d.m, src_b, 0x3000);
  RunResult r = run(d.m, {{0, 10}, {1, 10}, {0, 10}}, 100000);
  Addr ra = assemble(src_a, 0x1000).labels.at("ra");
  bool reused = has_event(r, TraceEvent::Kind::RsbPop, ra) &&
                has_event(r, TraceEvent::Kind::SpecIssue, ra);
  bool scrubbed = has_event(r, TraceEvent::Kind::RsbPop, kBenignGadgetAddr);
  res.passed = c.refill ? (scrubbed && !reused) : reused;
  if (!res.passed)
    res.detail = "reused=" + std::to_string(reused) + " scrubbed=" + std::to_string(scrubbed);
  return res;
}

}  // namespace

std::vector<SelftestResult> run_selftests(const std::string& source) {
  std::vector<SelftestResult> out;
  auto want = [&](const char* s) { return source == "all" || source == s; };
  for (const Combo& c : kCombos) {
    if (want("s1")) out.push_back(demo_s1(c));
    if (want("s2")) out.push_back(demo_s2(c));
    if (want("s3")) out.push_back(demo_s3(c));
    if (want("s4")) out.push_back(demo_s4(c));
  }
  return out;
}

}  // namespace rsbsim
