#include "rsbsim/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <optional>
#include <string>
#include <utility>

#include "rsbsim/defenses.hpp"

namespace rsbsim {
namespace {

FaultKind fault_for(AccessStatus s) {
  switch (s) {
    case AccessStatus::Ok: return FaultKind::None;
    case AccessStatus::Unmapped: return FaultKind::Unmapped;
    case AccessStatus::NoPerm: return FaultKind::Permission;
    case AccessStatus::Privileged: return FaultKind::Privileged;
  }
  return FaultKind::None;
}

void fault(Context& c, FaultKind k) {
  c.fault = k;
  c.halted = true;
}

Word operand_value(const Context& c, const Operand& op) {
  switch (op.kind) {
    case Operand::Kind::Reg: return c.regs[op.reg];
    case Operand::Kind::Imm:
    case Operand::Kind::Label: return static_cast<Word>(op.value);
    case Operand::Kind::Mem: return 0;
  }
  return 0;
}

std::uint64_t sources_ready(const Context& c, const Instruction& ins) {
  std::uint64_t r = 0;
  for (const auto& op : ins.operands)
    if (op.kind == Operand::Kind::Reg || op.kind == Operand::Kind::Mem)
      r = std::max(r, c.reg_ready[op.reg]);
  switch (ins.op) {
    case Opcode::Jz:
    case Opcode::Jnz:
      r = std::max(r, c.zf_ready);
      break;
    case Opcode::Ret:
    case Opcode::Push:
    case Opcode::Pop:
    case Opcode::Call:
      r = std::max(r, c.reg_ready[kStackPointer]);
      break;
    default:
      break;
  }
  return r;
}

Word alu(Opcode op, Word a, Word b) {
  switch (op) {
    case Opcode::Add: return a + b;
    case Opcode::Sub: return a - b;
    case Opcode::And: return a & b;
    case Opcode::Shl: return a << (b & 63);
    default: return b;  // Mov
  }
}

bool is_barrier(Opcode op) {
  switch (op) {
    case Opcode::Lfence:
    case Opcode::Cpuid:
    case Opcode::Syscall:
    case Opcode::Sysret:
    case Opcode::Eenter:
    case Opcode::Eexit:
    case Opcode::Yield:
    case Opcode::Halt:
      return true;
    default:
      return false;
  }
}

BtbOwner owner_of(const Context& c) { return BtbOwner{c.id, c.mode}; }
BtbGating gating_of(const Machine& m) { return BtbGating{m.defenses.ibrs, m.defenses.stibp}; }

// -- committed memory ---------------------------------------------------------

bool committed_check(Machine& m, Context& c, Addr a, AccessKind k) {
  for (Addr probe : {a, a + kWordSize - 1}) {
    AccessDecision d = m.check_access(c.address_space, c.mode, probe, k);
    if (d.status != AccessStatus::Ok) {
      fault(c, fault_for(d.status));
      return false;
    }
  }
  return true;
}

struct MemRead {
  Word value = 0;
  unsigned latency = 1;
};

std::optional<MemRead> committed_read_word(Machine& m, Context& c, Addr a) {
  if (!committed_check(m, c, a, AccessKind::Read)) return std::nullopt;
  MemRead r;
  r.value = m.read_word(c.address_space, a);
  AccessResult ar = m.timed_access(a);
  if (!ar.hit) m.emit(TraceEvent::Kind::CacheFill, a);
  r.latency = ar.latency;
  return r;
}

bool committed_write_word(Machine& m, Context& c, Addr a, Word v) {
  if (!committed_check(m, c, a, AccessKind::Write)) return false;
  m.write_word(c.address_space, a, v);
  AccessResult ar = m.timed_access(a);
  if (!ar.hit) m.emit(TraceEvent::Kind::CacheFill, a);
  return true;
}

// -- speculation frame --------------------------------------------------------

struct SpecFrame {
  std::array<Word, kNumRegisters> regs{};
  std::array<std::uint64_t, kNumRegisters> reg_ready{};
  bool zf = false;
  std::uint64_t zf_ready = 0;
  std::vector<std::pair<Addr, std::uint8_t>> store_buffer;
  FaultKind suppressed = FaultKind::None;
  // A nested transient ret followed an RSB prediction that disagrees with the
  // architectural return address; the frame may only commit by replay.
  bool unverified = false;
};

void note_suppressed(SpecFrame& f, FaultKind k) {
  if (f.suppressed == FaultKind::None) f.suppressed = k;
}

// Transient fetch: no faulting, just refusal. KPTI-hidden kernel pages are
// invisible to user-mode speculation; SMEP gates kernel-mode speculation into
// user pages at every transient pc.
const Instruction* transient_fetch(Machine& m, const Context& c, Addr a) {
  const PageDescriptor* p = m.find_page(c.address_space, a);
  if (!p || !p->exec) return nullptr;
  if (p->domain == Domain::Kernel && c.mode == Mode::User && !p->mapped_in_user) return nullptr;
  if (m.defenses.smep && c.mode == Mode::Kernel && p->domain == Domain::User) return nullptr;
  return m.fetch(c.address_space, a);
}

MemRead transient_read_word(Machine& m, Context& c, SpecFrame& f, Addr a) {
  AccessDecision d = m.check_access(c.address_space, c.mode, a, AccessKind::Read);
  bool blocked;
  if (d.status == AccessStatus::Ok) {
    blocked = m.defenses.smap && c.mode == Mode::Kernel && d.page->domain == Domain::User;
    if (blocked) note_suppressed(f, FaultKind::Permission);
  } else {
    note_suppressed(f, fault_for(d.status));
    // Unpatched machines forward privileged data to dependent transient ops.
    blocked = d.status != AccessStatus::Privileged || m.defenses.meltdown_patched;
  }
  if (blocked) return MemRead{0, 1};

  MemRead r;
  for (unsigned i = 0; i < kWordSize; i++) {
    std::uint8_t byte = 0;
    bool forwarded = false;
    for (auto it = f.store_buffer.rbegin(); it != f.store_buffer.rend(); ++it) {
      if (it->first == a + i) {
        byte = it->second;
        forwarded = true;
        break;
      }
    }
    if (!forwarded) byte = m.read_byte(c.address_space, a + i);
    r.value |= static_cast<Word>(byte) << (8 * i);
  }
  AccessResult ar = m.timed_access(a);
  if (!ar.hit) m.emit(TraceEvent::Kind::CacheFill, a);
  r.latency = ar.latency;
  return r;
}

void transient_write_word(Machine& m, Context& c, SpecFrame& f, Addr a, Word v) {
  AccessDecision d = m.check_access(c.address_space, c.mode, a, AccessKind::Write);
  bool blocked = d.status != AccessStatus::Ok ||
                 (m.defenses.smap && c.mode == Mode::Kernel && d.page->domain == Domain::User);
  if (blocked) {
    note_suppressed(f, d.status == AccessStatus::Ok ? FaultKind::Permission : fault_for(d.status));
    return;
  }
  for (unsigned i = 0; i < kWordSize; i++)
    f.store_buffer.emplace_back(a + i, static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
  AccessResult ar = m.timed_access(a);
  if (!ar.hit) m.emit(TraceEvent::Kind::CacheFill, a);
}

// Executes one transient instruction at tpc; registers mutate in place (the
// checkpoint lives in the frame), stores go to the buffer.
void exec_transient(Machine& m, Context& c, SpecFrame& f, std::uint64_t tclock, Addr& tpc,
                    const Instruction& ins, bool& stop) {
  const auto& ops = ins.operands;
  switch (ins.op) {
    case Opcode::Mov:
    case Opcode::Add:
    case Opcode::Sub:
    case Opcode::And:
    case Opcode::Shl: {
      int rd = ops[0].reg;
      c.regs[rd] = alu(ins.op, c.regs[rd], operand_value(c, ops[1]));
      c.reg_ready[rd] = tclock + 1;
      tpc++;
      break;
    }
    case Opcode::Cmp:
      c.zf = c.regs[ops[0].reg] == operand_value(c, ops[1]);
      c.zf_ready = tclock + 1;
      tpc++;
      break;
    case Opcode::Load: {
      int rd = ops[0].reg;
      Addr a = c.regs[ops[1].reg] + static_cast<Addr>(ops[1].value);
      MemRead r = transient_read_word(m, c, f, a);
      c.regs[rd] = r.value;
      c.reg_ready[rd] = tclock + r.latency;
      tpc++;
      break;
    }
    case Opcode::Store: {
      Addr a = c.regs[ops[0].reg] + static_cast<Addr>(ops[0].value);
      transient_write_word(m, c, f, a, c.regs[ops[1].reg]);
      tpc++;
      break;
    }
    case Opcode::Push:
      c.regs[kStackPointer] -= kWordSize;
      c.reg_ready[kStackPointer] = tclock + 1;
      transient_write_word(m, c, f, c.regs[kStackPointer], operand_value(c, ops[0]));
      tpc++;
      break;
    case Opcode::Pop: {
      int rd = ops[0].reg;
      MemRead r = transient_read_word(m, c, f, c.regs[kStackPointer]);
      c.regs[kStackPointer] += kWordSize;
      c.reg_ready[kStackPointer] = tclock + 1;
      c.regs[rd] = r.value;
      c.reg_ready[rd] = tclock + r.latency;
      tpc++;
      break;
    }
    case Opcode::Clflush: {
      Addr a = c.regs[ops[0].reg] + static_cast<Addr>(ops[0].value);
      m.cache.flush_line(a);
      m.emit(TraceEvent::Kind::CacheFlush, a, "transient");
      tpc++;
      break;
    }
    case Opcode::Rdtscp: {
      int rd = ops[0].reg;
      c.regs[rd] = tclock;
      c.reg_ready[rd] = tclock + 1;
      tpc++;
      break;
    }
    case Opcode::Nop:
      tpc++;
      break;
    case Opcode::Jmp:
      tpc = ops[0].kind == Operand::Kind::Reg ? c.regs[ops[0].reg]
                                              : static_cast<Addr>(ops[0].value);
      break;
    case Opcode::Jz:
    case Opcode::Jnz: {
      bool taken = ins.op == Opcode::Jz ? c.zf : !c.zf;
      tpc = taken ? static_cast<Addr>(ops[0].value) : tpc + 1;
      break;
    }
    case Opcode::Call: {
      Addr ret_addr = tpc + 1;
      c.regs[kStackPointer] -= kWordSize;
      c.reg_ready[kStackPointer] = tclock + 1;
      transient_write_word(m, c, f, c.regs[kStackPointer], ret_addr);
      // Speculatively pushed RSB entries are not rolled back on squash.
      m.rsb.push(ret_addr);
      m.emit(TraceEvent::Kind::RsbPush, ret_addr, "transient");
      tpc = ops[0].kind == Operand::Kind::Reg ? c.regs[ops[0].reg]
                                              : static_cast<Addr>(ops[0].value);
      break;
    }
    case Opcode::Ret: {
      Prediction p = m.rsb.predict_pop();
      if (p.kind == Prediction::Kind::Address) {
        m.emit(TraceEvent::Kind::RsbPop, p.addr, "transient");
        MemRead r = transient_read_word(m, c, f, c.regs[kStackPointer]);
        if (r.value != p.addr) f.unverified = true;
        c.regs[kStackPointer] += kWordSize;
        c.reg_ready[kStackPointer] = tclock + 1;
        tpc = p.addr;
      } else {
        stop = true;
      }
      break;
    }
    default:
      stop = true;
      break;
  }
}

// One speculation episode, resolved inline. Cache and RSB side effects
// survive regardless of the outcome; registers, flags, and the store buffer
// do not survive a squash. Issuance is capped by the slice's remaining
// committed-instruction budget so a committing episode never retires more
// than the schedule allows; returns the number of instructions committed.
unsigned run_episode(Machine& m, Context& c, Addr predicted_pc, Addr actual_pc,
                     std::uint64_t resolve_at, unsigned budget_left) {
  SpecFrame f;
  f.regs = c.regs;
  f.reg_ready = c.reg_ready;
  f.zf = c.zf;
  f.zf_ready = c.zf_ready;

  std::uint64_t tclock = m.clock;
  Addr tpc = predicted_pc;
  unsigned issued = 0;
  bool stop = false;
  unsigned limit = std::min(m.config().rob_limit, budget_left);
  while (!stop && tclock < resolve_at && issued < limit) {
    const Instruction* ins = transient_fetch(m, c, tpc);
    if (!ins || is_barrier(ins->op)) break;
    std::uint64_t ready = sources_ready(c, *ins);
    if (ready > tclock) tclock = ready;
    if (tclock >= resolve_at) break;
    m.clock = tclock;
    m.emit(TraceEvent::Kind::SpecIssue, tpc, mnemonic(ins->op));
    exec_transient(m, c, f, tclock, tpc, *ins, stop);
    issued++;
    tclock++;
  }
  m.clock = std::max(m.clock, resolve_at);

  auto restore = [&] {
    c.regs = f.regs;
    c.reg_ready = f.reg_ready;
    c.zf = f.zf;
    c.zf_ready = f.zf_ready;
  };
  if (predicted_pc != actual_pc) {
    restore();
    c.pc = actual_pc;
    m.emit(TraceEvent::Kind::SpecSquash, actual_pc, std::to_string(issued) + " squashed");
    return 0;
  }
  if (f.suppressed != FaultKind::None || f.unverified) {
    // Correct-path speculation hit an access the transient machinery refused
    // (or followed an unverified nested return prediction). Rewind and let
    // the committed executor replay the path so architectural semantics apply.
    restore();
    c.pc = predicted_pc;
    m.emit(TraceEvent::Kind::SpecCommit, predicted_pc, "replay");
    return 0;
  }
  for (const auto& [a, b] : f.store_buffer) m.write_byte(c.address_space, a, b);
  c.pc = tpc;
  m.emit(TraceEvent::Kind::SpecCommit, tpc, std::to_string(issued) + " committed");
  return issued;
}

// -- committed step -----------------------------------------------------------

const Instruction* committed_fetch(Machine& m, Context& c) {
  AccessDecision d = m.check_access(c.address_space, c.mode, c.pc, AccessKind::Fetch);
  if (d.status == AccessStatus::Ok && m.defenses.smep && c.mode == Mode::Kernel &&
      d.page->domain == Domain::User) {
    fault(c, FaultKind::Permission);
    return nullptr;
  }
  if (d.status != AccessStatus::Ok) {
    fault(c, fault_for(d.status));
    return nullptr;
  }
  const Instruction* ins = m.fetch(c.address_space, c.pc);
  if (!ins) fault(c, FaultKind::Unmapped);
  return ins;
}

void drain(Machine& m, Context& c) {
  for (auto r : c.reg_ready) m.clock = std::max(m.clock, r);
  m.clock = std::max(m.clock, c.zf_ready);
}

// Returns the number of instructions committed (the instruction itself plus
// any speculatively executed path that resolved as correct).
unsigned step_committed(Machine& m, Context& c, bool& yielded, unsigned budget_left) {
  const Instruction* ip = committed_fetch(m, c);
  if (!ip) return 1;
  const Instruction& ins = *ip;
  const auto& ops = ins.operands;
  m.emit(TraceEvent::Kind::Commit, c.pc, mnemonic(ins.op));
  unsigned extra = 0;
  const unsigned window = budget_left - 1;

  switch (ins.op) {
    case Opcode::Mov:
    case Opcode::Add:
    case Opcode::Sub:
    case Opcode::And:
    case Opcode::Shl: {
      int rd = ops[0].reg;
      c.regs[rd] = alu(ins.op, c.regs[rd], operand_value(c, ops[1]));
      c.reg_ready[rd] = std::max(m.clock, sources_ready(c, ins)) + 1;
      m.clock++;
      c.pc++;
      break;
    }
    case Opcode::Cmp:
      c.zf = c.regs[ops[0].reg] == operand_value(c, ops[1]);
      c.zf_ready = std::max(m.clock, sources_ready(c, ins)) + 1;
      m.clock++;
      c.pc++;
      break;
    case Opcode::Load: {
      int rd = ops[0].reg;
      Addr a = c.regs[ops[1].reg] + static_cast<Addr>(ops[1].value);
      auto r = committed_read_word(m, c, a);
      if (!r) return 1;
      c.regs[rd] = r->value;
      c.reg_ready[rd] = std::max(m.clock, sources_ready(c, ins)) + r->latency;
      m.clock++;
      c.pc++;
      break;
    }
    case Opcode::Store: {
      Addr a = c.regs[ops[0].reg] + static_cast<Addr>(ops[0].value);
      if (!committed_write_word(m, c, a, c.regs[ops[1].reg])) return 1;
      m.clock++;
      c.pc++;
      break;
    }
    case Opcode::Push:
      c.regs[kStackPointer] -= kWordSize;
      c.reg_ready[kStackPointer] = m.clock + 1;
      if (!committed_write_word(m, c, c.regs[kStackPointer], operand_value(c, ops[0]))) return 1;
      m.clock++;
      c.pc++;
      break;
    case Opcode::Pop: {
      int rd = ops[0].reg;
      auto r = committed_read_word(m, c, c.regs[kStackPointer]);
      if (!r) return 1;
      c.regs[rd] = r->value;
      c.reg_ready[rd] = std::max(m.clock, c.reg_ready[kStackPointer]) + r->latency;
      c.regs[kStackPointer] += kWordSize;
      c.reg_ready[kStackPointer] = m.clock + 1;
      m.clock++;
      c.pc++;
      break;
    }
    case Opcode::Clflush: {
      Addr a = c.regs[ops[0].reg] + static_cast<Addr>(ops[0].value);
      m.cache.flush_line(a);
      m.emit(TraceEvent::Kind::CacheFlush, a);
      m.clock++;
      c.pc++;
      break;
    }
    case Opcode::Rdtscp: {
      int rd = ops[0].reg;
      c.regs[rd] = m.clock;
      c.reg_ready[rd] = m.clock + 1;
      m.clock++;
      c.pc++;
      break;
    }
    case Opcode::Lfence:
    case Opcode::Cpuid:
      // Serializing: wait out every outstanding completion.
      drain(m, c);
      m.clock++;
      c.pc++;
      break;
    case Opcode::Nop:
      m.clock++;
      c.pc++;
      break;
    case Opcode::Jmp: {
      if (ops[0].kind != Operand::Kind::Reg) {
        c.pc = static_cast<Addr>(ops[0].value);
        m.clock++;
        break;
      }
      int r = ops[0].reg;
      Addr target = c.regs[r];
      std::uint64_t resolve_at = std::max(c.reg_ready[r], m.clock + 3);
      auto pred = m.btb.lookup(c.pc, owner_of(c), gating_of(m));
      Addr site = c.pc;
      m.clock++;
      if (pred) {
        extra = run_episode(m, c, *pred, target, std::max(resolve_at, m.clock), window);
      } else {
        m.clock = std::max(m.clock, resolve_at);
        c.pc = target;
      }
      m.btb.train(site, target, owner_of(c));
      break;
    }
    case Opcode::Jz:
    case Opcode::Jnz: {
      bool taken = ins.op == Opcode::Jz ? c.zf : !c.zf;
      Addr target = static_cast<Addr>(ops[0].value);
      Addr fall = c.pc + 1;
      bool predicted_taken = m.dirpred.predict(c.pc);
      std::uint64_t resolve_at = std::max(c.zf_ready, m.clock + 3);
      Addr site = c.pc;
      m.clock++;
      extra = run_episode(m, c, predicted_taken ? target : fall, taken ? target : fall,
                          std::max(resolve_at, m.clock), window);
      m.dirpred.train(site, taken);
      break;
    }
    case Opcode::Call: {
      Addr ret_addr = c.pc + 1;
      c.regs[kStackPointer] -= kWordSize;
      c.reg_ready[kStackPointer] = m.clock + 1;
      if (!committed_write_word(m, c, c.regs[kStackPointer], ret_addr)) return 1;
      m.rsb.push(ret_addr);
      m.emit(TraceEvent::Kind::RsbPush, ret_addr);
      if (ops[0].kind != Operand::Kind::Reg) {
        c.pc = static_cast<Addr>(ops[0].value);
        m.clock++;
        break;
      }
      int r = ops[0].reg;
      Addr target = c.regs[r];
      std::uint64_t resolve_at = std::max(c.reg_ready[r], m.clock + 3);
      auto pred = m.btb.lookup(c.pc, owner_of(c), gating_of(m));
      Addr site = c.pc;
      m.clock++;
      if (pred) {
        extra = run_episode(m, c, *pred, target, std::max(resolve_at, m.clock), window);
      } else {
        m.clock = std::max(m.clock, resolve_at);
        c.pc = target;
      }
      m.btb.train(site, target, owner_of(c));
      break;
    }
    case Opcode::Ret: {
      auto r = committed_read_word(m, c, c.regs[kStackPointer]);
      if (!r) return 1;
      Addr target = r->value;
      c.regs[kStackPointer] += kWordSize;
      c.reg_ready[kStackPointer] = m.clock + 1;
      // The window: the return address is architectural only once its stack
      // line arrives.
      std::uint64_t resolve_at = m.clock + r->latency;
      Addr site = c.pc;
      Prediction p = m.rsb.predict_pop();
      m.clock++;
      resolve_at = std::max(resolve_at, m.clock);
      if (p.kind == Prediction::Kind::Address) {
        m.emit(TraceEvent::Kind::RsbPop, p.addr);
        extra = run_episode(m, c, p.addr, target, resolve_at, window);
      } else if (p.kind == Prediction::Kind::FallbackIndirect) {
        m.emit(TraceEvent::Kind::RsbPop, site, "underfill-fallback");
        auto pred = m.btb.lookup(site, owner_of(c), gating_of(m));
        if (pred) {
          extra = run_episode(m, c, *pred, target, resolve_at, window);
        } else {
          m.clock = std::max(m.clock, resolve_at);
          c.pc = target;
        }
      } else {
        m.emit(TraceEvent::Kind::RsbPop, site, "underfill-stall");
        m.clock = std::max(m.clock, resolve_at);
        c.pc = target;
      }
      m.btb.train(site, target, owner_of(c));
      break;
    }
    case Opcode::Syscall: {
      auto handler = m.syscall_handler(static_cast<int>(ops[0].value));
      if (!handler) {
        fault(c, FaultKind::BadSyscall);
        return 1;
      }
      c.saved.push_back({c.pc + 1, c.mode, c.regs[kStackPointer], true});
      c.mode = Mode::Kernel;
      m.emit(TraceEvent::Kind::ModeSwitch, *handler, "syscall");
      on_privilege_transition(m, TransitionKind::KernelEntry, c.id);
      c.regs[kStackPointer] = c.kernel_stack_top;
      c.reg_ready[kStackPointer] = m.clock + 1;
      c.pc = *handler;
      m.clock++;
      break;
    }
    case Opcode::Sysret: {
      if (c.mode != Mode::Kernel || c.saved.empty()) {
        fault(c, FaultKind::Permission);
        return 1;
      }
      Context::SavedState s = c.saved.back();
      c.saved.pop_back();
      c.mode = s.prior_mode;
      c.pc = s.return_pc;
      if (s.restore_sp) {
        c.regs[kStackPointer] = s.saved_sp;
        c.reg_ready[kStackPointer] = m.clock + 1;
      }
      m.emit(TraceEvent::Kind::ModeSwitch, s.return_pc, "sysret");
      m.clock++;
      break;
    }
    case Opcode::Eenter: {
      Addr target = operand_value(c, ops[0]);
      c.saved.push_back({c.pc + 1, c.mode, c.regs[kStackPointer], false});
      c.mode = Mode::Enclave;
      m.emit(TraceEvent::Kind::ModeSwitch, target, "eenter");
      on_privilege_transition(m, TransitionKind::EnclaveEntry, c.id);
      c.pc = target;
      m.clock++;
      break;
    }
    case Opcode::Eexit: {
      if (c.mode != Mode::Enclave || c.saved.empty()) {
        fault(c, FaultKind::Permission);
        return 1;
      }
      Context::SavedState s = c.saved.back();
      c.saved.pop_back();
      c.mode = s.prior_mode;
      c.pc = s.return_pc;
      m.emit(TraceEvent::Kind::ModeSwitch, s.return_pc, "eexit");
      m.clock++;
      break;
    }
    case Opcode::Yield:
      c.pc++;
      m.clock++;
      yielded = true;
      break;
    case Opcode::Halt:
      c.halted = true;
      m.clock++;
      break;
  }
  return 1 + extra;
}

// -- reference interpreter ----------------------------------------------------

bool reference_read_word(Machine& m, Context& c, Addr a, Word& out) {
  if (!committed_check(m, c, a, AccessKind::Read)) return false;
  out = m.read_word(c.address_space, a);
  char buf[32];
  std::snprintf(buf, sizeof buf, "load 0x%llx", static_cast<unsigned long long>(a));
  m.emit(TraceEvent::Kind::Commit, c.pc, buf);
  return true;
}

bool reference_write_word(Machine& m, Context& c, Addr a, Word v) {
  if (!committed_check(m, c, a, AccessKind::Write)) return false;
  m.write_word(c.address_space, a, v);
  return true;
}

unsigned step_reference(Machine& m, Context& c, bool& yielded, unsigned) {
  const Instruction* ip = committed_fetch(m, c);
  if (!ip) return 1;
  const Instruction& ins = *ip;
  const auto& ops = ins.operands;
  m.clock++;

  switch (ins.op) {
    case Opcode::Mov:
    case Opcode::Add:
    case Opcode::Sub:
    case Opcode::And:
    case Opcode::Shl:
      c.regs[ops[0].reg] = alu(ins.op, c.regs[ops[0].reg], operand_value(c, ops[1]));
      c.pc++;
      break;
    case Opcode::Cmp:
      c.zf = c.regs[ops[0].reg] == operand_value(c, ops[1]);
      c.pc++;
      break;
    case Opcode::Load: {
      Word v = 0;
      if (!reference_read_word(m, c, c.regs[ops[1].reg] + static_cast<Addr>(ops[1].value), v))
        return 1;
      c.regs[ops[0].reg] = v;
      c.pc++;
      break;
    }
    case Opcode::Store:
      if (!reference_write_word(m, c, c.regs[ops[0].reg] + static_cast<Addr>(ops[0].value),
                                c.regs[ops[1].reg]))
        return 1;
      c.pc++;
      break;
    case Opcode::Push:
      c.regs[kStackPointer] -= kWordSize;
      if (!reference_write_word(m, c, c.regs[kStackPointer], operand_value(c, ops[0]))) return 1;
      c.pc++;
      break;
    case Opcode::Pop: {
      Word v = 0;
      if (!reference_read_word(m, c, c.regs[kStackPointer], v)) return 1;
      c.regs[ops[0].reg] = v;
      c.regs[kStackPointer] += kWordSize;
      c.pc++;
      break;
    }
    case Opcode::Clflush:
    case Opcode::Lfence:
    case Opcode::Cpuid:
    case Opcode::Nop:
      c.pc++;
      break;
    case Opcode::Rdtscp:
      c.regs[ops[0].reg] = m.clock - 1;
      c.pc++;
      break;
    case Opcode::Jmp:
      c.pc = ops[0].kind == Operand::Kind::Reg ? c.regs[ops[0].reg]
                                               : static_cast<Addr>(ops[0].value);
      break;
    case Opcode::Jz:
    case Opcode::Jnz: {
      bool taken = ins.op == Opcode::Jz ? c.zf : !c.zf;
      c.pc = taken ? static_cast<Addr>(ops[0].value) : c.pc + 1;
      break;
    }
    case Opcode::Call: {
      Addr ret_addr = c.pc + 1;
      c.regs[kStackPointer] -= kWordSize;
      if (!reference_write_word(m, c, c.regs[kStackPointer], ret_addr)) return 1;
      c.pc = ops[0].kind == Operand::Kind::Reg ? c.regs[ops[0].reg]
                                               : static_cast<Addr>(ops[0].value);
      break;
    }
    case Opcode::Ret: {
      Word v = 0;
      if (!reference_read_word(m, c, c.regs[kStackPointer], v)) return 1;
      c.regs[kStackPointer] += kWordSize;
      c.pc = v;
      break;
    }
    case Opcode::Syscall: {
      auto handler = m.syscall_handler(static_cast<int>(ops[0].value));
      if (!handler) {
        fault(c, FaultKind::BadSyscall);
        return 1;
      }
      c.saved.push_back({c.pc + 1, c.mode, c.regs[kStackPointer], true});
      c.mode = Mode::Kernel;
      c.regs[kStackPointer] = c.kernel_stack_top;
      c.pc = *handler;
      break;
    }
    case Opcode::Sysret: {
      if (c.mode != Mode::Kernel || c.saved.empty()) {
        fault(c, FaultKind::Permission);
        return 1;
      }
      Context::SavedState s = c.saved.back();
      c.saved.pop_back();
      c.mode = s.prior_mode;
      c.pc = s.return_pc;
      if (s.restore_sp) c.regs[kStackPointer] = s.saved_sp;
      break;
    }
    case Opcode::Eenter:
      c.saved.push_back({c.pc + 1, c.mode, c.regs[kStackPointer], false});
      c.mode = Mode::Enclave;
      c.pc = operand_value(c, ops[0]);
      break;
    case Opcode::Eexit: {
      if (c.mode != Mode::Enclave || c.saved.empty()) {
        fault(c, FaultKind::Permission);
        return 1;
      }
      Context::SavedState s = c.saved.back();
      c.saved.pop_back();
      c.mode = s.prior_mode;
      c.pc = s.return_pc;
      break;
    }
    case Opcode::Yield:
      c.pc++;
      yielded = true;
      break;
    case Opcode::Halt:
      c.halted = true;
      break;
  }
  return 1;
}

using StepFn = unsigned (*)(Machine&, Context&, bool&, unsigned);

RunResult drive(Machine& m, const Schedule& schedule, std::uint64_t max_cycles, StepFn step) {
  RunResult res;
  m.trace_sink = &res.trace;
  bool out_of_cycles = false;
  for (const auto& slice : schedule) {
    if (m.clock >= max_cycles) {
      out_of_cycles = true;
      break;
    }
    if (slice.context_id != m.current()) m.context_switch(slice.context_id);
    Context& c = m.context(slice.context_id);
    for (unsigned i = 0; i < slice.budget && !c.halted;) {
      if (m.clock >= max_cycles) {
        out_of_cycles = true;
        break;
      }
      bool yielded = false;
      unsigned committed = step(m, c, yielded, slice.budget - i);
      i += committed ? committed : 1;
      if (yielded) break;
    }
    if (out_of_cycles) break;
  }
  m.trace_sink = nullptr;
  res.cycles = m.clock;
  res.final_snapshot = m.snapshot_arch_state();
  for (std::size_t i = 0; i < m.context_count(); i++) {
    FaultKind f = m.context(static_cast<int>(i)).fault;
    if (f != FaultKind::None) {
      res.fault = f;
      break;
    }
  }
  res.halt_reason = out_of_cycles              ? HaltReason::MaxCycles
                    : res.fault != FaultKind::None ? HaltReason::Fault
                                                   : HaltReason::Halt;
  return res;
}

}  // namespace

RunResult run(Machine& machine, const Schedule& schedule, std::uint64_t max_cycles) {
  return drive(machine, schedule, max_cycles, step_committed);
}

RunResult reference_run(Machine& machine, const Schedule& schedule, std::uint64_t max_cycles) {
  return drive(machine, schedule, max_cycles, step_reference);
}

}  // namespace rsbsim
