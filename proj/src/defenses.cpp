#include "rsbsim/defenses.hpp"

#include <set>
#include <sstream>
#include <stdexcept>

#include "rsbsim/machine.hpp"

namespace rsbsim {

DefenseConfig defense_preset_none() { return DefenseConfig{}; }

DefenseConfig defense_preset_fully_patched() {
  DefenseConfig d;
  d.lfence_pass = true;
  d.ibrs = true;
  d.stibp = true;
  d.ibpb_on_switch = true;
  d.retpoline = true;
  d.rsb_refill_on_kernel_entry = true;
  d.rsb_refill_on_enclave_entry = false;
  d.smep = true;
  d.smap = true;
  d.kpti = true;
  d.meltdown_patched = true;
  return d;
}

DefenseConfig parse_defense_flags(const std::string& csv) {
  DefenseConfig d;
  std::stringstream ss(csv);
  std::string flag;
  while (std::getline(ss, flag, ',')) {
    if (flag.empty()) continue;
    if (flag == "lfence")
      d.lfence_pass = true;
    else if (flag == "ibrs")
      d.ibrs = true;
    else if (flag == "stibp")
      d.stibp = true;
    else if (flag == "ibpb")
      d.ibpb_on_switch = true;
    else if (flag == "retpoline")
      d.retpoline = true;
    else if (flag == "rsb-refill")
      d.rsb_refill_on_kernel_entry = true;
    else if (flag == "rsb-refill-enclave")
      d.rsb_refill_on_enclave_entry = true;
    else if (flag == "smep")
      d.smep = true;
    else if (flag == "smap")
      d.smap = true;
    else if (flag == "kpti")
      d.kpti = true;
    else if (flag == "meltdown-patch")
      d.meltdown_patched = true;
    else
      throw std::invalid_argument("unknown defense flag: " + flag);
  }
  return d;
}

std::string defense_flags_to_string(const DefenseConfig& d) {
  std::string out;
  auto add = [&](bool v, const char* name) {
    if (!v) return;
    if (!out.empty()) out += ',';
    out += name;
  };
  add(d.lfence_pass, "lfence");
  add(d.ibrs, "ibrs");
  add(d.stibp, "stibp");
  add(d.ibpb_on_switch, "ibpb");
  add(d.retpoline, "retpoline");
  add(d.rsb_refill_on_kernel_entry, "rsb-refill");
  add(d.rsb_refill_on_enclave_entry, "rsb-refill-enclave");
  add(d.smep, "smep");
  add(d.smap, "smap");
  add(d.kpti, "kpti");
  add(d.meltdown_patched, "meltdown-patch");
  return out.empty() ? "none" : out;
}

ProgramImage apply_lfence_pass(const ProgramImage& image) {
  const size_t n = image.instructions.size();

  // Insertion points, as old instruction indices (n == end of image).
  std::set<size_t> fences;
  for (size_t k = 0; k < n; k++) {
    const Instruction& instr = image.instructions[k];
    if (instr.op != Opcode::Jz && instr.op != Opcode::Jnz) continue;
    fences.insert(k + 1);  // fall-through successor
    Addr t = static_cast<Addr>(instr.operands.at(0).value);
    if (image.contains(t)) fences.insert(t - image.base);
  }

  ProgramImage out;
  out.base = image.base;
  out.data_base = image.data_base;
  out.data = image.data;
  out.constants = image.constants;

  // Control arriving at old position p lands on the fence when one is
  // inserted there, so remapped labels point at the fence.
  std::vector<size_t> remap(n + 1, 0);
  for (size_t p = 0; p <= n; p++) {
    remap[p] = out.instructions.size();
    if (fences.count(p)) {
      Instruction f;
      f.op = Opcode::Lfence;
      out.instructions.push_back(f);
    }
    if (p < n) out.instructions.push_back(image.instructions[p]);
  }
  if (fences.count(n) == 0) remap[n] = out.instructions.size();

  auto remap_addr = [&](Addr a) -> Addr {
    if (a >= image.base && a <= image.base + n) return out.base + remap[a - image.base];
    return a;
  };
  for (auto& instr : out.instructions)
    for (auto& op : instr.operands)
      if (op.kind == Operand::Kind::Label)
        op.value = static_cast<std::int64_t>(remap_addr(static_cast<Addr>(op.value)));
  for (const auto& [name, addr] : image.labels) out.labels[name] = remap_addr(addr);
  out.entry = remap_addr(image.entry);
  return out;
}

ProgramImage apply_retpoline(const ProgramImage& image) {
  ProgramImage out = image;
  const size_t n = image.instructions.size();
  for (size_t k = 0; k < n; k++) {
    Instruction& instr = out.instructions[k];
    bool indirect = (instr.op == Opcode::Jmp || instr.op == Opcode::Call) &&
                    instr.operands.size() == 1 &&
                    instr.operands[0].kind == Operand::Kind::Reg;
    if (!indirect) continue;
    int target_reg = instr.operands[0].reg;

    // Appended per site:
    //   T: call R        (pushes C on the stack and the RSB)
    //   C: jmp C         (capture loop: where speculation lands)
    //   R: store [sp], r (overwrite the stacked return address with the target)
    //      ret
    Addr thunk = out.base + out.instructions.size();
    Instruction outer_call;
    outer_call.op = Opcode::Call;
    outer_call.operands.push_back(Operand::make_imm(static_cast<std::int64_t>(thunk + 2)));
    Instruction capture;
    capture.op = Opcode::Jmp;
    capture.operands.push_back(Operand::make_imm(static_cast<std::int64_t>(thunk + 1)));
    Instruction overwrite;
    overwrite.op = Opcode::Store;
    overwrite.operands.push_back(Operand::make_mem(kStackPointer, 0));
    overwrite.operands.push_back(Operand::make_reg(target_reg));
    Instruction ret;
    ret.op = Opcode::Ret;
    out.instructions.push_back(outer_call);
    out.instructions.push_back(capture);
    out.instructions.push_back(overwrite);
    out.instructions.push_back(ret);

    // Same-width in-place replacement: `jmp r` -> `jmp T`, `call r` -> `call T`.
    instr.operands[0] = Operand::make_imm(static_cast<std::int64_t>(thunk));
  }
  return out;
}

void on_privilege_transition(Machine& machine, TransitionKind kind, int incoming_context) {
  const DefenseConfig& d = machine.defenses;
  bool kernel_transit = kind == TransitionKind::KernelEntry || kind == TransitionKind::ContextSwitch;
  if (kernel_transit && d.rsb_refill_on_kernel_entry) {
    machine.rsb.refill(kBenignGadgetAddr);
    machine.emit(TraceEvent::Kind::Refill, kBenignGadgetAddr, "kernel-entry");
  }
  if (kind == TransitionKind::EnclaveEntry && d.rsb_refill_on_enclave_entry) {
    machine.rsb.refill(kBenignGadgetAddr);
    machine.emit(TraceEvent::Kind::Refill, kBenignGadgetAddr, "enclave-entry");
  }
  if (kind == TransitionKind::ContextSwitch && d.ibpb_on_switch)
    machine.btb.barrier(incoming_context);
}

}  // namespace rsbsim
