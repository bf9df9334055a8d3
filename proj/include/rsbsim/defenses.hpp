#pragma once

#include <string>

#include "rsbsim/isa.hpp"

namespace rsbsim {

class Machine;

// Every mitigation is an independent toggle; all combinations are valid.
struct DefenseConfig {
  bool lfence_pass = false;
  bool ibrs = false;
  bool stibp = false;
  bool ibpb_on_switch = false;
  bool retpoline = false;
  bool rsb_refill_on_kernel_entry = false;
  bool rsb_refill_on_enclave_entry = false;
  bool smep = false;
  bool smap = false;
  bool kpti = false;
  bool meltdown_patched = false;

  bool operator==(const DefenseConfig&) const = default;
};

DefenseConfig defense_preset_none();
DefenseConfig defense_preset_fully_patched();  // everything except enclave-entry refill

// Parses one comma-separated flag list: lfence,ibrs,stibp,ibpb,retpoline,
// rsb-refill,rsb-refill-enclave,smep,smap,kpti,meltdown-patch.
// Throws std::invalid_argument on an unknown flag name.
DefenseConfig parse_defense_flags(const std::string& csv);
std::string defense_flags_to_string(const DefenseConfig& cfg);

// Inserts an `lfence` immediately after both successors of every conditional
// branch (fall-through and taken target), remapping all code labels and
// label-valued operands. No fence is placed after `ret`.
ProgramImage apply_lfence_pass(const ProgramImage& image);

// Replaces every indirect `jmp r`/`call r` with a same-width direct transfer
// into an appended return trampoline whose RSB entry points at a capture
// loop. Architectural behavior is unchanged; speculation lands in the loop.
ProgramImage apply_retpoline(const ProgramImage& image);

enum class TransitionKind { KernelEntry, EnclaveEntry, ContextSwitch };

// Fires rsb_refill / btb_barrier on the machine per its DefenseConfig.
// `incoming_context` is the context gaining the core (IBPB survivor).
void on_privilege_transition(Machine& machine, TransitionKind kind, int incoming_context);

}  // namespace rsbsim
