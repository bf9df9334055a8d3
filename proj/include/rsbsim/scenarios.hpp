#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "rsbsim/machine.hpp"
#include "rsbsim/pipeline.hpp"

namespace rsbsim {

inline constexpr Addr kProbeBase = 0x20000;
inline constexpr unsigned kProbeStride = 256;
// Slot 0 is never used: byte b is transmitted as slot b+1, so the probe loop
// can start at 1 and byte 0 is still representable.
inline constexpr unsigned kProbeSlots = 257;

enum class ReceiverKind { FlushReload, PrimeProbe };

struct ScenarioParams {
  std::vector<std::uint8_t> secret{0x54, 0x48, 0x45, 0x53, 0x45, 0x43, 0x52, 0x54};
  // attack1 only: place the secret in kernel memory (the Meltdown/KPTI
  // differential) instead of the default unread user region.
  bool secret_in_kernel = false;
  ReceiverKind receiver = ReceiverKind::FlushReload;
  // Load .asm assets from this directory instead of the built-in copies.
  std::string scenario_dir;
};

struct ScenarioProgram {
  std::string name;    // asset name, e.g. "attacker2a"
  std::string source;  // isa-asm text
  Mode mode = Mode::User;
  int address_space = 0;
  // Contexts are spawned in program order; non-context images (kernel and
  // enclave code) are installed without a context.
  bool is_context = true;
};

struct Scenario {
  std::string id;
  std::vector<ScenarioProgram> programs;
  Schedule schedule;
  std::vector<std::uint8_t> secret;
  Addr secret_addr = 0;
  Domain secret_domain = Domain::User;
  ReceiverKind receiver = ReceiverKind::FlushReload;
  Addr probe_base = kProbeBase;
  std::vector<std::string> requirements;
};

const std::vector<std::string>& scenario_ids();
Scenario build_scenario(const std::string& id, const ScenarioParams& params = {});

struct AttackOutcome {
  bool success = false;
  std::vector<std::uint8_t> recovered;
  double accuracy = 0.0;
  std::uint64_t cycles = 0;
  bool bypassed = false;  // == success, per the matrix convention
};

AttackOutcome run_attack(const Scenario& sc, const MachineConfig& cfg);

// One byte's episode on a fresh machine; used by run_attack, the trace
// command, and tests that need the RunResult.
struct ByteRun {
  std::optional<std::uint8_t> byte;  // nullopt: ambiguous read
  RunResult result;
};
ByteRun run_attack_byte(const Scenario& sc, const MachineConfig& cfg, std::size_t index);

// Builds the scenario's memory image, programs, and registers for leaking
// byte `index` into `m` (exposed for tests that drive runs manually).
void setup_scenario(Machine& m, const Scenario& sc, std::size_t index);

// Times probe slots 1..256 and flushes each line after measuring it (so the
// receiver's own fills cannot evict the transmitted line). Exactly one slot
// under threshold -> that slot - 1; otherwise ambiguous.
std::optional<std::uint8_t> receive_flush_reload(Machine& m, Addr probe_base,
                                                 unsigned threshold_cycles);

// Prime+Probe needs an injective slot->set mapping: cache_sets >= 1024.
void prime_probe_prepare(Machine& m, Addr probe_base);
std::optional<std::uint8_t> receive_prime_probe(Machine& m, Addr probe_base,
                                                unsigned threshold_cycles);

}  // namespace rsbsim
