#pragma once

#include <array>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <unordered_map>
#include <vector>

#include "rsbsim/cache.hpp"
#include "rsbsim/defenses.hpp"
#include "rsbsim/isa.hpp"
#include "rsbsim/predictors.hpp"
#include "rsbsim/trace.hpp"

namespace rsbsim {

inline constexpr Addr kPageSize = 4096;
// Benign delay gadget installed by create_machine in a reserved kernel page.
inline constexpr Addr kBenignGadgetAddr = 0xFFFFF000;
// Per-context stack regions (one page each).
inline constexpr Addr kUserStackRegion = 0x600000;
inline constexpr Addr kKernelStackRegion = 0xFFFF4000;

enum class Domain { User, Kernel, Enclave };

struct PageDescriptor {
  Addr base = 0;
  std::size_t len = 0;
  bool read = false, write = false, exec = false;
  Domain domain = Domain::User;
  bool mapped_in_user = true;  // cleared by KPTI for Kernel pages
  // -1: visible in every address space (Kernel/Enclave pages and explicitly
  // shared User pages); otherwise private to one space.
  int address_space = -1;
  std::shared_ptr<std::vector<std::uint8_t>> bytes;

  bool contains(Addr a) const { return a >= base && a < base + len; }
};

enum class FaultKind { None, Unmapped, Permission, Privileged, BadSyscall };

struct Context {
  int id = 0;
  Mode mode = Mode::User;
  std::array<Word, kNumRegisters> regs{};
  Addr pc = 0;
  int address_space = 0;
  bool zf = false;
  bool halted = false;
  FaultKind fault = FaultKind::None;

  // Completion-time scoreboard; microarchitectural, used only to compute
  // speculation resolve deadlines.
  std::array<std::uint64_t, kNumRegisters> reg_ready{};
  std::uint64_t zf_ready = 0;

  struct SavedState {
    Addr return_pc = 0;
    Mode prior_mode = Mode::User;
    Word saved_sp = 0;
    bool restore_sp = false;
  };
  std::vector<SavedState> saved;  // syscall/eenter nesting

  Addr kernel_stack_top = 0;
};

struct ContextArch {
  std::array<Word, kNumRegisters> regs{};
  Addr pc = 0;
  bool zf = false;
  Mode mode = Mode::User;
  bool halted = false;
  FaultKind fault = FaultKind::None;

  bool operator==(const ContextArch&) const = default;
};

// Committed architectural state only: excludes cache, predictors, and the
// clock by construction.
struct ArchSnapshot {
  std::vector<ContextArch> contexts;
  // (address_space, page base) -> bytes, for all writable pages.
  std::map<std::pair<int, Addr>, std::vector<std::uint8_t>> memory;

  bool operator==(const ArchSnapshot&) const = default;
};

struct MachineConfig {
  std::string preset = "none";
  unsigned rsb_capacity = 16;
  UnderfillMode rsb_underfill = UnderfillMode::FallbackIndirect;
  unsigned cache_sets = 64;
  unsigned cache_ways = 8;
  unsigned line_size = 64;
  unsigned hit_latency = 4;
  unsigned miss_latency = 300;
  unsigned rob_limit = 224;
  std::uint64_t seed = 0;
  bool jitter = false;
  DefenseConfig defenses;
};

// Presets: none | xeon | skylake | amd | fully_patched (Table-1 machines plus
// the two degenerate corners).
MachineConfig machine_preset(const std::string& name);
// Line-oriented `key = value` text; unknown keys are errors.
MachineConfig parse_machine_config(const std::string& text);
std::string machine_config_to_string(const MachineConfig& cfg);

enum class AccessKind { Read, Write, Fetch };
enum class AccessStatus {
  Ok,
  Unmapped,      // no page, or KPTI-hidden kernel page seen from user mode
  NoPerm,        // page lacks the read/write/exec flag
  Privileged,    // mapped, but belongs to a more protected domain
};

struct AccessDecision {
  AccessStatus status = AccessStatus::Unmapped;
  const PageDescriptor* page = nullptr;
};

class Machine {
 public:
  explicit Machine(const MachineConfig& config);

  // -- memory layout ---------------------------------------------------------
  void map_region(Addr base, std::size_t len, bool read, bool write, bool exec, Domain domain,
                  int address_space = -1);
  AccessDecision check_access(int address_space, Mode mode, Addr addr, AccessKind kind) const;
  const PageDescriptor* find_page(int address_space, Addr addr) const;

  // Raw committed-memory plumbing; no permission checks (harness/loader use).
  std::uint8_t read_byte(int address_space, Addr addr) const;
  void write_byte(int address_space, Addr addr, std::uint8_t v);
  Word read_word(int address_space, Addr addr) const;
  void write_word(int address_space, Addr addr, Word v);
  void write_bytes(int address_space, Addr addr, const std::vector<std::uint8_t>& bytes);

  // -- program loading -------------------------------------------------------
  int spawn_context(const ProgramImage& image, Mode mode, int address_space);
  const Instruction* fetch(int address_space, Addr pc) const;
  void install_code(const ProgramImage& image, int address_space);

  void context_switch(int to);
  void register_syscall(int number, Addr handler);
  std::optional<Addr> syscall_handler(int number) const;

  ArchSnapshot snapshot_arch_state() const;

  // -- accessors -------------------------------------------------------------
  Context& context(int id) { return contexts_.at(id); }
  const Context& context(int id) const { return contexts_.at(id); }
  std::size_t context_count() const { return contexts_.size(); }
  Context& current_context() { return contexts_.at(current_); }
  int current() const { return current_; }

  std::uint64_t clock = 0;
  CacheState cache;
  ReturnStackBuffer rsb;
  BranchTargetBuffer btb;
  DirectionPredictor dirpred;
  DefenseConfig defenses;

  const MachineConfig& config() const { return config_; }
  std::uint64_t rng_draw() { return rng_(); }
  // Cache access with the machine's jitter/seed policy applied.
  AccessResult timed_access(Addr addr);

  // Trace sink wired up by pipeline::run for the duration of a run.
  std::vector<TraceEvent>* trace_sink = nullptr;
  void emit(TraceEvent::Kind kind, Addr pc, std::string detail = "");

 private:
  MachineConfig config_;
  std::vector<PageDescriptor> pages_;
  std::vector<Context> contexts_;
  int current_ = 0;
  std::mt19937_64 rng_;
  // Per-space code; key -1 holds Kernel/Enclave (globally visible) code.
  std::map<int, std::unordered_map<Addr, Instruction>> code_;
  std::map<int, Addr> syscalls_;
};

}  // namespace rsbsim
