#include "rsbsim/scenarios.hpp"

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "rsbsim/defenses.hpp"

namespace rsbsim {
namespace {

const std::map<std::string, std::string>& embedded_assets() {
  static const std::map<std::string, std::string> assets = {
#include "scenario_assets.inc"
  };
  return assets;
}

std::string load_asset(const std::string& name, const std::string& dir_override) {
  if (!dir_override.empty()) {
    std::filesystem::path p = std::filesystem::path(dir_override) / (name + ".asm");
    std::ifstream in(p);
    if (!in) throw std::invalid_argument("cannot open scenario asset: " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
  }
  auto it = embedded_assets().find(name);
  if (it == embedded_assets().end())
    throw std::invalid_argument("unknown scenario asset: " + name);
  return it->second;
}

constexpr Addr kSecretPage = 0x40000;
constexpr Addr kSecretAddr = 0x40040;  // line index not 0 mod 4: no probe-set alias
constexpr Addr kGuardPage = 0x50000;
constexpr Addr kGuardAddr = 0x50040;
constexpr Addr kBenignWordAddr = 0x50080;
constexpr Addr kEnclavePage = 0x60000;
constexpr Addr kEnclaveSecretAddr = 0x60040;
constexpr Addr kKernelCodeBase = 0xFFFE0000;
constexpr Addr kEnclaveCodeBase = 0x70000000;
constexpr std::uint64_t kMaxRunCycles = 2'000'000;

ProgramImage transform(const ProgramImage& in, const DefenseConfig& d) {
  ProgramImage img = in;
  if (d.lfence_pass) img = apply_lfence_pass(img);
  if (d.retpoline) img = apply_retpoline(img);
  return img;
}

void map_code(Machine& m, const ProgramImage& img, Domain domain, int space) {
  Addr page = img.base & ~(kPageSize - 1);
  m.map_region(page, img.end() - page, true, false, true, domain, space);
}

std::size_t pollute_call_index(const ProgramImage& img) {
  Addr pollute = img.labels.at("pollute");
  for (std::size_t k = 0; k < img.instructions.size(); k++) {
    const Instruction& ins = img.instructions[k];
    if (ins.op == Opcode::Call && ins.operands.size() == 1 &&
        ins.operands[0].kind == Operand::Kind::Label &&
        static_cast<Addr>(ins.operands[0].value) == pollute)
      return k;
  }
  throw std::logic_error("attacker image has no call to pollute");
}

}  // namespace

const std::vector<std::string>& scenario_ids() {
  static const std::vector<std::string> ids = {"attack1",  "attack2a", "attack2b", "attack2c",
                                               "attack3",  "attack4",  "spectre_v1"};
  return ids;
}

Scenario build_scenario(const std::string& id, const ScenarioParams& params) {
  Scenario sc;
  sc.id = id;
  sc.secret = params.secret;
  sc.receiver = params.receiver;
  sc.secret_addr = kSecretAddr;
  auto src = [&](const std::string& name) { return load_asset(name, params.scenario_dir); };

  if (id == "attack1") {
    sc.programs = {{"attack1", src("attack1"), Mode::User, 0, true}};
    sc.schedule = {{0, 400}};
    sc.secret_domain = params.secret_in_kernel ? Domain::Kernel : Domain::User;
    if (params.secret_in_kernel) sc.requirements.push_back("secret-in-kernel-memory");
  } else if (id == "spectre_v1") {
    sc.programs = {{"spectre_v1", src("spectre_v1"), Mode::User, 0, true}};
    sc.schedule = {{0, 4000}};
    sc.secret_domain = Domain::User;
  } else if (id == "attack2a") {
    sc.programs = {{"victim2a", src("victim2a"), Mode::User, 0, true},
                   {"attacker2a", src("attacker2a"), Mode::User, 0, true}};
    sc.schedule = {{0, 50}, {1, 2000}, {0, 50}};
    sc.secret_domain = Domain::User;
    sc.requirements.push_back("colluding-victim-thread");
  } else if (id == "attack2b") {
    sc.programs = {{"victim2b", src("victim2b"), Mode::User, 0, true},
                   {"attacker2b", src("attacker2b"), Mode::User, 0, true},
                   {"kernel2b", src("kernel2b"), Mode::Kernel, -1, false}};
    sc.schedule = {{0, 50}, {1, 2000}, {0, 50}};
    sc.secret_domain = Domain::Kernel;
    sc.requirements.push_back("colluding-victim-thread");
    sc.requirements.push_back("smep-smap-disabled");
  } else if (id == "attack2c") {
    sc.programs = {{"attacker2c", src("attacker2c"), Mode::User, 0, true},
                   {"victim2c", src("victim2c"), Mode::User, 1, true}};
    sc.schedule = {{1, 50}, {0, 2000}, {1, 50}};
    sc.secret_domain = Domain::User;
    sc.requirements.push_back("gadget-address-known");
  } else if (id == "attack3") {
    sc.programs = {{"attacker3", src("attacker3"), Mode::User, 0, true},
                   {"enclave3", src("enclave3"), Mode::Enclave, -1, false}};
    sc.schedule = {{0, 2000}};
    sc.secret_addr = kEnclaveSecretAddr;
    sc.secret_domain = Domain::Enclave;
  } else if (id == "attack4") {
    sc.programs = {{"attacker4", src("attacker4"), Mode::User, 0, true},
                   {"kernel4", src("kernel4"), Mode::Kernel, -1, false}};
    sc.schedule = {{0, 2000}};
    sc.secret_domain = Domain::Kernel;
    sc.requirements.push_back("smep-smap-disabled");
    sc.requirements.push_back("kernel-stack-address-known");
  } else {
    throw std::invalid_argument("unknown scenario id: " + id);
  }
  return sc;
}

void setup_scenario(Machine& m, const Scenario& sc, std::size_t index) {
  const DefenseConfig& d = m.defenses;

  m.map_region(kProbeBase, kProbeSlots * kProbeStride, true, false, false, Domain::User, -1);

  int secret_space = sc.id == "attack2c" ? 1 : 0;
  if (sc.secret_domain == Domain::Enclave)
    m.map_region(kEnclavePage, kPageSize, true, false, false, Domain::Enclave);
  else
    m.map_region(kSecretPage, kPageSize, true, false, false, sc.secret_domain,
                 sc.secret_domain == Domain::User ? secret_space : -1);

  // Assemble and transform every program under the active defense config.
  std::vector<ProgramImage> images;
  for (const auto& p : sc.programs) images.push_back(transform(assemble(p.source), d));

  if (sc.id == "attack2c") {
    // Rebase the attacker so its pollution call pushes exactly the victim
    // gadget's (post-transform) absolute address.
    Addr gadget = images[1].labels.at("gadget");
    std::size_t idx = pollute_call_index(images[0]);
    Addr base = gadget - 1 - idx;
    images[0] = transform(assemble(sc.programs[0].source, base), d);
    if (images[0].base + pollute_call_index(images[0]) != gadget - 1)
      throw std::logic_error("attack2c rebase failed");
  }

  std::vector<int> ctx_of(sc.programs.size(), -1);
  for (std::size_t i = 0; i < sc.programs.size(); i++) {
    const ScenarioProgram& p = sc.programs[i];
    if (p.is_context) {
      map_code(m, images[i], Domain::User, p.address_space);
      ctx_of[i] = m.spawn_context(images[i], p.mode, p.address_space);
    } else {
      map_code(m, images[i], p.mode == Mode::Enclave ? Domain::Enclave : Domain::Kernel, -1);
      m.install_code(images[i], -1);
    }
  }

  int plant_space = sc.secret_domain == Domain::User ? secret_space : 0;
  for (std::size_t j = 0; j < sc.secret.size(); j++)
    m.write_byte(plant_space, sc.secret_addr + j, sc.secret[j]);

  Addr secret_byte = sc.secret_addr + index;
  for (std::size_t i = 0; i < sc.programs.size(); i++) {
    if (ctx_of[i] < 0) continue;
    Context& c = m.context(ctx_of[i]);
    c.regs[8] = sc.probe_base;
    c.regs[11] = secret_byte;
  }

  if (sc.id == "spectre_v1") {
    m.map_region(kGuardPage, kPageSize, true, false, false, Domain::User, 0);
    m.write_word(0, kGuardAddr, kBenignWordAddr);
    m.write_byte(0, kBenignWordAddr, 0x2a);
    m.context(0).regs[14] = kGuardAddr;
  } else if (sc.id == "attack2a") {
    m.context(1).regs[10] = m.context(0).regs[kStackPointer] - kWordSize;
  } else if (sc.id == "attack2b") {
    m.register_syscall(1, images[2].labels.at("khandler"));
    m.context(1).regs[10] = m.context(0).kernel_stack_top - kWordSize;
  } else if (sc.id == "attack2c") {
    m.context(0).regs[10] = m.context(1).regs[kStackPointer] - kWordSize;
    Context& v = m.context(1);
    v.regs[6] = secret_byte;
    v.regs[7] = sc.probe_base;
  } else if (sc.id == "attack4") {
    m.register_syscall(1, images[1].labels.at("khandler"));
    Addr slot = m.context(0).kernel_stack_top - kWordSize;
    m.write_word(0, slot, images[1].labels.at("kstub"));
    m.context(0).regs[10] = slot;
  }

  // Warm the secret's line so the transient payload's dependent chain
  // completes well inside the speculation window.
  m.timed_access(secret_byte);

  if (sc.receiver == ReceiverKind::FlushReload)
    for (unsigned i = 0; i < kProbeSlots; i++)
      m.cache.flush_line(sc.probe_base + Addr(i) * kProbeStride);
}

std::optional<std::uint8_t> receive_flush_reload(Machine& m, Addr probe_base,
                                                 unsigned threshold_cycles) {
  std::optional<std::uint8_t> found;
  bool ambiguous = false;
  for (unsigned i = 1; i <= 256; i++) {
    Addr a = probe_base + Addr(i) * kProbeStride;
    AccessResult r = m.timed_access(a);
    if (r.latency < threshold_cycles) {
      if (found) ambiguous = true;
      found = static_cast<std::uint8_t>(i - 1);
    }
    m.cache.flush_line(a);
  }
  if (ambiguous || !found) return std::nullopt;
  return found;
}

namespace {

// Attacker-owned lines aliasing the probe slots' sets. A large power-of-two
// offset keeps the set index identical while the line ids stay distinct.
Addr prime_line(const CacheGeometry& g, Addr probe_base, unsigned slot, unsigned way) {
  Addr span = Addr(g.sets) * g.line_size;
  return probe_base + 0x1000000 + Addr(slot) * kProbeStride + Addr(way) * span;
}

}  // namespace

void prime_probe_prepare(Machine& m, Addr probe_base) {
  const CacheGeometry& g = m.cache.geometry();
  if (Addr(g.sets) * g.line_size < Addr(256) * kProbeStride)
    throw std::invalid_argument("prime+probe needs cache_sets >= 1024");
  for (unsigned i = 1; i <= 256; i++)
    for (unsigned w = 0; w < g.ways; w++) m.timed_access(prime_line(g, probe_base, i, w));
}

std::optional<std::uint8_t> receive_prime_probe(Machine& m, Addr probe_base,
                                                unsigned threshold_cycles) {
  const CacheGeometry& g = m.cache.geometry();
  std::optional<std::uint8_t> found;
  bool ambiguous = false;
  for (unsigned i = 1; i <= 256; i++) {
    bool evicted = false;
    for (unsigned w = 0; w < g.ways; w++) {
      AccessResult r = m.timed_access(prime_line(g, probe_base, i, w));
      if (r.latency >= threshold_cycles) evicted = true;
    }
    if (evicted) {
      if (found) ambiguous = true;
      found = static_cast<std::uint8_t>(i - 1);
    }
  }
  if (ambiguous || !found) return std::nullopt;
  return found;
}

ByteRun run_attack_byte(const Scenario& sc, const MachineConfig& cfg, std::size_t index) {
  MachineConfig mc = cfg;
  mc.seed = cfg.seed ^ (0x9e3779b97f4a7c15ULL * (index + 1));
  Machine m(mc);
  setup_scenario(m, sc, index);
  if (sc.receiver == ReceiverKind::PrimeProbe) prime_probe_prepare(m, sc.probe_base);
  ByteRun br;
  br.result = run(m, sc.schedule, kMaxRunCycles);
  unsigned threshold = (mc.hit_latency + mc.miss_latency) / 2;
  br.byte = sc.receiver == ReceiverKind::FlushReload
                ? receive_flush_reload(m, sc.probe_base, threshold)
                : receive_prime_probe(m, sc.probe_base, threshold);
  return br;
}

AttackOutcome run_attack(const Scenario& sc, const MachineConfig& cfg) {
  AttackOutcome out;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < sc.secret.size(); i++) {
    ByteRun br = run_attack_byte(sc, cfg, i);
    out.cycles += br.result.cycles;
    out.recovered.push_back(br.byte.value_or(0));
    if (br.byte && *br.byte == sc.secret[i]) correct++;
  }
  out.accuracy = sc.secret.empty() ? 1.0 : double(correct) / double(sc.secret.size());
  out.success = correct == sc.secret.size();
  out.bypassed = out.success;
  return out;
}

}  // namespace rsbsim
