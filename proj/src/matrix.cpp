#include "rsbsim/matrix.hpp"

#include <atomic>
#include <iomanip>
#include <sstream>
#include <thread>

#include "rsbsim/machine.hpp"
#include "rsbsim/scenarios.hpp"

namespace rsbsim {
namespace {

std::string fnv1a_hex(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

DefenseConfig one(void (*set)(DefenseConfig&)) {
  DefenseConfig d;
  set(d);
  return d;
}

}  // namespace

const std::vector<std::string>& matrix_attacks() {
  static const std::vector<std::string> rows = {"attack1", "attack2a", "attack2b",
                                                "attack2c", "attack3", "attack4"};
  return rows;
}

const std::vector<std::pair<std::string, DefenseConfig>>& matrix_columns() {
  static const std::vector<std::pair<std::string, DefenseConfig>> cols = {
      {"lfence", one([](DefenseConfig& d) { d.lfence_pass = true; })},
      {"ibrs", one([](DefenseConfig& d) { d.ibrs = true; })},
      {"stibp", one([](DefenseConfig& d) { d.stibp = true; })},
      {"ibpb", one([](DefenseConfig& d) { d.ibpb_on_switch = true; })},
      {"retpoline", one([](DefenseConfig& d) { d.retpoline = true; })},
      {"rsb-refill", one([](DefenseConfig& d) { d.rsb_refill_on_kernel_entry = true; })},
      {"smep-smap", one([](DefenseConfig& d) {
         d.smep = true;
         d.smap = true;
       })},
  };
  return cols;
}

MatrixReport run_matrix(const std::string& preset, std::uint64_t seed, unsigned jobs) {
  MatrixReport rep;
  rep.preset = preset;
  rep.seed = seed;
  MachineConfig base = machine_preset(preset);
  base.defenses = DefenseConfig{};
  base.seed = seed;
  rep.config_hash = fnv1a_hex(machine_config_to_string(base));
  for (const auto& a : matrix_attacks()) rep.attacks.push_back(a);
  for (const auto& [name, d] : matrix_columns()) {
    (void)d;
    rep.defenses.push_back(name);
  }
  rep.cells.resize(rep.attacks.size() * rep.defenses.size());

  std::vector<Scenario> scenarios;
  for (const auto& a : rep.attacks) scenarios.push_back(build_scenario(a));
  for (const auto& sc : scenarios)
    for (const auto& req : sc.requirements)
      rep.footnotes.push_back(sc.id + ": " + req);

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (;;) {
      std::size_t k = next.fetch_add(1);
      if (k >= rep.cells.size()) return;
      std::size_t row = k / rep.defenses.size();
      std::size_t col = k % rep.defenses.size();
      MachineConfig cfg = base;
      cfg.defenses = matrix_columns()[col].second;
      AttackOutcome o = run_attack(scenarios[row], cfg);
      MatrixCell& cell = rep.cells[k];
      cell.attack = rep.attacks[row];
      cell.defense = rep.defenses[col];
      cell.bypassed = o.bypassed;
      cell.cycles = o.cycles;
      cell.seed = seed;
    }
  };
  if (jobs <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < jobs; t++) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  return rep;
}

std::string matrix_to_csv(const MatrixReport& r) {
  std::ostringstream os;
  os << "attack,defense,outcome,cycles,seed\n";
  for (const auto& c : r.cells)
    os << c.attack << ',' << c.defense << ',' << (c.bypassed ? "BYPASS" : "BLOCKED") << ','
       << c.cycles << ',' << c.seed << '\n';
  return os.str();
}

std::string matrix_to_text(const MatrixReport& r) {
  std::ostringstream os;
  os << std::left << std::setw(10) << "attack";
  for (const auto& d : r.defenses) os << std::setw(11) << d;
  os << '\n';
  for (std::size_t row = 0; row < r.attacks.size(); row++) {
    os << std::setw(10) << r.attacks[row];
    for (std::size_t col = 0; col < r.defenses.size(); col++)
      os << std::setw(11) << (r.cells[row * r.defenses.size() + col].bypassed ? "BYPASS" : "BLOCKED");
    os << '\n';
  }
  os << "preset: " << r.preset << "  seed: " << r.seed << "  config: " << r.config_hash << '\n';
  for (const auto& f : r.footnotes) os << "note: " << f << '\n';
  return os.str();
}

}  // namespace rsbsim
