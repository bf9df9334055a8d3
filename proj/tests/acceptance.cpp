// Acceptance gate: one pass/fail line per criterion, nonzero exit on any fail.
#include <algorithm>
#include <array>
#include <chrono>
#include <cstdio>
#include <deque>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "helpers.hpp"
#include "rsbsim/machine.hpp"
#include "rsbsim/matrix.hpp"
#include "rsbsim/pipeline.hpp"
#include "rsbsim/predictors.hpp"
#include "rsbsim/scenarios.hpp"
#include "rsbsim/selftest.hpp"

using namespace rsbsim;
using namespace rsbsim::testutil;

namespace {

int failures = 0;

void report(int n, const char* what, bool ok, const std::string& detail = "") {
  std::printf("criterion %2d %-52s %s%s%s\n", n, what, ok ? "PASS" : "FAIL",
              detail.empty() ? "" : "  ", detail.c_str());
  if (!ok) failures++;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

bool attack_succeeds(const std::string& id, const MachineConfig& cfg, ScenarioParams p = {}) {
  return run_attack(build_scenario(id, p), cfg).success;
}

// 1: the full defense matrix, every cell, within the time budget
void criterion1() {
  const std::map<std::string, std::array<int, 7>> expected = {
      {"attack1", {1, 1, 1, 1, 1, 1, 1}},  {"attack2a", {1, 1, 1, 1, 1, 0, 1}},
      {"attack2b", {1, 1, 1, 1, 1, 0, 0}}, {"attack2c", {1, 1, 1, 1, 1, 0, 1}},
      {"attack3", {1, 1, 1, 1, 1, 1, 1}},  {"attack4", {1, 1, 1, 1, 1, 0, 0}},
  };
  auto t0 = std::chrono::steady_clock::now();
  MatrixReport rep = run_matrix("xeon", 0, 4);
  double dt = seconds_since(t0);
  bool ok = rep.cells.size() == 42;
  for (std::size_t row = 0; ok && row < rep.attacks.size(); row++)
    for (std::size_t col = 0; col < rep.defenses.size(); col++)
      ok &= rep.cells[row * 7 + col].bypassed == (expected.at(rep.attacks[row])[col] == 1);
  ok &= dt < 10.0;
  char buf[48];
  std::snprintf(buf, sizeof buf, "42 cells, %.2fs", dt);
  report(1, "matrix reproduction (xeon)", ok, buf);
}

void criterion2() {
  bool ok = attack_succeeds("attack4", machine_preset("xeon")) &&
            !attack_succeeds("attack4", machine_preset("skylake"));
  report(2, "preset differential (attack4 xeon vs skylake)", ok);
}

void criterion3() {
  ScenarioParams p;
  p.secret_in_kernel = true;
  MachineConfig plain = machine_preset("none");
  MachineConfig kpti = plain;
  kpti.defenses.kpti = true;
  bool ok = attack_succeeds("attack1", plain, p) && !attack_succeeds("attack1", kpti, p);
  report(3, "kpti/meltdown differential (attack1 kernel secret)", ok);
}

void criterion4() {
  MachineConfig patched = machine_preset("fully_patched");
  MachineConfig refill = patched;
  refill.defenses.rsb_refill_on_enclave_entry = true;
  bool ok = attack_succeeds("attack3", patched) && !attack_succeeds("attack3", refill);
  report(4, "sgx pair (attack3 vs enclave-entry refilling)", ok);
}

void criterion5() {
  MachineConfig cfg = machine_preset("none");
  cfg.defenses.lfence_pass = true;
  bool ok = !attack_succeeds("spectre_v1", cfg) && attack_succeeds("attack1", cfg);
  report(5, "fence differential (spectre_v1 vs attack1)", ok);
}

void criterion6() {
  auto t0 = std::chrono::steady_clock::now();
  Scenario sc = build_scenario("attack1");
  MachineConfig exact = machine_preset("none");
  AttackOutcome clean = run_attack(sc, exact);
  bool ok = clean.success && clean.accuracy == 1.0;

  MachineConfig noisy = exact;
  noisy.jitter = true;
  long correct = 0, total = 0;
  for (std::uint64_t trial = 0; trial < 1000; trial++) {
    noisy.seed = trial;
    AttackOutcome o = run_attack(sc, noisy);
    for (std::size_t i = 0; i < sc.secret.size(); i++) {
      total++;
      correct += i < o.recovered.size() && o.recovered[i] == sc.secret[i];
    }
  }
  double acc = double(correct) / double(total);
  double dt = seconds_since(t0);
  ok &= acc >= 0.99 && dt < 30.0;
  char buf[64];
  std::snprintf(buf, sizeof buf, "jitter accuracy %.4f, %.2fs", acc, dt);
  report(6, "leak fidelity (exact + 1000 jittered trials)", ok, buf);
}

void criterion7() {
  bool ok = true;
  for (const std::string& id : scenario_ids()) {
    Scenario sc = build_scenario(id);
    MachineConfig cfg = machine_preset("none");
    Machine a(cfg), b(cfg);
    setup_scenario(a, sc, 0);
    setup_scenario(b, sc, 0);
    ok &= run(a, sc.schedule, 2000000).final_snapshot ==
          reference_run(b, sc.schedule, 2000000).final_snapshot;
  }
  std::mt19937_64 rng(41);
  int diffs = 0;
  for (int trial = 0; trial < 200; trial++) {
    std::string src = random_program(rng);
    MachineConfig cfg = machine_preset("none");
    Machine a = oracle_machine(cfg, src);
    Machine b = oracle_machine(cfg, src);
    diffs += run(a, {{0, 250}}, 50'000'000).final_snapshot !=
             reference_run(b, {{0, 250}}, 50'000'000).final_snapshot;
  }
  ok &= diffs == 0;
  report(7, "oracle equivalence (7 scenarios + 200 random programs)", ok,
         diffs ? std::to_string(diffs) + " diffs" : "");
}

void criterion8() {
  bool ok = true;
  std::mt19937_64 rng(43);
  // rsb vs bounded-ring reference
  for (int seq = 0; seq < 1000 && ok; seq++) {
    unsigned cap = 4 + unsigned(rng() % 13);
    ReturnStackBuffer rsb(cap, UnderfillMode::FallbackIndirect);
    std::deque<Addr> ref;
    for (int i = 0; i < 100; i++) {
      if (rng() % 2) {
        Addr a = rng() % 0x10000;
        rsb.push(a);
        ref.push_back(a);
        if (ref.size() > cap) ref.pop_front();
      } else {
        Prediction p = rsb.predict_pop();
        if (ref.empty()) {
          ok &= p.kind == Prediction::Kind::FallbackIndirect;
        } else {
          ok &= p.kind == Prediction::Kind::Address && p.addr == ref.back();
          ref.pop_back();
        }
      }
    }
  }
  // cache vs brute-force LRU (timestamped full scan)
  CacheGeometry geo{8, 4, 64};
  CacheState cache(geo, 4, 300);
  std::map<std::uint64_t, std::map<std::uint64_t, std::uint64_t>> sets;
  std::uint64_t tick = 0;
  for (int step = 0; step < 10000 && ok; step++) {
    Addr a = (rng() % 128) * 64;
    std::uint64_t line = a / geo.line_size;
    auto& set = sets[line % geo.sets];
    if (rng() % 8 == 0) {
      cache.flush_line(a);
      set.erase(line);
      continue;
    }
    tick++;
    bool want_hit = set.count(line) > 0;
    if (!want_hit && set.size() == geo.ways)
      set.erase(std::min_element(set.begin(), set.end(),
                                 [](const auto& x, const auto& y) { return x.second < y.second; }));
    set[line] = tick;
    ok &= cache.access(a).hit == want_hit;
  }
  report(8, "predictor and cache oracles (rsb ring, lru)", ok);
}

void criterion9() {
  std::vector<SelftestResult> results = run_selftests("all");
  bool ok = results.size() == 16;
  std::string bad;
  for (const SelftestResult& r : results)
    if (!r.passed) {
      ok = false;
      bad += r.name + "; ";
    }
  report(9, "s1-s4 selftests (2 underfill modes x 2 refills)", ok, bad);
}

void criterion10() {
  std::string base = matrix_to_csv(run_matrix("xeon", 0, 1));
  bool ok = matrix_to_csv(run_matrix("xeon", 0, 8)) == base;
  for (int rep = 0; rep < 5 && ok; rep++) ok &= matrix_to_csv(run_matrix("xeon", 0, 8)) == base;
  report(10, "determinism (csv, jobs 1 vs 8, 5 repeats)", ok);
}

}  // namespace

int main() {
  criterion1();
  criterion2();
  criterion3();
  criterion4();
  criterion5();
  criterion6();
  criterion7();
  criterion8();
  criterion9();
  criterion10();
  std::printf("%s\n", failures == 0 ? "acceptance: all criteria pass"
                                    : "acceptance: FAILURES present");
  return failures == 0 ? 0 : 1;
}
