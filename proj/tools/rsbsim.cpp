#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "rsbsim/defenses.hpp"
#include "rsbsim/machine.hpp"
#include "rsbsim/matrix.hpp"
#include "rsbsim/scenarios.hpp"
#include "rsbsim/selftest.hpp"
#include "rsbsim/trace.hpp"

namespace {

using namespace rsbsim;

struct CommonOpts {
  std::string scenario;
  std::string preset = "xeon";
  std::string defense;
  std::string config_path;
  std::string receiver = "flush-reload";
  std::string scenario_dir;
  std::uint64_t seed = 0;
};

void add_common(CLI::App* cmd, CommonOpts& o, bool need_scenario) {
  auto* s = cmd->add_option("--scenario", o.scenario, "scenario id (see `matrix` rows, plus spectre_v1)");
  if (need_scenario) s->required();
  cmd->add_option("--preset", o.preset, "machine preset: skylake|xeon|amd");
  cmd->add_option("--defense", o.defense, "comma-separated defense flags");
  cmd->add_option("--config", o.config_path, "machine config file (overrides --preset)");
  cmd->add_option("--receiver", o.receiver, "flush-reload|prime-probe")
      ->check(CLI::IsMember({"flush-reload", "prime-probe"}));
  cmd->add_option("--scenario-dir", o.scenario_dir, "load scenario .asm files from this directory");
  cmd->add_option("--seed", o.seed, "jitter seed");
}

MachineConfig resolve_config(const CommonOpts& o) {
  MachineConfig cfg;
  if (!o.config_path.empty()) {
    std::ifstream in(o.config_path);
    if (!in) throw std::invalid_argument("cannot open config file: " + o.config_path);
    std::ostringstream text;
    text << in.rdbuf();
    cfg = parse_machine_config(text.str());
  } else {
    cfg = machine_preset(o.preset);
  }
  if (!o.defense.empty()) cfg.defenses = parse_defense_flags(o.defense);
  cfg.seed = o.seed;
  return cfg;
}

Scenario resolve_scenario(const CommonOpts& o) {
  ScenarioParams params;
  params.receiver = o.receiver == "prime-probe" ? ReceiverKind::PrimeProbe : ReceiverKind::FlushReload;
  params.scenario_dir = o.scenario_dir;
  return build_scenario(o.scenario, params);
}

std::string hex_bytes(const std::vector<std::uint8_t>& bytes) {
  std::string s;
  char buf[3];
  for (std::uint8_t b : bytes) {
    std::snprintf(buf, sizeof buf, "%02x", b);
    s += buf;
  }
  return s;
}

int cmd_run(const CommonOpts& o, const std::string& trace_path) {
  Scenario sc = resolve_scenario(o);
  MachineConfig cfg = resolve_config(o);
  AttackOutcome out = run_attack(sc, cfg);
  if (!trace_path.empty()) {
    ByteRun br = run_attack_byte(sc, cfg, 0);
    std::ofstream tf(trace_path);
    if (!tf) throw std::invalid_argument("cannot open trace file: " + trace_path);
    tf << serialize_trace(br.result.trace);
  }
  std::cout << "scenario: " << sc.id << '\n'
            << "outcome: " << (out.success ? "SUCCESS" : "FAILURE") << '\n'
            << "recovered: " << hex_bytes(out.recovered) << '\n'
            << "accuracy: " << out.accuracy << '\n'
            << "cycles: " << out.cycles << '\n';
  return 0;
}

int cmd_matrix(const CommonOpts& o, const std::string& format, unsigned jobs) {
  MatrixReport rep = run_matrix(o.preset, o.seed, jobs);
  std::cout << (format == "csv" ? matrix_to_csv(rep) : matrix_to_text(rep));
  return 0;
}

int cmd_selftest(const std::string& source) {
  bool all_ok = true;
  for (const SelftestResult& r : run_selftests(source)) {
    std::cout << r.name << ": " << (r.passed ? "pass" : "fail");
    if (!r.detail.empty()) std::cout << " (" << r.detail << ")";
    std::cout << '\n';
    all_ok &= r.passed;
  }
  std::cout << (all_ok ? "selftest: pass" : "selftest: fail") << '\n';
  return 0;
}

int cmd_trace(const CommonOpts& o, std::size_t byte_index, const std::string& out_path) {
  Scenario sc = resolve_scenario(o);
  MachineConfig cfg = resolve_config(o);
  ByteRun br = run_attack_byte(sc, cfg, byte_index);
  std::string text = serialize_trace(br.result.trace);
  if (out_path.empty()) {
    std::cout << text;
  } else {
    std::ofstream tf(out_path);
    if (!tf) throw std::invalid_argument("cannot open output file: " + out_path);
    tf << text;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"rsbsim: deterministic return-stack-buffer speculation simulator"};
  app.require_subcommand(1);

  CommonOpts run_opts;
  std::string run_trace;
  auto* run_cmd = app.add_subcommand("run", "run one attack scenario and report the outcome");
  add_common(run_cmd, run_opts, true);
  run_cmd->add_option("--trace", run_trace, "write byte-0 trace to this file");

  CommonOpts matrix_opts;
  std::string matrix_format = "text";
  unsigned matrix_jobs = 1;
  auto* matrix_cmd = app.add_subcommand("matrix", "run the full attack x defense matrix");
  matrix_cmd->add_option("--preset", matrix_opts.preset, "machine preset: skylake|xeon|amd");
  matrix_cmd->add_option("--seed", matrix_opts.seed, "jitter seed");
  matrix_cmd->add_option("--format", matrix_format, "text|csv")
      ->check(CLI::IsMember({"text", "csv"}));
  matrix_cmd->add_option("--jobs", matrix_jobs, "worker threads");

  std::string selftest_source = "all";
  auto* selftest_cmd = app.add_subcommand("selftest", "demonstrate misspeculation sources s1-s4");
  selftest_cmd->add_option("--source", selftest_source, "s1|s2|s3|s4|all")
      ->check(CLI::IsMember({"s1", "s2", "s3", "s4", "all"}));

  CommonOpts trace_opts;
  std::size_t trace_byte = 0;
  std::string trace_out;
  auto* trace_cmd = app.add_subcommand("trace", "dump the event trace for one leaked byte");
  add_common(trace_cmd, trace_opts, true);
  trace_cmd->add_option("--byte", trace_byte, "secret byte index");
  trace_cmd->add_option("--out", trace_out, "output file (default stdout)");

  try {
    app.parse(argc, argv);
    if (*run_cmd) return cmd_run(run_opts, run_trace);
    if (*matrix_cmd) return cmd_matrix(matrix_opts, matrix_format, matrix_jobs);
    if (*selftest_cmd) return cmd_selftest(selftest_source);
    if (*trace_cmd) return cmd_trace(trace_opts, trace_byte, trace_out);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
