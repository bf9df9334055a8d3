#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "helpers.hpp"
#include "rsbsim/machine.hpp"
#include "rsbsim/pipeline.hpp"

using namespace rsbsim;
using namespace rsbsim::testutil;

TEST_CASE("config text round-trips for every preset") {
  for (const char* name : {"none", "xeon", "skylake", "amd", "fully_patched"}) {
    MachineConfig cfg = machine_preset(name);
    MachineConfig back = parse_machine_config(machine_config_to_string(cfg));
    CHECK(machine_config_to_string(back) == machine_config_to_string(cfg));
    CHECK(back.defenses == cfg.defenses);
    CHECK(back.rsb_underfill == cfg.rsb_underfill);
  }
  CHECK_THROWS_AS(machine_preset("486"), std::invalid_argument);
}

TEST_CASE("preset characteristics") {
  CHECK(machine_preset("amd").rsb_underfill == UnderfillMode::NoPrediction);
  CHECK(machine_preset("xeon").rsb_underfill == UnderfillMode::FallbackIndirect);
  CHECK(!machine_preset("xeon").defenses.rsb_refill_on_kernel_entry);
  CHECK(machine_preset("skylake").defenses.rsb_refill_on_kernel_entry);
  CHECK(machine_preset("fully_patched").defenses.smep);
  CHECK(!machine_preset("fully_patched").defenses.rsb_refill_on_enclave_entry);
}

TEST_CASE("config parser rejects junk") {
  CHECK_THROWS_AS(parse_machine_config("no_such_key = 1\n"), std::invalid_argument);
  CHECK_THROWS_AS(parse_machine_config("jitter = maybe\n"), std::invalid_argument);
  CHECK_THROWS_AS(parse_machine_config("rsb_underfill\n"), std::invalid_argument);
}

TEST_CASE("page permissions and domains") {
  Machine m(machine_preset("none"));
  m.map_region(0x8000, kPageSize, true, false, false, Domain::User, 0);
  m.map_region(0x10000, kPageSize, true, true, false, Domain::Kernel);

  CHECK(m.check_access(0, Mode::User, 0x8010, AccessKind::Read).status == AccessStatus::Ok);
  CHECK(m.check_access(0, Mode::User, 0x8010, AccessKind::Write).status == AccessStatus::NoPerm);
  CHECK(m.check_access(0, Mode::User, 0x8010, AccessKind::Fetch).status == AccessStatus::NoPerm);
  CHECK(m.check_access(0, Mode::User, 0x9000, AccessKind::Read).status == AccessStatus::Unmapped);
  // kernel page from user mode, no KPTI: mapped but privileged
  CHECK(m.check_access(0, Mode::User, 0x10000, AccessKind::Read).status ==
        AccessStatus::Privileged);
  CHECK(m.check_access(0, Mode::Kernel, 0x10000, AccessKind::Write).status == AccessStatus::Ok);

  CHECK_THROWS_AS(m.map_region(0x8000, kPageSize, true, true, true, Domain::User, 0),
                  std::invalid_argument);
  CHECK_THROWS_AS(m.map_region(0x8008, 16, true, true, false, Domain::User, 0),
                  std::invalid_argument);
}

TEST_CASE("kpti hides kernel pages from user mode entirely") {
  MachineConfig cfg = machine_preset("none");
  cfg.defenses.kpti = true;
  Machine m(cfg);
  m.map_region(0x10000, kPageSize, true, true, false, Domain::Kernel);
  CHECK(m.check_access(0, Mode::User, 0x10000, AccessKind::Read).status == AccessStatus::Unmapped);
  CHECK(m.check_access(0, Mode::Kernel, 0x10000, AccessKind::Read).status == AccessStatus::Ok);
}

TEST_CASE("address spaces isolate private pages") {
  Machine m(machine_preset("none"));
  m.map_region(0x8000, kPageSize, true, true, false, Domain::User, 0);
  CHECK(m.check_access(1, Mode::User, 0x8000, AccessKind::Read).status == AccessStatus::Unmapped);
  m.map_region(0x9000, kPageSize, true, true, false, Domain::User, -1);
  CHECK(m.check_access(1, Mode::User, 0x9000, AccessKind::Read).status == AccessStatus::Ok);
}

TEST_CASE("word plumbing is little-endian and symmetric") {
  Machine m(machine_preset("none"));
  m.map_region(0x8000, kPageSize, true, true, false, Domain::User, 0);
  m.write_word(0, 0x8000, 0x1122334455667788ULL);
  CHECK(m.read_byte(0, 0x8000) == 0x88);
  CHECK(m.read_word(0, 0x8000) == 0x1122334455667788ULL);
  CHECK_THROWS_AS(m.read_byte(0, 0x9000), std::out_of_range);
}

TEST_CASE("determinism: identical inputs give identical runs") {
  const char* src = R"(
main:
  call f
  mov r1, 7
  halt
f:
  load r2, [r13 + 0]
  ret
)";
  auto once = [&] {
    MachineConfig cfg = machine_preset("none");
    cfg.jitter = true;
    cfg.seed = 42;
    Machine m(cfg);
    m.map_region(0x8000, kPageSize, true, true, false, Domain::User, 0);
    int id = load_user(m, src);
    m.context(id).regs[13] = 0x8000;
    return run(m, {{id, 100}}, 100000);
  };
  RunResult a = once();
  RunResult b = once();
  CHECK(a.final_snapshot == b.final_snapshot);
  CHECK(a.trace == b.trace);
  CHECK(a.cycles == b.cycles);
}

TEST_CASE("context switches preserve rsb contents when defenses are off") {
  Machine m(machine_preset("none"));
  load_user(m, "main:\n  halt\n");
  load_user(m, "main2:\n  halt\n", 1);
  m.rsb.push(0x111);
  m.rsb.push(0x222);
  m.context_switch(1);
  CHECK(m.rsb.fill() == 2);
  CHECK(m.rsb.peek() == 0x222);
}

TEST_CASE("context switches refill the rsb when the defense is on") {
  MachineConfig cfg = machine_preset("none");
  cfg.defenses.rsb_refill_on_kernel_entry = true;
  Machine m(cfg);
  load_user(m, "main:\n  halt\n");
  load_user(m, "main2:\n  halt\n", 1);
  m.rsb.push(0x111);
  m.context_switch(1);
  CHECK(m.rsb.fill() == m.rsb.capacity());
  CHECK(m.rsb.peek() == kBenignGadgetAddr);
}
