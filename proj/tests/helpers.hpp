#pragma once

#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "rsbsim/machine.hpp"
#include "rsbsim/pipeline.hpp"

namespace rsbsim::testutil {

// Maps the code page (read+exec) and spawns one user context.
inline int load_user(Machine& m, const ProgramImage& img, int address_space = 0) {
  Addr page = img.base & ~(kPageSize - 1);
  Addr end = (img.end() + kPageSize - 1) & ~(kPageSize - 1);
  if (!m.find_page(address_space, page))
    m.map_region(page, end - page, true, false, true, Domain::User, address_space);
  return m.spawn_context(img, Mode::User, address_space);
}

inline int load_user(Machine& m, const std::string& src, int address_space = 0) {
  return load_user(m, assemble(src), address_space);
}

// Architectural equality up to instruction addresses: registers, flags, mode,
// halt/fault status, and memory, but not pc (code transforms shift it).
inline bool arch_equal_modulo_pc(const ArchSnapshot& a, const ArchSnapshot& b) {
  if (a.contexts.size() != b.contexts.size()) return false;
  for (std::size_t i = 0; i < a.contexts.size(); i++) {
    const ContextArch& x = a.contexts[i];
    const ContextArch& y = b.contexts[i];
    if (x.regs != y.regs || x.zf != y.zf || x.mode != y.mode || x.halted != y.halted ||
        x.fault != y.fault)
      return false;
  }
  return a.memory == b.memory;
}

inline constexpr Addr kRandDataBase = 0x8000;

// Random programs for the run/reference oracle: arbitrary control flow is fine
// (the schedule budget bounds both interpreters identically), but rdtscp is
// excluded because the two interpreters deliberately disagree on timing.
// with_callret=false additionally drops call/ret, for code transforms whose
// remapping changes the numeric value of stacked return addresses.
inline std::string random_program(std::mt19937_64& rng, int length = 40,
                                  bool with_callret = true) {
  std::ostringstream os;
  auto r = [&](int n) { return int(rng() % n); };
  os << ".org 0x1000\n";
  os << "  mov r13, " << kRandDataBase << "\n";
  for (int k = 0; k < length; k++) {
    os << "L" << k << ":\n";
    int label = r(length);
    int op = r(20);
    if (!with_callret && (op == 9 || op == 10)) op = 18;
    switch (op) {
      case 0: os << "  mov r" << r(13) << ", " << r(1000) << "\n"; break;
      case 1: os << "  add r" << r(13) << ", r" << r(13) << "\n"; break;
      case 2: os << "  sub r" << r(13) << ", " << r(64) << "\n"; break;
      case 3: os << "  and r" << r(13) << ", " << r(256) << "\n"; break;
      case 4: os << "  shl r" << r(13) << ", " << r(8) << "\n"; break;
      case 5: os << "  cmp r" << r(13) << ", r" << r(13) << "\n"; break;
      case 6: os << "  jz L" << label << "\n"; break;
      case 7: os << "  jnz L" << label << "\n"; break;
      case 8: os << "  jmp L" << label << "\n"; break;
      case 9: os << "  call L" << label << "\n"; break;
      case 10: os << "  ret\n"; break;
      case 11: os << "  push r" << r(13) << "\n"; break;
      case 12: os << "  pop r" << r(13) << "\n"; break;
      case 13: os << "  load r" << r(13) << ", [r13 + " << r(64) * 8 << "]\n"; break;
      case 14: os << "  store [r13 + " << r(64) * 8 << "], r" << r(13) << "\n"; break;
      case 15: os << "  clflush [r13 + " << r(64) * 8 << "]\n"; break;
      case 16: os << "  lfence\n"; break;
      case 17: os << "  cpuid\n"; break;
      case 18: os << (r(4) == 0 ? "  halt\n" : "  nop\n"); break;
      default: os << "  nop\n"; break;
    }
  }
  os << "  halt\n";
  return os.str();
}

// Fresh machine pair for one oracle comparison; data page is shared layout.
inline Machine oracle_machine(const MachineConfig& cfg, const std::string& src) {
  Machine m(cfg);
  m.map_region(kRandDataBase, kPageSize, true, true, false, Domain::User, 0);
  load_user(m, src);
  return m;
}

}  // namespace rsbsim::testutil
