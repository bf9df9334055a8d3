#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace rsbsim {

using Addr = std::uint64_t;
using Word = std::uint64_t;

// r15 is the architectural stack pointer.
inline constexpr int kStackPointer = 15;
inline constexpr int kNumRegisters = 16;
inline constexpr Addr kDefaultCodeBase = 0x1000;
inline constexpr unsigned kWordSize = 8;

enum class Opcode {
  Mov,
  Load,
  Store,
  Add,
  Sub,
  And,
  Shl,
  Cmp,
  Jz,
  Jnz,
  Jmp,
  Call,
  Ret,
  Push,
  Pop,
  Clflush,
  Rdtscp,
  Lfence,
  Cpuid,
  Syscall,
  Sysret,
  Eenter,
  Eexit,
  Yield,
  Halt,
  Nop,
};

const char* mnemonic(Opcode op);

struct SourceSpan {
  int line = 0;
  int column = 0;
};

struct Operand {
  enum class Kind { Reg, Imm, Mem, Label };

  Kind kind = Kind::Imm;
  int reg = 0;               // Reg: register id; Mem: base register
  std::int64_t value = 0;    // Imm: value; Mem: displacement; Label: resolved address
  std::string label;         // Label: symbolic name (kept after resolution)

  static Operand make_reg(int r);
  static Operand make_imm(std::int64_t v);
  static Operand make_mem(int base, std::int64_t disp);
  static Operand make_label(std::string name, Addr resolved);

  bool operator==(const Operand& o) const {
    return kind == o.kind && reg == o.reg && value == o.value && label == o.label;
  }
};

struct Instruction {
  Opcode op = Opcode::Nop;
  std::vector<Operand> operands;
  SourceSpan span;

  // Span is diagnostic metadata, not program identity.
  bool operator==(const Instruction& o) const {
    return op == o.op && operands == o.operands;
  }
};

// One address unit per instruction: address(instr k) = base + k.
struct ProgramImage {
  std::vector<Instruction> instructions;
  Addr base = kDefaultCodeBase;
  Addr entry = kDefaultCodeBase;
  std::map<std::string, Addr> labels;      // code labels, base <= addr < base + size
  std::map<std::string, Addr> constants;   // .equ symbols (may be external addresses)
  Addr data_base = 0;
  std::vector<std::uint8_t> data;

  Addr end() const { return base + instructions.size(); }
  bool contains(Addr a) const { return a >= base && a < end(); }

  bool operator==(const ProgramImage& o) const {
    return instructions == o.instructions && base == o.base && entry == o.entry &&
           labels == o.labels && constants == o.constants && data_base == o.data_base &&
           data == o.data;
  }
};

class AsmError : public std::runtime_error {
 public:
  AsmError(const std::string& msg, SourceSpan span)
      : std::runtime_error(msg + " (line " + std::to_string(span.line) + ", col " +
                           std::to_string(span.column) + ")"),
        span_(span) {}

  SourceSpan span() const { return span_; }

 private:
  SourceSpan span_;
};

// Assembles line-oriented source: optional `label:`, mnemonic, comma-separated
// operands, `;` comments, and .org/.entry/.data/.text/.byte/.word/.ascii/.equ
// directives. Throws AsmError with a source position on any malformed input.
ProgramImage assemble(std::string_view source);

// Same, but the .org base (default 0x1000) is overridden.
ProgramImage assemble(std::string_view source, Addr base_override);

// Emits re-assemblable text. Labels are regenerated as L_<addr> for referenced
// addresses without an original name.
std::string disassemble(const ProgramImage& image);

}  // namespace rsbsim
