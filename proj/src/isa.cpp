#include "rsbsim/isa.hpp"

#include <algorithm>
#include <cctype>
#include <optional>
#include <sstream>

namespace rsbsim {
namespace {

struct OpInfo {
  Opcode op;
  const char* name;
  // Signature string, one char per operand:
  //   r = register, v = register or immediate/label, m = memory,
  //   t = direct target (label or immediate), b = branch target or register,
  //   i = immediate
  const char* sig;
};

constexpr OpInfo kOps[] = {
    {Opcode::Mov, "mov", "rv"},     {Opcode::Load, "load", "rm"},
    {Opcode::Store, "store", "mr"}, {Opcode::Add, "add", "rv"},
    {Opcode::Sub, "sub", "rv"},     {Opcode::And, "and", "rv"},
    {Opcode::Shl, "shl", "rv"},     {Opcode::Cmp, "cmp", "rv"},
    {Opcode::Jz, "jz", "t"},        {Opcode::Jnz, "jnz", "t"},
    {Opcode::Jmp, "jmp", "b"},      {Opcode::Call, "call", "b"},
    {Opcode::Ret, "ret", ""},       {Opcode::Push, "push", "v"},
    {Opcode::Pop, "pop", "r"},      {Opcode::Clflush, "clflush", "m"},
    {Opcode::Rdtscp, "rdtscp", "r"},{Opcode::Lfence, "lfence", ""},
    {Opcode::Cpuid, "cpuid", ""},   {Opcode::Syscall, "syscall", "i"},
    {Opcode::Sysret, "sysret", ""}, {Opcode::Eenter, "eenter", "t"},
    {Opcode::Eexit, "eexit", ""},   {Opcode::Yield, "yield", ""},
    {Opcode::Halt, "halt", ""},     {Opcode::Nop, "nop", ""},
};

const OpInfo* find_op(std::string_view name) {
  for (const auto& o : kOps)
    if (name == o.name) return &o;
  return nullptr;
}

const OpInfo& info_for(Opcode op) {
  for (const auto& o : kOps)
    if (o.op == op) return o;
  throw std::logic_error("bad opcode");
}

bool is_ident_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_' || c == '.'; }
bool is_ident_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.'; }

struct Token {
  enum class Kind { Ident, Number, Punct, End } kind = Kind::End;
  std::string text;
  std::int64_t number = 0;
  int column = 0;
};

class Lexer {
 public:
  Lexer(std::string_view line, int line_no) : line_(line), line_no_(line_no) { advance(); }

  const Token& peek() const { return tok_; }
  Token next() {
    Token t = tok_;
    advance();
    return t;
  }
  SourceSpan span(const Token& t) const { return {line_no_, t.column}; }
  SourceSpan here() const { return {line_no_, tok_.column}; }

 private:
  void advance() {
    while (pos_ < line_.size() && std::isspace(static_cast<unsigned char>(line_[pos_]))) pos_++;
    tok_ = Token{};
    tok_.column = static_cast<int>(pos_) + 1;
    if (pos_ >= line_.size() || line_[pos_] == ';') {
      tok_.kind = Token::Kind::End;
      return;
    }
    char c = line_[pos_];
    if (is_ident_start(c)) {
      size_t start = pos_;
      while (pos_ < line_.size() && is_ident_char(line_[pos_])) pos_++;
      tok_.kind = Token::Kind::Ident;
      tok_.text = std::string(line_.substr(start, pos_ - start));
      return;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) ||
        (c == '-' && pos_ + 1 < line_.size() &&
         std::isdigit(static_cast<unsigned char>(line_[pos_ + 1])))) {
      size_t start = pos_;
      if (c == '-') pos_++;
      int base = 10;
      if (pos_ + 1 < line_.size() && line_[pos_] == '0' &&
          (line_[pos_ + 1] == 'x' || line_[pos_ + 1] == 'X')) {
        base = 16;
        pos_ += 2;
      }
      size_t digits = pos_;
      while (pos_ < line_.size() && std::isxdigit(static_cast<unsigned char>(line_[pos_]))) pos_++;
      if (pos_ == digits)
        throw AsmError("malformed number", {line_no_, static_cast<int>(start) + 1});
      std::string text(line_.substr(start, pos_ - start));
      tok_.kind = Token::Kind::Number;
      tok_.text = text;
      std::uint64_t mag = std::stoull(std::string(line_.substr(digits, pos_ - digits)), nullptr, base);
      tok_.number = (c == '-') ? -static_cast<std::int64_t>(mag) : static_cast<std::int64_t>(mag);
      return;
    }
    if (c == '"') {
      size_t start = ++pos_;
      while (pos_ < line_.size() && line_[pos_] != '"') pos_++;
      if (pos_ >= line_.size())
        throw AsmError("unterminated string", {line_no_, static_cast<int>(start)});
      tok_.kind = Token::Kind::Punct;
      tok_.text = "\"" + std::string(line_.substr(start, pos_ - start));
      pos_++;
      return;
    }
    tok_.kind = Token::Kind::Punct;
    tok_.text = std::string(1, c);
    pos_++;
  }

  std::string_view line_;
  int line_no_;
  size_t pos_ = 0;
  Token tok_;
};

std::optional<int> parse_register(std::string_view s) {
  if (s.size() < 2 || s.size() > 3 || (s[0] != 'r' && s[0] != 'R')) return std::nullopt;
  int v = 0;
  for (size_t i = 1; i < s.size(); i++) {
    if (!std::isdigit(static_cast<unsigned char>(s[i]))) return std::nullopt;
    v = v * 10 + (s[i] - '0');
  }
  if (v >= kNumRegisters) return std::nullopt;
  return v;
}

// Unresolved operand: labels are kept symbolic until pass 2.
struct RawOperand {
  Operand op;
  bool needs_resolve = false;
  SourceSpan span;
};

RawOperand parse_operand(Lexer& lex) {
  RawOperand r;
  r.span = lex.here();
  const Token& t = lex.peek();
  if (t.kind == Token::Kind::Number) {
    r.op = Operand::make_imm(lex.next().number);
    return r;
  }
  if (t.kind == Token::Kind::Ident) {
    Token id = lex.next();
    if (auto reg = parse_register(id.text)) {
      r.op = Operand::make_reg(*reg);
      return r;
    }
    r.op = Operand::make_label(id.text, 0);
    r.needs_resolve = true;
    return r;
  }
  if (t.kind == Token::Kind::Punct && t.text == "[") {
    lex.next();
    Token base = lex.next();
    auto reg = base.kind == Token::Kind::Ident ? parse_register(base.text) : std::nullopt;
    if (!reg) throw AsmError("expected base register in memory operand", lex.span(base));
    std::int64_t disp = 0;
    Token p = lex.next();
    if (p.kind == Token::Kind::Punct && (p.text == "+" || p.text == "-")) {
      Token d = lex.next();
      if (d.kind != Token::Kind::Number)
        throw AsmError("expected displacement", lex.span(d));
      disp = p.text == "+" ? d.number : -d.number;
      p = lex.next();
    }
    if (!(p.kind == Token::Kind::Punct && p.text == "]"))
      throw AsmError("expected ']' in memory operand", lex.span(p));
    r.op = Operand::make_mem(*reg, disp);
    return r;
  }
  throw AsmError("malformed operand", r.span);
}

bool operand_matches(char sig, const Operand& op) {
  using K = Operand::Kind;
  switch (sig) {
    case 'r': return op.kind == K::Reg;
    case 'v': return op.kind == K::Reg || op.kind == K::Imm || op.kind == K::Label;
    case 'm': return op.kind == K::Mem;
    case 't': return op.kind == K::Imm || op.kind == K::Label;
    case 'b': return op.kind == K::Imm || op.kind == K::Label || op.kind == K::Reg;
    case 'i': return op.kind == K::Imm;
    default: return false;
  }
}

struct PendingInstr {
  Instruction instr;
  std::vector<SourceSpan> operand_spans;
};

std::string format_operand(const Operand& op) {
  std::ostringstream os;
  switch (op.kind) {
    case Operand::Kind::Reg:
      os << "r" << op.reg;
      break;
    case Operand::Kind::Imm:
      if (op.value < 0)
        os << op.value;
      else
        os << "0x" << std::hex << op.value;
      break;
    case Operand::Kind::Mem:
      os << "[r" << op.reg;
      if (op.value > 0) os << "+" << op.value;
      if (op.value < 0) os << op.value;
      os << "]";
      break;
    case Operand::Kind::Label:
      os << op.label;
      break;
  }
  return os.str();
}

}  // namespace

const char* mnemonic(Opcode op) { return info_for(op).name; }

Operand Operand::make_reg(int r) {
  Operand o;
  o.kind = Kind::Reg;
  o.reg = r;
  return o;
}

Operand Operand::make_imm(std::int64_t v) {
  Operand o;
  o.kind = Kind::Imm;
  o.value = v;
  return o;
}

Operand Operand::make_mem(int base, std::int64_t disp) {
  Operand o;
  o.kind = Kind::Mem;
  o.reg = base;
  o.value = disp;
  return o;
}

Operand Operand::make_label(std::string name, Addr resolved) {
  Operand o;
  o.kind = Kind::Label;
  o.label = std::move(name);
  o.value = static_cast<std::int64_t>(resolved);
  return o;
}

ProgramImage assemble(std::string_view source) { return assemble(source, 0); }

ProgramImage assemble(std::string_view source, Addr base_override) {
  ProgramImage image;
  image.base = base_override ? base_override : kDefaultCodeBase;
  bool base_fixed = base_override != 0;

  std::vector<PendingInstr> pending;
  std::string entry_label;
  std::int64_t entry_value = -1;
  SourceSpan entry_span;
  bool in_data = false;

  std::istringstream in{std::string(source)};
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    line_no++;
    Lexer lex(line, line_no);
    if (lex.peek().kind == Token::Kind::End) continue;

    // Optional leading labels.
    while (lex.peek().kind == Token::Kind::Ident && lex.peek().text[0] != '.') {
      Token id = lex.peek();
      // Look ahead for ':' without consuming the mnemonic.
      Lexer probe = lex;
      probe.next();
      if (probe.peek().kind == Token::Kind::Punct && probe.peek().text == ":") {
        lex.next();
        lex.next();
        if (parse_register(id.text))
          throw AsmError("register name used as label", lex.span(id));
        if (image.labels.count(id.text) || image.constants.count(id.text))
          throw AsmError("duplicate label '" + id.text + "'", lex.span(id));
        image.labels[id.text] = pending.size();  // index; rebased after pass 1
        in_data = false;
      } else {
        break;
      }
    }
    if (lex.peek().kind == Token::Kind::End) continue;

    Token head = lex.next();
    if (head.kind != Token::Kind::Ident)
      throw AsmError("expected mnemonic or directive", lex.span(head));

    if (head.text[0] == '.') {
      if (head.text == ".org") {
        Token n = lex.next();
        if (n.kind != Token::Kind::Number) throw AsmError(".org expects an address", lex.span(n));
        if (!base_fixed) image.base = static_cast<Addr>(n.number);
      } else if (head.text == ".entry") {
        Token n = lex.next();
        if (n.kind == Token::Kind::Number) {
          entry_value = n.number;
        } else if (n.kind == Token::Kind::Ident) {
          entry_label = n.text;
          entry_span = lex.span(n);
        } else {
          throw AsmError(".entry expects a label or address", lex.span(n));
        }
      } else if (head.text == ".data") {
        Token n = lex.next();
        if (n.kind != Token::Kind::Number) throw AsmError(".data expects a base address", lex.span(n));
        image.data_base = static_cast<Addr>(n.number);
        in_data = true;
      } else if (head.text == ".text") {
        in_data = false;
      } else if (head.text == ".byte" || head.text == ".word") {
        if (!in_data) throw AsmError(head.text + " outside .data section", lex.span(head));
        bool first = true;
        while (lex.peek().kind != Token::Kind::End) {
          if (!first) {
            Token c = lex.next();
            if (!(c.kind == Token::Kind::Punct && c.text == ","))
              throw AsmError("expected ','", lex.span(c));
          }
          first = false;
          Token n = lex.next();
          if (n.kind != Token::Kind::Number) throw AsmError("expected number", lex.span(n));
          if (head.text == ".byte") {
            image.data.push_back(static_cast<std::uint8_t>(n.number & 0xff));
          } else {
            std::uint64_t v = static_cast<std::uint64_t>(n.number);
            for (unsigned i = 0; i < kWordSize; i++) image.data.push_back((v >> (8 * i)) & 0xff);
          }
        }
      } else if (head.text == ".ascii") {
        if (!in_data) throw AsmError(".ascii outside .data section", lex.span(head));
        Token s = lex.next();
        if (s.kind != Token::Kind::Punct || s.text.empty() || s.text[0] != '"')
          throw AsmError(".ascii expects a string", lex.span(s));
        for (size_t i = 1; i < s.text.size(); i++) image.data.push_back(s.text[i]);
      } else if (head.text == ".equ") {
        Token name = lex.next();
        if (name.kind != Token::Kind::Ident) throw AsmError(".equ expects a name", lex.span(name));
        Token c = lex.next();
        if (!(c.kind == Token::Kind::Punct && c.text == ","))
          throw AsmError("expected ',' in .equ", lex.span(c));
        Token n = lex.next();
        if (n.kind != Token::Kind::Number) throw AsmError(".equ expects a value", lex.span(n));
        if (image.labels.count(name.text) || image.constants.count(name.text))
          throw AsmError("duplicate label '" + name.text + "'", lex.span(name));
        image.constants[name.text] = static_cast<Addr>(n.number);
      } else {
        throw AsmError("unknown directive '" + head.text + "'", lex.span(head));
      }
      if (lex.peek().kind != Token::Kind::End && head.text != ".byte" && head.text != ".word")
        throw AsmError("trailing tokens after directive", lex.here());
      continue;
    }

    const OpInfo* oi = find_op(head.text);
    if (!oi) throw AsmError("unknown mnemonic '" + head.text + "'", lex.span(head));
    in_data = false;

    PendingInstr pi;
    pi.instr.op = oi->op;
    pi.instr.span = lex.span(head);
    bool first = true;
    while (lex.peek().kind != Token::Kind::End) {
      if (!first) {
        Token c = lex.next();
        if (!(c.kind == Token::Kind::Punct && c.text == ","))
          throw AsmError("expected ','", lex.span(c));
      }
      first = false;
      RawOperand ro = parse_operand(lex);
      pi.instr.operands.push_back(ro.op);
      pi.operand_spans.push_back(ro.span);
    }

    size_t want = std::string_view(oi->sig).size();
    if (pi.instr.operands.size() != want)
      throw AsmError(std::string("'") + oi->name + "' expects " + std::to_string(want) +
                         " operand(s), got " + std::to_string(pi.instr.operands.size()),
                     pi.instr.span);
    for (size_t i = 0; i < want; i++) {
      if (!operand_matches(oi->sig[i], pi.instr.operands[i]))
        throw AsmError(std::string("operand ") + std::to_string(i + 1) + " of '" + oi->name +
                           "' has the wrong kind",
                       pi.operand_spans[i]);
    }
    pending.push_back(std::move(pi));
  }

  // Rebase label indices to absolute addresses.
  for (auto& [name, idx] : image.labels) idx += image.base;

  // Pass 2: resolve label operands.
  for (size_t k = 0; k < pending.size(); k++) {
    auto& pi = pending[k];
    for (size_t i = 0; i < pi.instr.operands.size(); i++) {
      Operand& op = pi.instr.operands[i];
      if (op.kind != Operand::Kind::Label) continue;
      auto it = image.labels.find(op.label);
      if (it != image.labels.end()) {
        op.value = static_cast<std::int64_t>(it->second);
        continue;
      }
      auto ct = image.constants.find(op.label);
      if (ct != image.constants.end()) {
        op.value = static_cast<std::int64_t>(ct->second);
        continue;
      }
      throw AsmError("undefined label '" + op.label + "'", pi.operand_spans[i]);
    }
    image.instructions.push_back(std::move(pi.instr));
  }

  image.entry = image.base;
  if (!entry_label.empty()) {
    auto it = image.labels.find(entry_label);
    if (it == image.labels.end()) {
      auto ct = image.constants.find(entry_label);
      if (ct == image.constants.end())
        throw AsmError("undefined label '" + entry_label + "'", entry_span);
      image.entry = ct->second;
    } else {
      image.entry = it->second;
    }
  } else if (entry_value >= 0) {
    image.entry = static_cast<Addr>(entry_value);
  }
  return image;
}

std::string disassemble(const ProgramImage& image) {
  std::ostringstream os;
  os << ".org 0x" << std::hex << image.base << std::dec << "\n";
  for (const auto& [name, value] : image.constants)
    os << ".equ " << name << ", 0x" << std::hex << value << std::dec << "\n";

  // Name table: original labels, plus generated names for referenced
  // in-image addresses that have none.
  std::map<Addr, std::vector<std::string>> names;
  for (const auto& [name, addr] : image.labels) names[addr].push_back(name);
  auto ensure_name = [&](Addr a) {
    if (!image.contains(a) || names.count(a)) return;
    names[a].push_back("L_" + std::to_string(a));
  };
  for (const auto& instr : image.instructions)
    for (const auto& op : instr.operands)
      if (op.kind == Operand::Kind::Label && op.label.empty())
        ensure_name(static_cast<Addr>(op.value));

  {
    auto it = names.find(image.entry);
    if (it != names.end())
      os << ".entry " << it->second.front() << "\n";
    else
      os << ".entry 0x" << std::hex << image.entry << std::dec << "\n";
  }

  for (size_t k = 0; k < image.instructions.size(); k++) {
    Addr a = image.base + k;
    auto it = names.find(a);
    if (it != names.end())
      for (const auto& n : it->second) os << n << ":\n";
    const Instruction& instr = image.instructions[k];
    os << "    " << mnemonic(instr.op);
    for (size_t i = 0; i < instr.operands.size(); i++) {
      const Operand& op = instr.operands[i];
      os << (i == 0 ? " " : ", ");
      if (op.kind == Operand::Kind::Label && op.label.empty()) {
        auto nt = names.find(static_cast<Addr>(op.value));
        if (nt != names.end()) {
          os << nt->second.front();
          continue;
        }
      }
      os << format_operand(op);
    }
    os << "\n";
  }

  {
    auto it = names.find(image.end());
    if (it != names.end())
      for (const auto& n : it->second) os << n << ":\n";
  }

  if (!image.data.empty()) {
    os << ".data 0x" << std::hex << image.data_base << std::dec << "\n";
    for (size_t i = 0; i < image.data.size(); i += 16) {
      os << ".byte ";
      for (size_t j = i; j < std::min(i + 16, image.data.size()); j++) {
        if (j != i) os << ", ";
        os << static_cast<unsigned>(image.data[j]);
      }
      os << "\n";
    }
  }
  return os.str();
}

}  // namespace rsbsim
