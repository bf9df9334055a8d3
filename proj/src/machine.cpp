#include "rsbsim/machine.hpp"

#include <algorithm>
#include <sstream>
#include <stdexcept>

namespace rsbsim {
namespace {

ProgramImage benign_gadget_image() {
  // Two-instruction delay loop; speculation parked here does nothing.
  ProgramImage img;
  img.base = kBenignGadgetAddr;
  img.entry = kBenignGadgetAddr;
  Instruction nop;
  nop.op = Opcode::Nop;
  Instruction loop;
  loop.op = Opcode::Jmp;
  loop.operands.push_back(Operand::make_imm(static_cast<std::int64_t>(kBenignGadgetAddr + 1)));
  img.instructions = {nop, loop};
  return img;
}

bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "off" || v == "no") return false;
  throw std::invalid_argument("config: bad boolean for '" + key + "': " + v);
}

}  // namespace

MachineConfig machine_preset(const std::string& name) {
  MachineConfig cfg;
  cfg.preset = name;
  if (name == "none") {
    return cfg;
  }
  if (name == "xeon") {
    // Table-1 Machine1: kernel patches but no RSB refilling.
    cfg.defenses.kpti = true;
    cfg.defenses.retpoline = true;
    cfg.defenses.rsb_refill_on_kernel_entry = false;
    return cfg;
  }
  if (name == "skylake") {
    cfg.defenses.kpti = true;
    cfg.defenses.retpoline = true;
    cfg.defenses.rsb_refill_on_kernel_entry = true;
    return cfg;
  }
  if (name == "amd") {
    cfg.rsb_underfill = UnderfillMode::NoPrediction;
    return cfg;
  }
  if (name == "fully_patched" || name == "fully-patched") {
    cfg.preset = "fully_patched";
    cfg.defenses = defense_preset_fully_patched();
    return cfg;
  }
  throw std::invalid_argument("unknown machine preset: " + name);
}

MachineConfig parse_machine_config(const std::string& text) {
  MachineConfig cfg;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    line_no++;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    auto eq = line.find('=');
    std::string trimmed = line;
    trimmed.erase(std::remove_if(trimmed.begin(), trimmed.end(), ::isspace), trimmed.end());
    if (trimmed.empty()) continue;
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(line_no) + ": expected key = value");
    auto strip = [](std::string s) {
      s.erase(std::remove_if(s.begin(), s.end(), ::isspace), s.end());
      return s;
    };
    std::string key = strip(line.substr(0, eq));
    std::string value = strip(line.substr(eq + 1));

    if (key == "preset") {
      cfg = machine_preset(value);
    } else if (key == "rsb_capacity") {
      cfg.rsb_capacity = static_cast<unsigned>(std::stoul(value));
    } else if (key == "rsb_underfill") {
      if (value == "fallback")
        cfg.rsb_underfill = UnderfillMode::FallbackIndirect;
      else if (value == "none")
        cfg.rsb_underfill = UnderfillMode::NoPrediction;
      else
        throw std::invalid_argument("config: rsb_underfill must be fallback|none");
    } else if (key == "cache_sets") {
      cfg.cache_sets = static_cast<unsigned>(std::stoul(value));
    } else if (key == "cache_ways") {
      cfg.cache_ways = static_cast<unsigned>(std::stoul(value));
    } else if (key == "line_size") {
      cfg.line_size = static_cast<unsigned>(std::stoul(value));
    } else if (key == "hit_latency") {
      cfg.hit_latency = static_cast<unsigned>(std::stoul(value));
    } else if (key == "miss_latency") {
      cfg.miss_latency = static_cast<unsigned>(std::stoul(value));
    } else if (key == "rob_limit") {
      cfg.rob_limit = static_cast<unsigned>(std::stoul(value));
    } else if (key == "seed") {
      cfg.seed = std::stoull(value);
    } else if (key == "jitter") {
      cfg.jitter = parse_bool(value, key);
    } else if (key == "lfence_pass") {
      cfg.defenses.lfence_pass = parse_bool(value, key);
    } else if (key == "ibrs") {
      cfg.defenses.ibrs = parse_bool(value, key);
    } else if (key == "stibp") {
      cfg.defenses.stibp = parse_bool(value, key);
    } else if (key == "ibpb_on_switch") {
      cfg.defenses.ibpb_on_switch = parse_bool(value, key);
    } else if (key == "retpoline") {
      cfg.defenses.retpoline = parse_bool(value, key);
    } else if (key == "rsb_refill_on_kernel_entry") {
      cfg.defenses.rsb_refill_on_kernel_entry = parse_bool(value, key);
    } else if (key == "rsb_refill_on_enclave_entry") {
      cfg.defenses.rsb_refill_on_enclave_entry = parse_bool(value, key);
    } else if (key == "smep") {
      cfg.defenses.smep = parse_bool(value, key);
    } else if (key == "smap") {
      cfg.defenses.smap = parse_bool(value, key);
    } else if (key == "kpti") {
      cfg.defenses.kpti = parse_bool(value, key);
    } else if (key == "meltdown_patched") {
      cfg.defenses.meltdown_patched = parse_bool(value, key);
    } else {
      throw std::invalid_argument("config: unknown key '" + key + "'");
    }
  }
  return cfg;
}

std::string machine_config_to_string(const MachineConfig& cfg) {
  std::ostringstream os;
  os << "preset = " << cfg.preset << "\n";
  os << "rsb_capacity = " << cfg.rsb_capacity << "\n";
  os << "rsb_underfill = "
     << (cfg.rsb_underfill == UnderfillMode::FallbackIndirect ? "fallback" : "none") << "\n";
  os << "cache_sets = " << cfg.cache_sets << "\n";
  os << "cache_ways = " << cfg.cache_ways << "\n";
  os << "line_size = " << cfg.line_size << "\n";
  os << "hit_latency = " << cfg.hit_latency << "\n";
  os << "miss_latency = " << cfg.miss_latency << "\n";
  os << "rob_limit = " << cfg.rob_limit << "\n";
  os << "seed = " << cfg.seed << "\n";
  os << "jitter = " << (cfg.jitter ? "true" : "false") << "\n";
  const DefenseConfig& d = cfg.defenses;
  auto b = [](bool v) { return v ? "true" : "false"; };
  os << "lfence_pass = " << b(d.lfence_pass) << "\n";
  os << "ibrs = " << b(d.ibrs) << "\n";
  os << "stibp = " << b(d.stibp) << "\n";
  os << "ibpb_on_switch = " << b(d.ibpb_on_switch) << "\n";
  os << "retpoline = " << b(d.retpoline) << "\n";
  os << "rsb_refill_on_kernel_entry = " << b(d.rsb_refill_on_kernel_entry) << "\n";
  os << "rsb_refill_on_enclave_entry = " << b(d.rsb_refill_on_enclave_entry) << "\n";
  os << "smep = " << b(d.smep) << "\n";
  os << "smap = " << b(d.smap) << "\n";
  os << "kpti = " << b(d.kpti) << "\n";
  os << "meltdown_patched = " << b(d.meltdown_patched) << "\n";
  return os.str();
}

Machine::Machine(const MachineConfig& config)
    : cache(CacheGeometry{config.cache_sets, config.cache_ways, config.line_size},
            config.hit_latency, config.miss_latency),
      rsb(config.rsb_capacity, config.rsb_underfill),
      btb(256),
      dirpred(256),
      defenses(config.defenses),
      config_(config),
      rng_(config.seed) {
  if (config.cache_ways == 0 || (config.cache_ways & (config.cache_ways - 1)) != 0)
    throw std::invalid_argument("cache_ways must be a power of two");
  cache.set_jitter_permille(config.jitter ? 100 : 0);
  map_region(kBenignGadgetAddr, kPageSize, true, false, true, Domain::Kernel);
  install_code(benign_gadget_image(), -1);
}

void Machine::map_region(Addr base, std::size_t len, bool read, bool write, bool exec,
                         Domain domain, int address_space) {
  if (base % kPageSize != 0)
    throw std::invalid_argument("map_region: base must be 4096-aligned");
  if (len == 0) throw std::invalid_argument("map_region: empty region");
  len = (len + kPageSize - 1) / kPageSize * kPageSize;
  for (const auto& p : pages_) {
    bool same_view = p.address_space == -1 || address_space == -1 ||
                     p.address_space == address_space;
    if (same_view && base < p.base + p.len && p.base < base + len)
      throw std::invalid_argument("map_region: overlapping pages");
  }
  PageDescriptor page;
  page.base = base;
  page.len = len;
  page.read = read;
  page.write = write;
  page.exec = exec;
  page.domain = domain;
  page.address_space = (domain == Domain::Kernel || domain == Domain::Enclave) ? -1 : address_space;
  page.mapped_in_user = domain == Domain::Kernel ? !defenses.kpti : true;
  // Enclave pages are never writable through the user mapping.
  page.bytes = std::make_shared<std::vector<std::uint8_t>>(len, 0);
  pages_.push_back(std::move(page));
}

const PageDescriptor* Machine::find_page(int address_space, Addr addr) const {
  for (const auto& p : pages_) {
    if (!p.contains(addr)) continue;
    if (p.address_space == -1 || p.address_space == address_space) return &p;
  }
  return nullptr;
}

AccessDecision Machine::check_access(int address_space, Mode mode, Addr addr,
                                     AccessKind kind) const {
  AccessDecision d;
  const PageDescriptor* p = find_page(address_space, addr);
  if (!p) return d;
  d.page = p;
  if (p->domain == Domain::Kernel && mode == Mode::User) {
    d.status = p->mapped_in_user ? AccessStatus::Privileged : AccessStatus::Unmapped;
    return d;
  }
  if (p->domain == Domain::Kernel && mode == Mode::Enclave) {
    d.status = AccessStatus::Privileged;
    return d;
  }
  if (p->domain == Domain::Enclave && mode != Mode::Enclave) {
    d.status = AccessStatus::Privileged;
    return d;
  }
  bool ok = kind == AccessKind::Read ? p->read : kind == AccessKind::Write ? p->write : p->exec;
  d.status = ok ? AccessStatus::Ok : AccessStatus::NoPerm;
  return d;
}

std::uint8_t Machine::read_byte(int address_space, Addr addr) const {
  const PageDescriptor* p = find_page(address_space, addr);
  if (!p) throw std::out_of_range("read_byte: unmapped address");
  return (*p->bytes)[addr - p->base];
}

void Machine::write_byte(int address_space, Addr addr, std::uint8_t v) {
  const PageDescriptor* p = find_page(address_space, addr);
  if (!p) throw std::out_of_range("write_byte: unmapped address");
  (*p->bytes)[addr - p->base] = v;
}

Word Machine::read_word(int address_space, Addr addr) const {
  Word v = 0;
  for (unsigned i = 0; i < kWordSize; i++)
    v |= static_cast<Word>(read_byte(address_space, addr + i)) << (8 * i);
  return v;
}

void Machine::write_word(int address_space, Addr addr, Word v) {
  for (unsigned i = 0; i < kWordSize; i++)
    write_byte(address_space, addr + i, static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

void Machine::write_bytes(int address_space, Addr addr, const std::vector<std::uint8_t>& bytes) {
  for (size_t i = 0; i < bytes.size(); i++) write_byte(address_space, addr + i, bytes[i]);
}

void Machine::install_code(const ProgramImage& image, int address_space) {
  auto& space = code_[address_space];
  for (size_t k = 0; k < image.instructions.size(); k++)
    space[image.base + k] = image.instructions[k];
  if (!image.data.empty()) write_bytes(address_space == -1 ? 0 : address_space, image.data_base, image.data);
}

const Instruction* Machine::fetch(int address_space, Addr pc) const {
  auto it = code_.find(address_space);
  if (it != code_.end()) {
    auto ii = it->second.find(pc);
    if (ii != it->second.end()) return &ii->second;
  }
  it = code_.find(-1);
  if (it != code_.end()) {
    auto ii = it->second.find(pc);
    if (ii != it->second.end()) return &ii->second;
  }
  return nullptr;
}

int Machine::spawn_context(const ProgramImage& image, Mode mode, int address_space) {
  {
    AccessDecision d = check_access(address_space, mode, image.entry, AccessKind::Fetch);
    if (d.status == AccessStatus::Unmapped)
      throw std::invalid_argument("spawn_context: entry address is unmapped");
  }
  int id = static_cast<int>(contexts_.size());
  const PageDescriptor* code_page = find_page(address_space, image.base);
  int code_space = (code_page && (code_page->domain == Domain::Kernel ||
                                  code_page->domain == Domain::Enclave))
                       ? -1
                       : address_space;
  install_code(image, code_space);

  Context c;
  c.id = id;
  c.mode = mode;
  c.pc = image.entry;
  c.address_space = address_space;

  Addr ustack = kUserStackRegion + static_cast<Addr>(id) * kPageSize;
  if (!find_page(address_space, ustack))
    map_region(ustack, kPageSize, true, true, false, Domain::User, address_space);
  c.regs[kStackPointer] = ustack + kPageSize;

  Addr kstack = kKernelStackRegion + static_cast<Addr>(id) * kPageSize;
  if (!find_page(address_space, kstack))
    map_region(kstack, kPageSize, true, true, false, Domain::Kernel);
  c.kernel_stack_top = kstack + kPageSize;

  contexts_.push_back(std::move(c));
  return id;
}

void Machine::context_switch(int to) {
  if (to < 0 || to >= static_cast<int>(contexts_.size()))
    throw std::invalid_argument("context_switch: unknown context id");
  emit(TraceEvent::Kind::CtxSwitch, contexts_[to].pc, "to=" + std::to_string(to));
  // Switches always transit the kernel, so kernel-entry hooks fire here.
  on_privilege_transition(*this, TransitionKind::ContextSwitch, to);
  current_ = to;
}

void Machine::register_syscall(int number, Addr handler) { syscalls_[number] = handler; }

std::optional<Addr> Machine::syscall_handler(int number) const {
  auto it = syscalls_.find(number);
  if (it == syscalls_.end()) return std::nullopt;
  return it->second;
}

ArchSnapshot Machine::snapshot_arch_state() const {
  ArchSnapshot s;
  for (const auto& c : contexts_) {
    ContextArch a;
    a.regs = c.regs;
    a.pc = c.pc;
    a.zf = c.zf;
    a.mode = c.mode;
    a.halted = c.halted;
    a.fault = c.fault;
    s.contexts.push_back(a);
  }
  for (const auto& p : pages_) {
    if (!p.write) continue;
    s.memory[{p.address_space, p.base}] = *p.bytes;
  }
  return s;
}

AccessResult Machine::timed_access(Addr addr) {
  return cache.access(addr, config_.jitter ? rng_() : 0);
}

void Machine::emit(TraceEvent::Kind kind, Addr pc, std::string detail) {
  if (!trace_sink) return;
  trace_sink->push_back(TraceEvent{clock, current_, pc, kind, std::move(detail)});
}

}  // namespace rsbsim
