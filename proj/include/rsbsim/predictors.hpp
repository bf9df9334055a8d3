#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <variant>
#include <vector>

#include "rsbsim/isa.hpp"

namespace rsbsim {

enum class Mode { User, Kernel, Enclave };

// Relative privilege for IBRS gating. Enclave sits between User and Kernel
// only so the ordering is total; no attack depends on the Enclave rank.
inline int privilege_rank(Mode m) {
  switch (m) {
    case Mode::User: return 0;
    case Mode::Enclave: return 1;
    case Mode::Kernel: return 2;
  }
  return 0;
}

enum class UnderfillMode { FallbackIndirect, NoPrediction };

struct Prediction {
  enum class Kind { Address, FallbackIndirect, NoPrediction };
  Kind kind = Kind::NoPrediction;
  Addr addr = 0;
};

// Fixed-capacity ring of predicted return addresses. Push past capacity
// overwrites the oldest entry; pop of an empty buffer reports the
// vendor-specific underfill behavior and leaves the buffer empty.
class ReturnStackBuffer {
 public:
  explicit ReturnStackBuffer(unsigned capacity = 16,
                             UnderfillMode underfill = UnderfillMode::FallbackIndirect);

  void push(Addr addr);
  Prediction predict_pop();
  void refill(Addr benign_addr);

  unsigned capacity() const { return capacity_; }
  unsigned fill() const { return fill_; }
  UnderfillMode underfill_mode() const { return underfill_; }
  // Top entry without consuming it; test/inspection plumbing.
  std::optional<Addr> peek() const;

 private:
  std::vector<Addr> entries_;
  unsigned capacity_;
  unsigned top_ = 0;  // index of the most recent entry
  unsigned fill_ = 0;
  UnderfillMode underfill_;
};

struct BtbOwner {
  int context_id = 0;
  Mode mode = Mode::User;
};

struct BtbGating {
  bool ibrs = false;
  bool stibp = false;
};

// Direct-mapped branch target buffer, index = pc mod size.
class BranchTargetBuffer {
 public:
  explicit BranchTargetBuffer(unsigned size = 256);

  void train(Addr pc, Addr target, BtbOwner owner);
  std::optional<Addr> lookup(Addr pc, BtbOwner requester, BtbGating gating) const;
  // IBPB: invalidate every entry not owned by surviving_owner.
  void barrier(int surviving_context);

  unsigned size() const { return static_cast<unsigned>(entries_.size()); }

 private:
  struct Entry {
    bool valid = false;
    Addr tag = 0;
    Addr target = 0;
    BtbOwner owner;
  };
  std::vector<Entry> entries_;
};

// Table of 2-bit saturating counters, initialized weakly not-taken.
class DirectionPredictor {
 public:
  explicit DirectionPredictor(unsigned size = 256);

  bool predict(Addr pc) const;
  void train(Addr pc, bool taken);

 private:
  std::vector<std::uint8_t> counters_;
};

}  // namespace rsbsim
