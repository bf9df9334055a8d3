#include "rsbsim/predictors.hpp"

#include <stdexcept>

namespace rsbsim {

ReturnStackBuffer::ReturnStackBuffer(unsigned capacity, UnderfillMode underfill)
    : capacity_(capacity), underfill_(underfill) {
  if (capacity_ < 4 || capacity_ > 64)
    throw std::invalid_argument("rsb capacity must be in [4, 64]");
  entries_.assign(capacity_, 0);
}

void ReturnStackBuffer::push(Addr addr) {
  top_ = (top_ + 1) % capacity_;
  entries_[top_] = addr;
  if (fill_ < capacity_) fill_++;
}

Prediction ReturnStackBuffer::predict_pop() {
  if (fill_ == 0) {
    Prediction p;
    p.kind = underfill_ == UnderfillMode::FallbackIndirect ? Prediction::Kind::FallbackIndirect
                                                          : Prediction::Kind::NoPrediction;
    return p;
  }
  Prediction p;
  p.kind = Prediction::Kind::Address;
  p.addr = entries_[top_];
  top_ = (top_ + capacity_ - 1) % capacity_;
  fill_--;
  return p;
}

void ReturnStackBuffer::refill(Addr benign_addr) {
  entries_.assign(capacity_, benign_addr);
  fill_ = capacity_;
  top_ = 0;
}

std::optional<Addr> ReturnStackBuffer::peek() const {
  if (fill_ == 0) return std::nullopt;
  return entries_[top_];
}

BranchTargetBuffer::BranchTargetBuffer(unsigned size) : entries_(size) {
  if (size == 0) throw std::invalid_argument("btb size must be nonzero");
}

void BranchTargetBuffer::train(Addr pc, Addr target, BtbOwner owner) {
  Entry& e = entries_[pc % entries_.size()];
  e.valid = true;
  e.tag = pc / entries_.size();
  e.target = target;
  e.owner = owner;
}

std::optional<Addr> BranchTargetBuffer::lookup(Addr pc, BtbOwner requester,
                                               BtbGating gating) const {
  const Entry& e = entries_[pc % entries_.size()];
  if (!e.valid || e.tag != pc / entries_.size()) return std::nullopt;
  if (gating.ibrs && privilege_rank(e.owner.mode) < privilege_rank(requester.mode))
    return std::nullopt;
  if (gating.stibp && e.owner.context_id != requester.context_id) return std::nullopt;
  return e.target;
}

void BranchTargetBuffer::barrier(int surviving_context) {
  for (Entry& e : entries_)
    if (e.valid && e.owner.context_id != surviving_context) e.valid = false;
}

DirectionPredictor::DirectionPredictor(unsigned size) : counters_(size, 1) {
  if (size == 0) throw std::invalid_argument("dirpred size must be nonzero");
}

bool DirectionPredictor::predict(Addr pc) const { return counters_[pc % counters_.size()] >= 2; }

void DirectionPredictor::train(Addr pc, bool taken) {
  std::uint8_t& c = counters_[pc % counters_.size()];
  if (taken) {
    if (c < 3) c++;
  } else {
    if (c > 0) c--;
  }
}

}  // namespace rsbsim
