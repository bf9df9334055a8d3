#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <deque>
#include <random>

#include "rsbsim/predictors.hpp"

using namespace rsbsim;

TEST_CASE("rsb matches a bounded-ring reference on random sequences") {
  std::mt19937_64 rng(17);
  for (int seq = 0; seq < 1000; seq++) {
    unsigned cap = 4 + unsigned(rng() % 13);  // [4, 16]
    UnderfillMode mode = rng() % 2 ? UnderfillMode::FallbackIndirect : UnderfillMode::NoPrediction;
    ReturnStackBuffer rsb(cap, mode);
    std::deque<Addr> ref;  // newest at back, never larger than cap
    int ops = 1 + int(rng() % 1000);
    for (int i = 0; i < ops; i++) {
      switch (rng() % 5) {
        case 0: {
          rsb.refill(0xFFFFF000);
          ref.assign(cap, 0xFFFFF000);
          break;
        }
        case 1:
        case 2: {
          Addr a = rng() % 0x10000;
          rsb.push(a);
          ref.push_back(a);
          if (ref.size() > cap) ref.pop_front();
          break;
        }
        default: {
          Prediction p = rsb.predict_pop();
          if (ref.empty()) {
            REQUIRE(p.kind == (mode == UnderfillMode::FallbackIndirect
                                   ? Prediction::Kind::FallbackIndirect
                                   : Prediction::Kind::NoPrediction));
          } else {
            REQUIRE(p.kind == Prediction::Kind::Address);
            REQUIRE(p.addr == ref.back());
            ref.pop_back();
          }
          break;
        }
      }
      REQUIRE(rsb.fill() == ref.size());
      if (!ref.empty()) REQUIRE(rsb.peek() == ref.back());
    }
  }
}

TEST_CASE("overfill overwrites the oldest entries") {
  ReturnStackBuffer rsb(16);
  for (Addr a = 1; a <= 20; a++) rsb.push(a);
  for (Addr a = 20; a >= 5; a--) {
    Prediction p = rsb.predict_pop();
    REQUIRE(p.kind == Prediction::Kind::Address);
    REQUIRE(p.addr == a);
  }
  CHECK(rsb.predict_pop().kind == Prediction::Kind::FallbackIndirect);
}

TEST_CASE("capacity bounds are enforced") {
  CHECK_THROWS_AS(ReturnStackBuffer(2), std::invalid_argument);
  CHECK_THROWS_AS(ReturnStackBuffer(128), std::invalid_argument);
}

TEST_CASE("btb gating never returns foreign targets under ibrs+stibp+ibpb") {
  std::mt19937_64 rng(19);
  const Mode modes[] = {Mode::User, Mode::Enclave, Mode::Kernel};
  for (int trial = 0; trial < 300; trial++) {
    BranchTargetBuffer btb(16);
    // last trainer per slot, to validate gated lookups
    struct Train {
      bool valid = false;
      Addr pc = 0;
      Addr target = 0;
      BtbOwner owner;
    };
    std::vector<Train> last(16);
    for (int i = 0; i < 200; i++) {
      Addr pc = rng() % 64;
      BtbOwner who{int(rng() % 3), modes[rng() % 3]};
      if (rng() % 2) {
        Addr tgt = rng() % 0x10000;
        btb.train(pc, tgt, who);
        last[pc % 16] = {true, pc, tgt, who};
      } else {
        auto hit = btb.lookup(pc, who, {true, true});
        const Train& t = last[pc % 16];
        if (hit) {
          // fully gated: only own-context, not-lower-privilege entries predict
          REQUIRE(t.valid);
          REQUIRE(t.pc == pc);
          REQUIRE(*hit == t.target);
          REQUIRE(t.owner.context_id == who.context_id);
          REQUIRE(privilege_rank(t.owner.mode) >= privilege_rank(who.mode));
        } else if (t.valid && t.pc == pc) {
          REQUIRE((t.owner.context_id != who.context_id ||
                   privilege_rank(t.owner.mode) < privilege_rank(who.mode)));
        }
      }
      if (rng() % 16 == 0) {
        int survivor = int(rng() % 3);
        btb.barrier(survivor);
        for (Train& t : last)
          if (t.valid && t.owner.context_id != survivor) t.valid = false;
      }
    }
  }
}

TEST_CASE("btb without gating returns the trained target") {
  BranchTargetBuffer btb(256);
  btb.train(0x1234, 0x9999, {1, Mode::User});
  auto hit = btb.lookup(0x1234, {2, Mode::Kernel}, {false, false});
  REQUIRE(hit.has_value());
  CHECK(*hit == 0x9999);
  CHECK(!btb.lookup(0x1235, {1, Mode::User}, {false, false}).has_value());
  // tag mismatch on an aliasing pc
  CHECK(!btb.lookup(0x1234 + 256, {1, Mode::User}, {false, false}).has_value());
}

TEST_CASE("direction predictor starts weakly not-taken and saturates") {
  DirectionPredictor dp(64);
  CHECK(!dp.predict(5));
  dp.train(5, true);
  CHECK(dp.predict(5));  // 1 -> 2: now predicts taken
  dp.train(5, true);
  dp.train(5, true);  // saturate at 3
  dp.train(5, false);
  CHECK(dp.predict(5));  // 3 -> 2 still taken
  dp.train(5, false);
  dp.train(5, false);
  CHECK(!dp.predict(5));
}
