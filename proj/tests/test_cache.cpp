#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <map>
#include <random>
#include <vector>

#include "rsbsim/cache.hpp"

using namespace rsbsim;

namespace {

// Brute-force LRU oracle: per set, resident lines with last-use timestamps;
// eviction scans for the stalest line.
struct LruOracle {
  CacheGeometry geo;
  std::uint64_t tick = 0;
  std::map<std::uint64_t, std::map<std::uint64_t, std::uint64_t>> sets;  // set -> line -> last use

  std::uint64_t line_of(Addr a) const { return a / geo.line_size; }
  std::uint64_t set_of(std::uint64_t line) const { return line % geo.sets; }

  bool access(Addr a) {
    std::uint64_t line = line_of(a);
    auto& set = sets[set_of(line)];
    tick++;
    bool hit = set.count(line) > 0;
    if (!hit && set.size() == geo.ways) {
      auto victim = std::min_element(set.begin(), set.end(), [](const auto& x, const auto& y) {
        return x.second < y.second;
      });
      set.erase(victim);
    }
    set[line] = tick;
    return hit;
  }

  void flush(Addr a) { sets[set_of(line_of(a))].erase(line_of(a)); }
  bool cached(Addr a) const {
    auto it = sets.find(set_of(line_of(a)));
    return it != sets.end() && it->second.count(line_of(a)) > 0;
  }
};

}  // namespace

TEST_CASE("matches the brute-force LRU oracle over 10^4 random steps") {
  std::mt19937_64 rng(11);
  CacheGeometry geo{8, 4, 64};
  CacheState cache(geo, 4, 300);
  LruOracle oracle{geo};
  // Address pool small enough to force frequent conflicts.
  for (int step = 0; step < 10000; step++) {
    Addr a = (rng() % 128) * 32;
    switch (rng() % 4) {
      case 0:
        cache.flush_line(a);
        oracle.flush(a);
        break;
      case 1:
        CHECK(cache.is_cached(a) == oracle.cached(a));
        break;
      default: {
        AccessResult got = cache.access(a);
        bool want_hit = oracle.access(a);
        REQUIRE(got.hit == want_hit);
        REQUIRE(got.latency == (want_hit ? 4u : 300u));
        break;
      }
    }
  }
}

TEST_CASE("fill and evict respect geometry") {
  CacheGeometry geo{4, 2, 64};
  CacheState cache(geo, 4, 300);
  // Two lines mapping to set 0.
  Addr a = 0, b = 4 * 64, c = 8 * 64;
  CHECK(!cache.access(a).hit);
  CHECK(!cache.access(b).hit);
  CHECK(cache.access(a).hit);
  CHECK(!cache.access(c).hit);  // evicts b (LRU)
  CHECK(!cache.access(b).hit);
  CHECK(cache.is_cached(c));
}

TEST_CASE("flush removes exactly one line") {
  CacheState cache(CacheGeometry{16, 4, 64}, 4, 300);
  cache.access(0x1000);
  cache.access(0x2000);
  cache.flush_line(0x1000);
  CHECK(!cache.is_cached(0x1000));
  CHECK(cache.is_cached(0x2000));
  CHECK(!cache.access(0x1000).hit);
}

TEST_CASE("jitter stays within +/-10% and never changes hit/miss") {
  std::mt19937_64 rng(13);
  CacheState plain(CacheGeometry{16, 4, 64}, 4, 300);
  CacheState jittered(CacheGeometry{16, 4, 64}, 4, 300);
  jittered.set_jitter_permille(100);
  for (int step = 0; step < 2000; step++) {
    Addr a = (rng() % 64) * 64;
    std::uint64_t draw = rng();
    AccessResult p = plain.access(a);
    AccessResult j = jittered.access(a, draw);
    CHECK(p.hit == j.hit);
    unsigned nominal = p.hit ? 4 : 300;
    unsigned lo = nominal - nominal / 10, hi = nominal + nominal / 10;
    CHECK(j.latency >= lo);
    CHECK(j.latency <= hi);
  }
}
