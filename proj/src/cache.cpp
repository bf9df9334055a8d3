#include "rsbsim/cache.hpp"

#include <algorithm>

namespace rsbsim {
namespace {

bool power_of_two(unsigned v) { return v != 0 && (v & (v - 1)) == 0; }

}  // namespace

CacheState::CacheState(CacheGeometry geo, unsigned hit_latency, unsigned miss_latency)
    : geo_(geo), hit_latency_(hit_latency), miss_latency_(miss_latency) {
  if (!power_of_two(geo_.sets) || !power_of_two(geo_.line_size) || geo_.ways == 0)
    throw std::invalid_argument("cache geometry: sets and line_size must be powers of two");
  sets_.resize(geo_.sets);
}

AccessResult CacheState::access(Addr addr, std::uint64_t rng_draw) {
  std::uint64_t line = line_id(addr);
  auto& ways = sets_[set_of(line)];
  auto it = std::find(ways.begin(), ways.end(), line);
  AccessResult r;
  if (it != ways.end()) {
    ways.erase(it);
    r.hit = true;
    r.latency = hit_latency_;
  } else {
    if (ways.size() == geo_.ways) ways.pop_back();
    r.hit = false;
    r.latency = miss_latency_;
  }
  ways.insert(ways.begin(), line);
  if (jitter_permille_ > 0) {
    // Uniform in [-j, +j] permille of nominal latency.
    std::uint64_t span = 2 * std::uint64_t(r.latency) * jitter_permille_ / 1000 + 1;
    std::int64_t delta = static_cast<std::int64_t>(rng_draw % span) -
                         static_cast<std::int64_t>(r.latency) * jitter_permille_ / 1000;
    std::int64_t adjusted = static_cast<std::int64_t>(r.latency) + delta;
    r.latency = adjusted < 1 ? 1 : static_cast<unsigned>(adjusted);
  }
  return r;
}

void CacheState::flush_line(Addr addr) {
  std::uint64_t line = line_id(addr);
  auto& ways = sets_[set_of(line)];
  auto it = std::find(ways.begin(), ways.end(), line);
  if (it != ways.end()) ways.erase(it);
}

bool CacheState::is_cached(Addr addr) const {
  std::uint64_t line = line_id(addr);
  const auto& ways = sets_[set_of(line)];
  return std::find(ways.begin(), ways.end(), line) != ways.end();
}

}  // namespace rsbsim
