#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "rsbsim/isa.hpp"

namespace rsbsim {

struct CacheGeometry {
  unsigned sets = 64;       // power of two
  unsigned ways = 8;
  unsigned line_size = 64;  // bytes, power of two

  std::size_t capacity() const { return std::size_t(sets) * ways * line_size; }
};

struct AccessResult {
  bool hit = false;
  unsigned latency = 0;  // cycles, jitter included when enabled
};

// Set-associative LRU cache over physical addresses. Tracks tags only; data
// always comes from backing memory. Contents deliberately survive pipeline
// squashes: this is the covert channel.
class CacheState {
 public:
  CacheState() : CacheState(CacheGeometry{}, 4, 300) {}
  CacheState(CacheGeometry geo, unsigned hit_latency, unsigned miss_latency);

  // Makes the line containing addr most-recently-used; fills on miss,
  // evicting the LRU way.
  AccessResult access(Addr addr) { return access(addr, 0); }

  // jitter_permille in [0, 1000]: latency is drawn uniformly within
  // +/- jitter_permille/1000 of the nominal value using rng_draw.
  AccessResult access(Addr addr, std::uint64_t rng_draw);

  void flush_line(Addr addr);
  bool is_cached(Addr addr) const;

  const CacheGeometry& geometry() const { return geo_; }
  unsigned hit_latency() const { return hit_latency_; }
  unsigned miss_latency() const { return miss_latency_; }

  void set_jitter_permille(unsigned p) { jitter_permille_ = p; }
  unsigned jitter_permille() const { return jitter_permille_; }

 private:
  std::uint64_t line_id(Addr addr) const { return addr / geo_.line_size; }
  unsigned set_of(std::uint64_t line) const { return static_cast<unsigned>(line & (geo_.sets - 1)); }

  CacheGeometry geo_;
  unsigned hit_latency_;
  unsigned miss_latency_;
  unsigned jitter_permille_ = 0;
  // Per set, MRU-first list of line ids.
  std::vector<std::vector<std::uint64_t>> sets_;
};

}  // namespace rsbsim
