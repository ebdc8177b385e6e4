#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace patchforge {

// Seeded random source. The engine is std::mt19937_64; the mappings to
// real/int/normal values are fixed here so sampled streams are identical
// across standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  // Independent stream keyed by (seed, tags...). Used to give every
  // (epoch, step, scene) its own reproducible draw.
  static Rng derive(std::uint64_t seed, std::initializer_list<std::uint64_t> tags);

  std::uint64_t next_u64() { return engine_(); }
  double uniform();                       // [0, 1)
  double uniform(double lo, double hi);   // [lo, hi)
  int uniform_int(int lo, int hi);        // [lo, hi], inclusive
  double normal();                        // standard normal

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace patchforge
