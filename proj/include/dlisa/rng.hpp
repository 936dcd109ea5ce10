#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace dlisa {

// Seeded generator whose draws do not depend on hidden distribution state, so
// that a serialized state reproduces the remaining stream exactly.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). n must be > 0.
  std::uint64_t below(std::uint64_t n);

  // Standard normal via Box-Muller; consumes exactly two uniforms per call.
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  std::uint64_t next() { return engine_(); }

  std::string state() const;
  void set_state(const std::string& s);

 private:
  std::mt19937_64 engine_;
};

// Derive an independent stream seed from a base seed and a tag.
std::uint64_t mix_seed(std::uint64_t base, std::uint64_t tag);

}  // namespace dlisa
