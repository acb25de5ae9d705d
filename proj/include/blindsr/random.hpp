#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>

#include <ATen/core/Generator.h>

namespace blindsr {

// Seeded random source used for every sampled degradation parameter and data
// augmentation. All draws are derived from the raw 64-bit engine output, so
// sequences are identical across standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform on [0, 1) with 53 bits of resolution.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer on the closed interval [lo, hi].
  int uniform_int(int lo, int hi);

  bool bernoulli(double p) { return uniform() < p; }

  // Index i with probability probs[i]. Probabilities are assumed normalized.
  std::size_t choose(std::span<const double> probs);

  std::string state() const;
  void set_state(const std::string& state);

 private:
  std::mt19937_64 engine_;
};

// Independent torch generator for bulk tensor draws (noise fields, init).
at::Generator make_torch_generator(std::uint64_t seed);

}  // namespace blindsr
