#pragma once

#include <cstdint>

namespace otlab {

// Counter-based pseudo-random generator. Output k is a bijective mix of
// (key, k), so any draw can be reproduced from the key and the counter alone;
// there is no hidden state beyond the counter. This is what makes per-trial
// streams cheap: derive a fresh key per trial and the stream is independent
// of every other trial no matter how many draws each one consumes.
class Rng {
 public:
  explicit Rng(std::uint64_t key) : key_(key) {}

  std::uint64_t next_u64();

  // Uniform on [0, 1), 53 random bits.
  double uniform();

  // Uniform on [lo, hi).
  double uniform(double lo, double hi);

  // Standard normal via Box-Muller; draws are paired internally.
  double normal();

  // Uniform integer in [0, n), n > 0. Rejection-free for our purposes
  // (modulo bias is < 2^-53 for the n we use, but we reject anyway).
  std::uint64_t below(std::uint64_t n);

  std::uint64_t key() const { return key_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// Stable 64-bit mix (splitmix64 finalizer). Used both as the generator round
// function and to derive child seeds.
std::uint64_t mix64(std::uint64_t z);

// Deterministic child seed from (seed, index). Children with distinct
// indices get statistically independent streams.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);

}  // namespace otlab
