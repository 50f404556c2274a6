#ifndef PRIVSTREAM_RNG_H_
#define PRIVSTREAM_RNG_H_

#include <cstdint>
#include <cstddef>
#include <random>

namespace privstream {

// Deterministic-seedable randomness source. Every stochastic operation in the
// library takes one of these by reference; nothing draws from hidden global
// state, so a fixed seed pins the whole pipeline.
//
// One Rng must not be shared across threads; each worker owns its own.
class Rng {
 public:
  // Seeds from the OS entropy source.
  Rng();
  explicit Rng(uint64_t seed);

  // True with probability p. p outside [0,1] is clamped.
  bool bernoulli(double p);

  uint64_t next_u64();
  // Uniform in [0, bound). bound must be > 0.
  uint64_t uniform(uint64_t bound);
  // Uniform in [0, 1).
  double uniform_double();
  // Fills buf with independent uniform bytes (key material).
  void fill_bytes(uint8_t* buf, size_t len);

 private:
  std::mt19937_64 engine_;
};

// splitmix64 step; used for seed derivation so that per-agent streams are
// independent of fleet size and iteration order.
uint64_t splitmix64(uint64_t x);

// Derives an independent child seed from a base seed and a label. Pure, so
// derived streams do not depend on derivation order.
uint64_t derive_seed(uint64_t base, uint64_t label);

}  // namespace privstream

#endif  // PRIVSTREAM_RNG_H_
