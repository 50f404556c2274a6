#include "privstream/rng.h"

#include <algorithm>

namespace privstream {

uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

Rng::Rng() {
  std::random_device rd;
  uint64_t seed = (static_cast<uint64_t>(rd()) << 32) ^ rd();
  engine_.seed(seed);
}

Rng::Rng(uint64_t seed) : engine_(seed) {}

bool Rng::bernoulli(double p) {
  if (p <= 0.0) return false;
  if (p >= 1.0) return true;
  return uniform_double() < p;
}

uint64_t Rng::next_u64() { return engine_(); }

uint64_t Rng::uniform(uint64_t bound) {
  // Rejection sampling removes modulo bias.
  uint64_t limit = bound * (UINT64_MAX / bound);
  uint64_t v;
  do {
    v = engine_();
  } while (v >= limit && limit != 0);
  return v % bound;
}

double Rng::uniform_double() {
  // 53 random bits into [0, 1).
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

void Rng::fill_bytes(uint8_t* buf, size_t len) {
  size_t i = 0;
  while (i + 8 <= len) {
    uint64_t v = engine_();
    for (int k = 0; k < 8; ++k) buf[i++] = static_cast<uint8_t>(v >> (8 * k));
  }
  if (i < len) {
    uint64_t v = engine_();
    while (i < len) {
      buf[i++] = static_cast<uint8_t>(v);
      v >>= 8;
    }
  }
}

uint64_t derive_seed(uint64_t base, uint64_t label) {
  return splitmix64(base ^ splitmix64(label + 0x42ULL));
}

}  // namespace privstream
