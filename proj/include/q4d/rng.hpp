#pragma once

// Deterministic PRNG used everywhere a seed appears in a public API.
// PCG32 (pcg_xsh_rr_64_32) with explicit stream selection, so datasets and
// training runs reproduce bit-exactly across platforms and languages.

#include <cstdint>
#include <cmath>

namespace q4d {

// SplitMix64, used to derive substream seeds from a user seed.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

class Pcg32 {
 public:
  Pcg32() { seed(0x853C49E6748FEA9BULL, 0xDA3E39CB94B95BDBULL); }
  Pcg32(std::uint64_t init_state, std::uint64_t init_seq = 1) {
    seed(init_state, init_seq);
  }

  void seed(std::uint64_t init_state, std::uint64_t init_seq) {
    state_ = 0;
    inc_ = (init_seq << 1) | 1;
    next_u32();
    state_ += init_state;
    next_u32();
  }

  std::uint32_t next_u32() {
    std::uint64_t old = state_;
    state_ = old * 6364136223846793005ULL + inc_;
    std::uint32_t xorshifted =
        static_cast<std::uint32_t>(((old >> 18) ^ old) >> 27);
    std::uint32_t rot = static_cast<std::uint32_t>(old >> 59);
    return (xorshifted >> rot) | (xorshifted << ((-rot) & 31));
  }

  std::uint64_t next_u64() {
    std::uint64_t hi = next_u32();
    return (hi << 32) | next_u32();
  }

  // Unbiased bounded integer in [0, bound).
  std::uint32_t next_bounded(std::uint32_t bound) {
    std::uint32_t threshold = (-bound) % bound;
    for (;;) {
      std::uint32_t r = next_u32();
      if (r >= threshold) return r % bound;
    }
  }

  // Uniform double in [0, 1) with 53 bits of precision.
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  // Marsaglia polar method; consumes a variable number of draws.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = uniform(-1.0, 1.0);
      v = uniform(-1.0, 1.0);
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    double m = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * m;
    has_spare_ = true;
    return u * m;
  }

  // Saving/restoring the full generator state (for resumable training).
  std::uint64_t state() const { return state_; }
  std::uint64_t inc() const { return inc_; }
  void restore(std::uint64_t state, std::uint64_t inc) {
    state_ = state;
    inc_ = inc;
    has_spare_ = false;
  }

 private:
  std::uint64_t state_ = 0;
  std::uint64_t inc_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Named substreams derived from one user seed. Stream ids keep independent
// random decisions (geometry, textures, augmentation, ...) decoupled so that
// adding draws to one stream never perturbs another.
inline Pcg32 make_stream(std::uint64_t seed, std::uint64_t stream_id) {
  std::uint64_t s = seed ^ (0x9E3779B97F4A7C15ULL * (stream_id + 1));
  std::uint64_t a = splitmix64(s);
  std::uint64_t b = splitmix64(s);
  return Pcg32(a, b);
}

}  // namespace q4d
