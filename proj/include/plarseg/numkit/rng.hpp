#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace plarseg::numkit {

// splitmix64 finalizer; derives independent stream seeds from (seed, tag).
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t tag);

// Seeded generator whose whole state is the 64-bit Mersenne engine, so that a
// serialized state resumes the exact stream. Distributions are computed here
// rather than with <random> adaptors, which may cache values between calls.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Standard normal via Box-Muller; consumes two draws per call.
  double normal();
  // Uniform integer in [lo, hi].
  std::int64_t randint(std::int64_t lo, std::int64_t hi);
  // Index sampled proportionally to non-negative weights; -1 if all are zero.
  int categorical(const std::vector<double>& weights);

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(randint(0, static_cast<std::int64_t>(i) - 1));
      std::swap(v[i - 1], v[j]);
    }
  }

  std::string state() const;
  void restore(const std::string& state);

 private:
  std::mt19937_64 engine_;
};

}  // namespace plarseg::numkit
