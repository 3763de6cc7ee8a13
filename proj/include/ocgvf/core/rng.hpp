#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace ocgvf::core {

// Deterministic random source. Only the mt19937_64 engine (whose output
// sequence the standard pins down exactly) is used; all distributions are
// implemented here so that streams are reproducible across toolchains.
class Rng {
 public:
  Rng() : Rng(0) {}
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). n must be positive.
  int64_t uniform_int(int64_t n);

  // Standard normal via Box-Muller; the pair is cached.
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Derive an independent stream; distinct tags give distinct streams.
  Rng child(uint64_t tag) const;

  template <typename It>
  void shuffle(It first, It last) {
    auto n = static_cast<int64_t>(last - first);
    for (int64_t i = n - 1; i > 0; --i) {
      std::swap(first[i], first[uniform_int(i + 1)]);
    }
  }

  std::string state_str() const;
  void restore(const std::string& state);

  bool operator==(const Rng& o) const;

 private:
  std::mt19937_64 engine_;
  bool has_cached_ = false;
  double cached_ = 0.0;
};

}  // namespace ocgvf::core
