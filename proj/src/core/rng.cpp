#include "ocgvf/core/rng.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace ocgvf::core {

int64_t Rng::uniform_int(int64_t n) {
  if (n <= 0) throw std::invalid_argument("uniform_int: n must be positive");
  const uint64_t un = static_cast<uint64_t>(n);
  const uint64_t limit = UINT64_MAX - UINT64_MAX % un;
  uint64_t v;
  do {
    v = engine_();
  } while (v >= limit);
  return static_cast<int64_t>(v % un);
}

double Rng::normal() {
  if (has_cached_) {
    has_cached_ = false;
    return cached_;
  }
  double u1, u2;
  do {
    u1 = uniform();
  } while (u1 <= 0.0);
  u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double a = 2.0 * 3.14159265358979323846 * u2;
  cached_ = r * std::sin(a);
  has_cached_ = true;
  return r * std::cos(a);
}

Rng Rng::child(uint64_t tag) const {
  // SplitMix64 over (engine state hash, tag) would need engine access; instead
  // mix the tag through two rounds so nearby tags land far apart.
  uint64_t z = tag + 0x9e3779b97f4a7c15ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  z ^= (z >> 31);
  Rng copy = *this;
  uint64_t base = copy.engine_();
  return Rng(base ^ z);
}

std::string Rng::state_str() const {
  std::ostringstream os;
  os << engine_ << " " << (has_cached_ ? 1 : 0) << " ";
  os.precision(17);
  os << cached_;
  return os.str();
}

void Rng::restore(const std::string& state) {
  std::istringstream is(state);
  int flag = 0;
  is >> engine_ >> flag >> cached_;
  if (is.fail()) throw std::runtime_error("Rng::restore: malformed state");
  has_cached_ = flag != 0;
}

bool Rng::operator==(const Rng& o) const {
  return engine_ == o.engine_ && has_cached_ == o.has_cached_ &&
         cached_ == o.cached_;
}

}  // namespace ocgvf::core
