#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>
#include <vector>

namespace vlpre {

// Counter-based generator: draw i is a pure function of (seed, i), so streams
// can be replayed or split without shared state. Derived streams are keyed by
// an integer or a name, which keeps per-sample randomness independent of
// worker scheduling.
class Rng {
 public:
  explicit Rng(uint64_t seed) : seed_(seed) {}

  uint64_t next_u64() { return mix(seed_, counter_++); }

  // [0, 1), 53-bit resolution
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // uniform integer in [0, n), n >= 1 (Lemire multiply-shift)
  uint64_t uniform_int(uint64_t n) {
    return static_cast<uint64_t>((static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  // standard normal, Box-Muller (two draws per call, no cached spare)
  double normal() {
    double u1 = 1.0 - uniform();  // (0, 1]
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  // normal truncated to [-2*sigma, 2*sigma], rejection sampled
  double truncated_normal(double sigma) {
    for (;;) {
      double z = normal() * sigma;
      if (std::abs(z) <= 2.0 * sigma) return z;
    }
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(uniform_int(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  // independent stream keyed by an integer
  Rng derive(uint64_t stream) const { return Rng(mix(seed_, 0x5bf0'3635'dead'beefULL ^ stream)); }

  Rng derive(std::string_view name) const {
    uint64_t h = 1469598103934665603ULL;  // FNV-1a
    for (char c : name) {
      h ^= static_cast<uint8_t>(c);
      h *= 1099511628211ULL;
    }
    return derive(h);
  }

  uint64_t seed() const { return seed_; }

 private:
  static uint64_t mix(uint64_t a, uint64_t b) {
    uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
    z ^= z >> 30;
    z *= 0xbf58476d1ce4e5b9ULL;
    z ^= z >> 27;
    z *= 0x94d049bb133111ebULL;
    z ^= z >> 31;
    return z;
  }

  uint64_t seed_;
  uint64_t counter_ = 0;
};

}  // namespace vlpre
