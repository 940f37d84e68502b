#pragma once
#include <cmath>
#include <cstdint>
#include <random>

namespace arcslot {

// splitmix64; used to derive independent sub-streams from one run seed.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// mt19937 core with hand-rolled float draws so streams do not depend on
// the standard library's distribution implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(static_cast<std::uint32_t>(mix_seed(seed, 0))) {}

  std::uint32_t next_u32() { return eng_(); }

  // uniform in [0, 1) with 24 bits of mantissa
  float uniform() { return static_cast<float>(eng_() >> 8) * 0x1.0p-24f; }

  float uniform(float lo, float hi) { return lo + (hi - lo) * uniform(); }

  // inclusive bounds
  int uniform_int(int lo, int hi) {
    return lo + static_cast<int>(eng_() % static_cast<std::uint32_t>(hi - lo + 1));
  }

  // Box-Muller
  float normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    float u1 = uniform();
    float u2 = uniform();
    if (u1 < 1e-12f) u1 = 1e-12f;
    const float r = std::sqrt(-2.0f * std::log(u1));
    const float a = 6.28318530717958647692f * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  float normal(float mean, float std) { return mean + std * normal(); }

 private:
  std::mt19937 eng_;
  bool have_spare_ = false;
  float spare_ = 0.f;
};

}  // namespace arcslot
