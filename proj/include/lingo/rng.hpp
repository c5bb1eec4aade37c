#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace lingo {

// Thin wrapper over mt19937_64. Every session/episode owns its own stream,
// derived by hashing, so parallel rollouts stay reproducible.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  double uniform() { return unit_(eng_); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal() { return normal_(eng_); }

  // uniform integer in [0, n)
  std::int64_t randint(std::int64_t n) {
    return static_cast<std::int64_t>(eng_() % static_cast<std::uint64_t>(n));
  }

  bool bernoulli(double p) { return uniform() < p; }

  template <typename T>
  const T& choice(const std::vector<T>& xs) {
    return xs[static_cast<std::size_t>(randint(
        static_cast<std::int64_t>(xs.size())))];
  }

  std::mt19937_64& engine() { return eng_; }

  // Deterministic stream derivation (splitmix-style finalizer).
  static std::uint64_t derive(std::uint64_t seed, std::uint64_t a,
                              std::uint64_t b = 0, std::uint64_t c = 0) {
    std::uint64_t x = seed;
    for (std::uint64_t salt : {a + 0x9e3779b97f4a7c15ull, b + 0xbf58476d1ce4e5b9ull,
                               c + 0x94d049bb133111ebull}) {
      x += salt;
      x ^= x >> 30;
      x *= 0xbf58476d1ce4e5b9ull;
      x ^= x >> 27;
      x *= 0x94d049bb133111ebull;
      x ^= x >> 31;
    }
    return x;
  }

 private:
  std::mt19937_64 eng_;
  std::uniform_real_distribution<double> unit_{0.0, 1.0};
  std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace lingo
