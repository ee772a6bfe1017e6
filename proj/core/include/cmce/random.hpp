#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>

namespace cmce {

// splitmix64 finalizer; the mixing step used for every seed derivation.
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

// Folds a list of integer keys into one 64-bit stream key.
std::uint64_t mix_keys(std::initializer_list<std::uint64_t> keys) noexcept;

// Stable 64-bit hash of a string (FNV-1a, then splitmix64).
std::uint64_t hash_name(std::string_view name) noexcept;

// Seed for a named component: splitmix64(master ^ hash(name)). Adding a new
// component never changes the seeds of existing ones.
std::uint64_t derive_seed(std::uint64_t master, std::string_view component) noexcept;

// Deterministic random stream. Only std::mt19937_64 (whose output sequence is
// fixed by the standard) is used; distributions are implemented here because
// the std:: ones are implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  Rng(std::initializer_list<std::uint64_t> keys) : engine_(mix_keys(keys)) {}

  std::uint64_t next_u64() { return engine_(); }
  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [0, n), unbiased (rejection sampling).
  std::uint64_t below(std::uint64_t n);
  // Standard normal via Box-Muller (one cached spare).
  double normal();

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

template <typename Container>
void shuffle(Container& c, Rng& rng) {
  for (std::size_t i = c.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng.below(i));
    using std::swap;
    swap(c[i - 1], c[j]);
  }
}

}  // namespace cmce
