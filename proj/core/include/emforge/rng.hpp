// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace emforge {

// Seeded generator with platform-independent outputs. The engine sequence of
// std::mt19937_64 is fixed by the standard; the std distributions are not, so
// uniform/normal draws are derived from raw engine output here.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  // Child seed from a parent seed and a list of stream identifiers.
  static std::uint64_t derive(std::uint64_t seed, std::initializer_list<std::uint64_t> stream);

  std::uint64_t next_u64() { return engine_(); }
  double uniform();                                  // [0, 1)
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();                                   // N(0, 1)
  std::uint64_t below(std::uint64_t n);              // uniform in [0, n)

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  // k distinct values from [0, n), in draw order.
  std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k);

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace emforge
