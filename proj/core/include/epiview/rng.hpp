// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace epiview {

/// Counter-based generator keyed by (seed, stream, purpose). Every draw is a
/// pure function of the key and a draw counter, so results do not depend on
/// thread scheduling or the platform's <random> implementation.
class CounterRng {
 public:
  CounterRng(std::uint64_t seed, std::uint64_t stream, std::string_view purpose);

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Standard normal via Box-Muller.
  double normal();
  /// Uniform integer in [0, n). n must be positive.
  std::uint64_t index(std::uint64_t n);
  bool bernoulli(double p) { return uniform() < p; }

  /// In-place Fisher-Yates shuffle.
  template <typename T>
  void shuffle(std::vector<T>& values) {
    for (std::size_t i = values.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(index(i));
      std::swap(values[i - 1], values[j]);
    }
  }

  std::uint64_t key() const noexcept { return key_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t mix64(std::uint64_t x);
std::uint64_t fnv1a64(std::string_view bytes);

}  // namespace epiview
