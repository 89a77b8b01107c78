// SPDX-License-Identifier: Apache-2.0

#include "epiview/rng.hpp"

#include <cmath>
#include <numbers>

#include "epiview/error.hpp"

namespace epiview {

std::uint64_t mix64(std::uint64_t x) {
  // splitmix64 finalizer
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (const unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

CounterRng::CounterRng(std::uint64_t seed, std::uint64_t stream,
                       std::string_view purpose)
    : key_(mix64(mix64(seed) ^ mix64(stream ^ 0xA5A5A5A5A5A5A5A5ULL) ^
                 fnv1a64(purpose))) {}

std::uint64_t CounterRng::next_u64() {
  const std::uint64_t c = counter_++;
  return mix64(key_ ^ mix64(c * 0xD1B54A32D192ED03ULL));
}

double CounterRng::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double CounterRng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

std::uint64_t CounterRng::index(std::uint64_t n) {
  if (n == 0) fail(ErrorCode::InvalidArgument, "CounterRng::index(0)");
  // Rejection sampling keeps the draw unbiased.
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
  std::uint64_t x = next_u64();
  while (x >= limit) x = next_u64();
  return x % n;
}

}  // namespace epiview
