#include "lavig/rng.hpp"

#include <cmath>
#include <numbers>

namespace lavig {

namespace {
constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ull;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += kGolden;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

void CounterRng::rekey() { key_ = splitmix64(seed_ ^ splitmix64(stream_ * kGolden + 0x632BE59BD9B4E019ull)); }

std::uint64_t CounterRng::next_u64() {
  const std::uint64_t v = splitmix64(key_ + counter_ * kGolden);
  ++counter_;
  return v;
}

double CounterRng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

std::uint64_t CounterRng::below(std::uint64_t n) {
  if (n <= 1) return 0;
  // Rejection keeps the draw exactly uniform.
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
  for (;;) {
    const std::uint64_t v = next_u64();
    if (v < limit) return v % n;
  }
}

double CounterRng::normal() {
  const double u1 = 1.0 - uniform();  // (0, 1]
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

void CounterRng::fill_normal(Tensor& t) {
  for (auto& v : t.values()) v = static_cast<float>(normal());
}

CounterRng CounterRng::fork(std::uint64_t sub) const {
  return CounterRng(splitmix64(seed_ ^ (key_ + sub * 0xD1B54A32D192ED03ull)), stream_ + sub + 1);
}

}  // namespace lavig
