#pragma once

#include <cstdint>

#include "lavig/tensor.hpp"

namespace lavig {

/// Counter-based generator: the n-th draw of (seed, stream) is a pure function
/// of (seed, stream, n), so the whole state is three integers and any draw can
/// be reproduced without replaying earlier ones.
class CounterRng {
 public:
  CounterRng() = default;
  CounterRng(std::uint64_t seed, std::uint64_t stream = 0) : seed_(seed), stream_(stream) { rekey(); }

  std::uint64_t next_u64();
  /// Uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  /// Standard normal via Box-Muller; consumes two draws.
  double normal();

  void fill_normal(Tensor& t);

  /// Independent generator for a sub-stream (e.g. one per epoch or step).
  CounterRng fork(std::uint64_t sub) const;

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }
  std::uint64_t counter() const { return counter_; }
  void set_counter(std::uint64_t c) { counter_ = c; }

 private:
  void rekey();

  std::uint64_t seed_ = 0;
  std::uint64_t stream_ = 0;
  std::uint64_t counter_ = 0;
  std::uint64_t key_ = 0;
};

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace lavig
