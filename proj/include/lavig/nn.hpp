#pragma once

// Parameter storage and the small layer set shared by the autoencoders and
// the transformer. Layers hold pointers into a ParamStore and record their
// forward pass on whatever Graph they are given.

#include <cstdint>
#include <deque>
#include <map>
#include <string>
#include <vector>

#include "lavig/autograd.hpp"
#include "lavig/ops.hpp"
#include "lavig/rng.hpp"

namespace lavig::nn {

using ag::Graph;
using ag::Parameter;
using ag::Var;

/// Named parameters in registration order. Addresses are stable.
class ParamStore {
 public:
  Parameter& add(const std::string& name, Tensor init);
  Parameter& get(const std::string& name);
  const Parameter& get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::vector<Parameter*> all();
  std::vector<const Parameter*> all() const;
  std::size_t size() const { return params_.size(); }
  std::int64_t numel() const;

  void zero_grad();
  /// FNV-1a over names, shapes and value bits.
  std::uint64_t fingerprint() const;

 private:
  std::deque<Parameter> params_;
  std::map<std::string, std::size_t> index_;
};

Tensor uniform_tensor(Shape shape, float bound, CounterRng& rng);
Tensor normal_tensor(Shape shape, float stddev, CounterRng& rng);

/// Largest divisor of `channels` that does not exceed `wanted`.
int group_count(int channels, int wanted);

struct Linear {
  Parameter* w = nullptr;  // [in, out]
  Parameter* b = nullptr;  // [out]

  static Linear xavier(ParamStore& ps, const std::string& name, int in, int out, CounterRng& rng);
  static Linear zeros(ParamStore& ps, const std::string& name, int in, int out);
  Var operator()(Graph& g, Var x) const;
};

struct Conv2d {
  Parameter* w = nullptr;  // [cout, cin, k, k]
  Parameter* b = nullptr;
  int stride = 1;
  int pad = 0;

  /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and bias.
  static Conv2d make(ParamStore& ps, const std::string& name, int cin, int cout, int k, int stride, int pad,
                     CounterRng& rng);
  Var operator()(Graph& g, Var x) const;
};

struct GroupNorm {
  Parameter* gamma = nullptr;
  Parameter* beta = nullptr;
  int groups = 1;
  float eps = 1e-6f;

  static GroupNorm make(ParamStore& ps, const std::string& name, int channels, int wanted_groups);
  Var operator()(Graph& g, Var x) const;
};

/// x + conv(silu(gn(conv(silu(gn(x)))))), with a 1x1 skip when widths differ.
struct ResBlock {
  GroupNorm norm1, norm2;
  Conv2d conv1, conv2;
  Conv2d skip;
  bool has_skip = false;

  static ResBlock make(ParamStore& ps, const std::string& name, int cin, int cout, int groups, CounterRng& rng);
  Var operator()(Graph& g, Var x) const;
};

}  // namespace lavig::nn
