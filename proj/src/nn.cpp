#include "lavig/nn.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <stdexcept>

namespace lavig::nn {

Parameter& ParamStore::add(const std::string& name, Tensor init) {
  if (index_.count(name)) throw std::logic_error("duplicate parameter name: " + name);
  index_[name] = params_.size();
  params_.push_back(Parameter{name, std::move(init), Tensor()});
  return params_.back();
}

Parameter& ParamStore::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
  return params_[it->second];
}

const Parameter& ParamStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
  return params_[it->second];
}

std::vector<Parameter*> ParamStore::all() {
  std::vector<Parameter*> out;
  for (auto& p : params_) out.push_back(&p);
  return out;
}

std::vector<const Parameter*> ParamStore::all() const {
  std::vector<const Parameter*> out;
  for (const auto& p : params_) out.push_back(&p);
  return out;
}

std::int64_t ParamStore::numel() const {
  std::int64_t n = 0;
  for (const auto& p : params_) n += static_cast<std::int64_t>(p.value.size());
  return n;
}

void ParamStore::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

std::uint64_t ParamStore::fingerprint() const {
  std::uint64_t h = 0xcbf29ce484222325ull;
  auto mix = [&h](const void* data, std::size_t n) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ull;
    }
  };
  for (const auto& p : params_) {
    mix(p.name.data(), p.name.size());
    for (auto d : p.value.shape()) mix(&d, sizeof d);
    mix(p.value.data(), p.value.size() * sizeof(float));
  }
  return h;
}

Tensor uniform_tensor(Shape shape, float bound, CounterRng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = static_cast<float>(rng.uniform(-bound, bound));
  return t;
}

Tensor normal_tensor(Shape shape, float stddev, CounterRng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = static_cast<float>(stddev * rng.normal());
  return t;
}

int group_count(int channels, int wanted) {
  for (int g = std::min(channels, wanted); g > 1; --g)
    if (channels % g == 0) return g;
  return 1;
}

Linear Linear::xavier(ParamStore& ps, const std::string& name, int in, int out, CounterRng& rng) {
  const float bound = std::sqrt(6.0f / static_cast<float>(in + out));
  Linear l;
  l.w = &ps.add(name + ".w", uniform_tensor({in, out}, bound, rng));
  l.b = &ps.add(name + ".b", Tensor({out}));
  return l;
}

Linear Linear::zeros(ParamStore& ps, const std::string& name, int in, int out) {
  Linear l;
  l.w = &ps.add(name + ".w", Tensor({in, out}));
  l.b = &ps.add(name + ".b", Tensor({out}));
  return l;
}

Var Linear::operator()(Graph& g, Var x) const { return ag::linear(x, g.param(*w), b ? g.param(*b) : Var()); }

Conv2d Conv2d::make(ParamStore& ps, const std::string& name, int cin, int cout, int k, int stride, int pad,
                    CounterRng& rng) {
  const float bound = 1.0f / std::sqrt(static_cast<float>(cin * k * k));
  Conv2d c;
  c.w = &ps.add(name + ".w", uniform_tensor({cout, cin, k, k}, bound, rng));
  c.b = &ps.add(name + ".b", uniform_tensor({cout}, bound, rng));
  c.stride = stride;
  c.pad = pad;
  return c;
}

Var Conv2d::operator()(Graph& g, Var x) const {
  return ag::conv2d(x, g.param(*w), b ? g.param(*b) : Var(), stride, pad);
}

GroupNorm GroupNorm::make(ParamStore& ps, const std::string& name, int channels, int wanted_groups) {
  GroupNorm n;
  n.gamma = &ps.add(name + ".gamma", Tensor({channels}, 1.0f));
  n.beta = &ps.add(name + ".beta", Tensor({channels}));
  n.groups = group_count(channels, wanted_groups);
  return n;
}

Var GroupNorm::operator()(Graph& g, Var x) const {
  return ag::group_norm(x, g.param(*gamma), g.param(*beta), groups, eps);
}

ResBlock ResBlock::make(ParamStore& ps, const std::string& name, int cin, int cout, int groups, CounterRng& rng) {
  ResBlock r;
  r.norm1 = GroupNorm::make(ps, name + ".norm1", cin, groups);
  r.conv1 = Conv2d::make(ps, name + ".conv1", cin, cout, 3, 1, 1, rng);
  r.norm2 = GroupNorm::make(ps, name + ".norm2", cout, groups);
  r.conv2 = Conv2d::make(ps, name + ".conv2", cout, cout, 3, 1, 1, rng);
  if (cin != cout) {
    r.skip = Conv2d::make(ps, name + ".skip", cin, cout, 1, 1, 0, rng);
    r.has_skip = true;
  }
  return r;
}

Var ResBlock::operator()(Graph& g, Var x) const {
  Var h = conv1(g, ag::silu(norm1(g, x)));
  h = conv2(g, ag::silu(norm2(g, h)));
  return ag::add(has_skip ? skip(g, x) : x, h);
}

}  // namespace lavig::nn
