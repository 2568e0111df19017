#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "lavig/nn.hpp"

namespace lavig::optim {

struct AdamConfig {
  float lr = 1e-4f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
  float weight_decay = 0.0f;  // decoupled; > 0 gives AdamW
};

/// Adam / AdamW over every parameter of a store. Moments are keyed by name so
/// they can be checkpointed and restored independently of allocation order.
class Adam {
 public:
  Adam(nn::ParamStore& params, AdamConfig cfg);

  void step();
  std::int64_t steps_taken() const { return t_; }
  void set_steps_taken(std::int64_t t) { t_ = t; }

  const AdamConfig& config() const { return cfg_; }
  Tensor& first_moment(const std::string& name) { return m_.at(name); }
  Tensor& second_moment(const std::string& name) { return v_.at(name); }
  const std::map<std::string, Tensor>& first_moments() const { return m_; }
  const std::map<std::string, Tensor>& second_moments() const { return v_; }

 private:
  nn::ParamStore& params_;
  AdamConfig cfg_;
  std::int64_t t_ = 0;
  std::map<std::string, Tensor> m_;
  std::map<std::string, Tensor> v_;
};

/// Scales all gradients so their global L2 norm is at most max_norm; returns the
/// norm before clipping. max_norm <= 0 disables clipping.
double clip_grad_norm(nn::ParamStore& params, double max_norm);

}  // namespace lavig::optim
