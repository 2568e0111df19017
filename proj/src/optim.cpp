#include "lavig/optim.hpp"

#include <cmath>

#include "lavig/kernels.hpp"

namespace lavig::optim {

Adam::Adam(nn::ParamStore& params, AdamConfig cfg) : params_(params), cfg_(cfg) {
  for (auto* p : params_.all()) {
    m_.emplace(p->name, Tensor(p->value.shape()));
    v_.emplace(p->name, Tensor(p->value.shape()));
  }
}

void Adam::step() {
  ++t_;
  kernels::AdamStep s{};
  s.lr = cfg_.lr;
  s.beta1 = cfg_.beta1;
  s.beta2 = cfg_.beta2;
  s.eps = cfg_.eps;
  s.weight_decay = cfg_.weight_decay;
  s.bias_correction1 = static_cast<float>(1.0 - std::pow(static_cast<double>(cfg_.beta1), static_cast<double>(t_)));
  s.bias_correction2 = static_cast<float>(1.0 - std::pow(static_cast<double>(cfg_.beta2), static_cast<double>(t_)));
  for (auto* p : params_.all()) {
    if (p->grad.shape() != p->value.shape()) p->zero_grad();
    kernels::adam_update(s, p->value.data(), p->grad.data(), m_.at(p->name).data(), v_.at(p->name).data(),
                         p->value.size());
  }
}

double clip_grad_norm(nn::ParamStore& params, double max_norm) {
  double sq = 0.0;
  for (auto* p : params.all())
    for (float g : p->grad.values()) sq += static_cast<double>(g) * g;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const float k = static_cast<float>(max_norm / (norm + 1e-12));
    for (auto* p : params.all())
      for (auto& g : p->grad.values()) g *= k;
  }
  return norm;
}

}  // namespace lavig::optim
