#pragma once

// Rectified-flow corruption and sampling over latent clips [B, F, C, h, w],
// frame masks for context conditioning, and the sliding-window rollout.

#include <cstdint>
#include <functional>
#include <vector>

#include "lavig/autograd.hpp"
#include "lavig/rng.hpp"
#include "lavig/tensor.hpp"

namespace lavig::diffusion {

struct Schedule {
  double T = 1000.0;
  int n_sample_steps = 30;

  /// alpha(t) = 1 - t / T.
  double alpha(double t) const { return 1.0 - t / T; }
  /// t_k = T (1 - k / n) for k = 0..n, strictly descending from T to 0.
  std::vector<double> step_grid() const;
  void validate() const;
};

/// Per-(batch, frame) flags, 1 = frame is noised / predicted, 0 = fixed context.
struct FrameMask {
  std::int64_t batch = 0;
  std::int64_t frames = 0;
  std::vector<std::uint8_t> m;

  /// Context prefix of `context_frames` frames in every batch entry.
  static FrameMask prefix(std::int64_t batch, std::int64_t frames, std::int64_t context_frames);
  bool at(std::int64_t b, std::int64_t f) const { return m[static_cast<std::size_t>(b * frames + f)] != 0; }
  std::int64_t count() const;
  void check(const Shape& clip) const;
};

/// z_t = alpha(t) z0 + (1 - alpha(t)) eps with one t per batch entry. The
/// endpoints t = 0 and t = T return z0 and eps bit for bit.
Tensor corrupt(const Tensor& z0, const Tensor& eps, const std::vector<float>& t, const Schedule& sched);

/// Velocity target z0 - eps.
Tensor rf_target(const Tensor& z0, const Tensor& eps);
/// mean((v - (z0 - eps))^2).
double rf_loss(const Tensor& v, const Tensor& z0, const Tensor& eps);
ag::Var rf_loss(ag::Var v, const Tensor& z0, const Tensor& eps);
/// Mean squared error over masked frames only.
ag::Var rf_loss_masked(ag::Var v, const Tensor& z0, const Tensor& eps, const FrameMask& mask);

/// Wherever the mask is 0, replace x by `context` (frame-wise select).
void apply_context(Tensor& x, const Tensor& context, const FrameMask& mask);

/// Corruption for masked fine-tuning: masked frames get corrupt(z0, eps, t),
/// unmasked frames are z0 exactly. Throws if the mask selects nothing.
Tensor masked_train_step_inputs(const Tensor& z0, const Tensor& eps, const std::vector<float>& t,
                                const FrameMask& mask, const Schedule& sched);

/// v = model(z_t [B, F, C, h, w], t per batch entry).
using VelocityFn = std::function<Tensor(const Tensor&, const std::vector<float>&)>;

/// Euler integration in alpha from t = T down to 0: the model is queried at
/// t_k for k = 0..n-1 and z += (1/n) v each step. With a mask, context frames
/// are written in before the first step and after every update, so they come
/// out bit-identical to `context`.
Tensor sample(const VelocityFn& model, const Tensor& noise, const Schedule& sched,
              const FrameMask* mask = nullptr, const Tensor* context = nullptr);

struct RolloutPlan {
  int context_frames = 15;
  int pred_frames = 2;
  int n_steps = 4;
  std::vector<int> lengths;  // lengths[k] = F_c + F_p (k + 1)

  int window() const { return context_frames + pred_frames; }
  int total_frames() const { return lengths.back(); }
};

RolloutPlan build_rollout_plan(int context_frames, int pred_frames, int n_steps);

struct RolloutResult {
  Tensor clip;                                // [F_c + F_p n_steps, C, h, w]
  std::vector<std::vector<int>> window_frames;  // output frame indices covered by each window
};

/// Sliding-window generation from a context clip [F_c, C, h, w]. Each step
/// takes the newest F_c frames, appends F_p Gaussian placeholders, runs the
/// masked sampler and appends the predicted frames. Noise for step k comes
/// from CounterRng(noise_seed, stream).fork(k).
RolloutResult autoregressive_rollout(const VelocityFn& model, const Tensor& context, const RolloutPlan& plan,
                                     const Schedule& sched, std::uint64_t noise_seed, std::uint64_t stream = 0);

}  // namespace lavig::diffusion
