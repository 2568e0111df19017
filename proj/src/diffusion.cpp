#include "lavig/diffusion.hpp"

#include <cstring>
#include <stdexcept>
#include <string>

#include "lavig/ops.hpp"

namespace lavig::diffusion {

namespace {

std::int64_t frame_size(const Shape& s) {
  if (s.size() < 3) throw ShapeError("latent clip must be [B, F, ...], got " + shape_str(s));
  return shape_numel(s) / (s[0] * s[1]);
}

void check_times(const std::vector<float>& t, const Shape& s, const Schedule& sched) {
  if (static_cast<std::int64_t>(t.size()) != s[0])
    throw ShapeError("need one diffusion time per batch entry (" + std::to_string(s[0]) + "), got " +
                     std::to_string(t.size()));
  for (float v : t)
    if (!(v >= 0.0f && v <= sched.T))
      throw std::out_of_range("diffusion time " + std::to_string(v) + " outside [0, " + std::to_string(sched.T) + "]");
}

}  // namespace

std::vector<double> Schedule::step_grid() const {
  std::vector<double> g(static_cast<std::size_t>(n_sample_steps) + 1);
  for (int k = 0; k <= n_sample_steps; ++k) g[static_cast<std::size_t>(k)] = T * (1.0 - double(k) / n_sample_steps);
  g.back() = 0.0;
  return g;
}

void Schedule::validate() const {
  if (!(T > 0.0)) throw std::invalid_argument("diffusion horizon T must be positive");
  if (n_sample_steps < 1) throw std::invalid_argument("sampler needs at least one step");
}

FrameMask FrameMask::prefix(std::int64_t batch, std::int64_t frames, std::int64_t context_frames) {
  if (context_frames < 0 || context_frames > frames)
    throw std::invalid_argument("context prefix of " + std::to_string(context_frames) + " frames does not fit a " +
                                std::to_string(frames) + "-frame clip");
  FrameMask mask{batch, frames, std::vector<std::uint8_t>(static_cast<std::size_t>(batch * frames), 1)};
  for (std::int64_t b = 0; b < batch; ++b)
    for (std::int64_t f = 0; f < context_frames; ++f) mask.m[static_cast<std::size_t>(b * frames + f)] = 0;
  return mask;
}

std::int64_t FrameMask::count() const {
  std::int64_t n = 0;
  for (auto v : m) n += v != 0;
  return n;
}

void FrameMask::check(const Shape& clip) const {
  if (clip.size() < 3 || clip[0] != batch || clip[1] != frames ||
      static_cast<std::int64_t>(m.size()) != batch * frames)
    throw ShapeError("mask [" + std::to_string(batch) + ", " + std::to_string(frames) + "] does not match clip " +
                     shape_str(clip));
  for (auto v : m)
    if (v > 1) throw std::invalid_argument("mask entries must be 0 or 1");
}

Tensor corrupt(const Tensor& z0, const Tensor& eps, const std::vector<float>& t, const Schedule& sched) {
  require_same_shape(z0, eps, "corrupt");
  check_times(t, z0.shape(), sched);
  const std::int64_t B = z0.dim(0);
  const std::size_t per = z0.size() / static_cast<std::size_t>(B);
  Tensor out(z0.shape());
  for (std::int64_t b = 0; b < B; ++b) {
    const std::size_t off = static_cast<std::size_t>(b) * per;
    const double tb = t[static_cast<std::size_t>(b)];
    if (tb == 0.0) {
      std::memcpy(out.data() + off, z0.data() + off, per * sizeof(float));
    } else if (tb == sched.T) {
      std::memcpy(out.data() + off, eps.data() + off, per * sizeof(float));
    } else {
      const float a = static_cast<float>(sched.alpha(tb));
      const float c = static_cast<float>(1.0 - sched.alpha(tb));
      for (std::size_t i = off; i < off + per; ++i) out[i] = a * z0[i] + c * eps[i];
    }
  }
  return out;
}

Tensor rf_target(const Tensor& z0, const Tensor& eps) {
  require_same_shape(z0, eps, "rf_target");
  Tensor out(z0.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = z0[i] - eps[i];
  return out;
}

double rf_loss(const Tensor& v, const Tensor& z0, const Tensor& eps) {
  require_same_shape(v, z0, "rf_loss");
  require_same_shape(z0, eps, "rf_loss");
  double acc = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double d = double(v[i]) - (double(z0[i]) - double(eps[i]));
    acc += d * d;
  }
  return acc / static_cast<double>(v.size());
}

ag::Var rf_loss(ag::Var v, const Tensor& z0, const Tensor& eps) {
  return ag::mse(v, v.graph().constant(rf_target(z0, eps)));
}

ag::Var rf_loss_masked(ag::Var v, const Tensor& z0, const Tensor& eps, const FrameMask& mask) {
  mask.check(v.shape());
  return ag::masked_mse(v, v.graph().constant(rf_target(z0, eps)), mask.m);
}

void apply_context(Tensor& x, const Tensor& context, const FrameMask& mask) {
  require_same_shape(x, context, "context");
  mask.check(x.shape());
  const std::size_t per = static_cast<std::size_t>(frame_size(x.shape()));
  for (std::size_t i = 0; i < mask.m.size(); ++i)
    if (mask.m[i] == 0) std::memcpy(x.data() + i * per, context.data() + i * per, per * sizeof(float));
}

Tensor masked_train_step_inputs(const Tensor& z0, const Tensor& eps, const std::vector<float>& t,
                                const FrameMask& mask, const Schedule& sched) {
  mask.check(z0.shape());
  if (mask.count() == 0) throw std::invalid_argument("mask selects no frames to predict");
  Tensor z = corrupt(z0, eps, t, sched);
  apply_context(z, z0, mask);
  return z;
}

Tensor sample(const VelocityFn& model, const Tensor& noise, const Schedule& sched, const FrameMask* mask,
              const Tensor* context) {
  sched.validate();
  if (mask && !context) throw std::invalid_argument("masked sampling needs context latents");
  Tensor z = noise;
  if (mask) apply_context(z, *context, *mask);
  const auto grid = sched.step_grid();
  const float dt = static_cast<float>(1.0 / sched.n_sample_steps);
  const auto B = static_cast<std::size_t>(z.dim(0));
  for (int k = 0; k < sched.n_sample_steps; ++k) {
    const std::vector<float> t(B, static_cast<float>(grid[static_cast<std::size_t>(k)]));
    Tensor v = model(z, t);
    require_same_shape(v, z, "velocity");
    for (std::size_t i = 0; i < z.size(); ++i) z[i] += dt * v[i];
    if (mask) apply_context(z, *context, *mask);
  }
  return z;
}

RolloutPlan build_rollout_plan(int context_frames, int pred_frames, int n_steps) {
  if (context_frames < 1 || pred_frames < 1 || n_steps < 1)
    throw std::invalid_argument("rollout needs positive context, prediction and step counts");
  RolloutPlan p{context_frames, pred_frames, n_steps, {}};
  for (int k = 0; k < n_steps; ++k) p.lengths.push_back(context_frames + pred_frames * (k + 1));
  return p;
}

RolloutResult autoregressive_rollout(const VelocityFn& model, const Tensor& context, const RolloutPlan& plan,
                                     const Schedule& sched, std::uint64_t noise_seed, std::uint64_t stream) {
  if (context.rank() < 2 || context.dim(0) != plan.context_frames)
    throw ShapeError("rollout context must have " + std::to_string(plan.context_frames) + " frames, got " +
                     shape_str(context.shape()));
  const std::int64_t Fc = plan.context_frames, W = plan.window();
  const std::size_t per = context.size() / static_cast<std::size_t>(Fc);
  Shape frame_shape(context.shape().begin() + 1, context.shape().end());

  Shape out_shape = context.shape();
  out_shape[0] = plan.total_frames();
  RolloutResult r{Tensor(out_shape), {}};
  std::memcpy(r.clip.data(), context.data(), context.size() * sizeof(float));

  Shape window_shape{1, W};
  window_shape.insert(window_shape.end(), frame_shape.begin(), frame_shape.end());
  const FrameMask mask = FrameMask::prefix(1, W, Fc);
  const CounterRng base(noise_seed, stream);

  std::int64_t known = Fc;
  for (int k = 0; k < plan.n_steps; ++k) {
    const std::int64_t first = known - Fc;
    Tensor ctx(window_shape);
    std::memcpy(ctx.data(), r.clip.data() + static_cast<std::size_t>(first) * per,
                static_cast<std::size_t>(Fc) * per * sizeof(float));
    Tensor noise(window_shape);
    CounterRng rng = base.fork(static_cast<std::uint64_t>(k));
    rng.fill_normal(noise);
    Tensor out = sample(model, noise, sched, &mask, &ctx);
    std::memcpy(r.clip.data() + static_cast<std::size_t>(known) * per,
                out.data() + static_cast<std::size_t>(Fc) * per,
                static_cast<std::size_t>(plan.pred_frames) * per * sizeof(float));
    std::vector<int> frames;
    for (std::int64_t f = first; f < first + W; ++f) frames.push_back(static_cast<int>(f));
    r.window_frames.push_back(std::move(frames));
    known += plan.pred_frames;
  }
  return r;
}

}  // namespace lavig::diffusion
