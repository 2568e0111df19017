#include "lavig/autoencoders.hpp"

#include <cmath>
#include <limits>

namespace lavig::ae {

void ConvStackSpec::validate() const {
  if (n_down < 1 || n_down != n_up) throw ConfigError("autoencoder needs n_down == n_up >= 1");
  if (static_cast<int>(channels.size()) != n_down + 1)
    throw ConfigError("autoencoder channel list needs n_down + 1 = " + std::to_string(n_down + 1) + " entries");
  for (int c : channels)
    if (c < 1) throw ConfigError("autoencoder channel widths must be positive");
  if (residual_per_block < 0) throw ConfigError("residual_per_block must be >= 0");
  if (norm_groups < 1) throw ConfigError("norm_groups must be >= 1");
}

void ConvStackSpec::check_input(std::int64_t height, std::int64_t width) const {
  const int f = factor();
  if (height % f != 0 || width % f != 0)
    throw ShapeError("frame " + std::to_string(height) + "x" + std::to_string(width) +
                     " is not divisible by the downsample factor " + std::to_string(f));
}

// ---- encoder / decoder --------------------------------------------------------

Encoder::Encoder(nn::ParamStore& ps, const std::string& p, const ConvStackSpec& spec, int in_channels,
                 int out_channels, CounterRng& rng) {
  spec.validate();
  const auto& ch = spec.channels;
  conv_in_ = nn::Conv2d::make(ps, p + ".conv_in", in_channels, ch[0], 3, 1, 1, rng);
  for (int i = 0; i < spec.n_down; ++i) {
    std::vector<nn::ResBlock> blocks;
    for (int r = 0; r < spec.residual_per_block; ++r)
      blocks.push_back(nn::ResBlock::make(ps, p + ".down" + std::to_string(i) + ".res" + std::to_string(r), ch[i],
                                          ch[i], spec.norm_groups, rng));
    levels_.push_back(std::move(blocks));
    down_.push_back(
        nn::Conv2d::make(ps, p + ".down" + std::to_string(i) + ".conv", ch[i], ch[i + 1], 3, 2, 1, rng));
  }
  const int top = ch.back();
  if (spec.has_mid_block) mid_.push_back(nn::ResBlock::make(ps, p + ".mid", top, top, spec.norm_groups, rng));
  norm_out_ = nn::GroupNorm::make(ps, p + ".norm_out", top, spec.norm_groups);
  conv_out_ = nn::Conv2d::make(ps, p + ".conv_out", top, out_channels, 3, 1, 1, rng);
}

Var Encoder::operator()(Graph& g, Var x) const {
  Var h = conv_in_(g, x);
  for (std::size_t i = 0; i < levels_.size(); ++i) {
    for (const auto& rb : levels_[i]) h = rb(g, h);
    h = down_[i](g, h);
  }
  for (const auto& rb : mid_) h = rb(g, h);
  return conv_out_(g, ag::silu(norm_out_(g, h)));
}

Decoder::Decoder(nn::ParamStore& ps, const std::string& p, const ConvStackSpec& spec, int in_channels,
                 int out_channels, CounterRng& rng) {
  spec.validate();
  const auto& ch = spec.channels;
  const int top = ch.back();
  conv_in_ = nn::Conv2d::make(ps, p + ".conv_in", in_channels, top, 3, 1, 1, rng);
  if (spec.has_mid_block) mid_.push_back(nn::ResBlock::make(ps, p + ".mid", top, top, spec.norm_groups, rng));
  for (int i = spec.n_up; i >= 1; --i) {
    const std::string lp = p + ".up" + std::to_string(i - 1);
    up_.push_back(nn::Conv2d::make(ps, lp + ".conv", ch[i], ch[i - 1], 3, 1, 1, rng));
    std::vector<nn::ResBlock> blocks;
    for (int r = 0; r < spec.residual_per_block; ++r)
      blocks.push_back(nn::ResBlock::make(ps, lp + ".res" + std::to_string(r), ch[i - 1], ch[i - 1],
                                          spec.norm_groups, rng));
    levels_.push_back(std::move(blocks));
  }
  norm_out_ = nn::GroupNorm::make(ps, p + ".norm_out", ch[0], spec.norm_groups);
  conv_out_ = nn::Conv2d::make(ps, p + ".conv_out", ch[0], out_channels, 3, 1, 1, rng);
}

Var Decoder::operator()(Graph& g, Var z) const {
  Var h = conv_in_(g, z);
  for (const auto& rb : mid_) h = rb(g, h);
  for (std::size_t i = 0; i < up_.size(); ++i) {
    h = up_[i](g, ag::upsample2x(h));
    for (const auto& rb : levels_[i]) h = rb(g, h);
  }
  return conv_out_(g, ag::silu(norm_out_(g, h)));
}

namespace {

constexpr std::int64_t kInferenceChunk = 32;

void check_frames(const ConvStackSpec& spec, const Shape& s) {
  if (s.size() != 4 || s[1] != 1) throw ShapeError("expected frames [B, 1, H, W], got " + shape_str(s));
  spec.check_input(s[2], s[3]);
}

template <typename Fn>
Tensor map_chunks(const Tensor& x, Fn fn) {
  std::vector<Tensor> parts;
  for (std::int64_t b = 0; b < x.dim(0); b += kInferenceChunk) {
    const std::int64_t n = std::min(kInferenceChunk, x.dim(0) - b);
    parts.push_back(fn(x.slice0(b, n)));
  }
  return parts.size() == 1 ? std::move(parts.front()) : concat0(parts);
}

}  // namespace

// ---- VAE --------------------------------------------------------------------

Vae::Vae(const ConvStackSpec& spec, int latent_channels, std::uint64_t seed)
    : spec_(spec), latent_channels_(latent_channels) {
  if (latent_channels < 1) throw ConfigError("VAE latent channels must be >= 1");
  CounterRng rng(seed, 0x766165ull);
  enc_ = Encoder(params_, "enc", spec, 1, 2 * latent_channels, rng);
  dec_ = Decoder(params_, "dec", spec, latent_channels, 1, rng);
}

VaeLatentVars Vae::encode(Graph& g, Var x) const {
  check_frames(spec_, x.shape());
  Var h = enc_(g, x);
  return {ag::slice_channels(h, 0, latent_channels_),
          ag::clamp(ag::slice_channels(h, latent_channels_, latent_channels_), kLogvarMin, kLogvarMax)};
}

Var Vae::decode(Graph& g, Var z) const {
  if (z.shape().size() != 4 || z.shape()[1] != latent_channels_)
    throw ShapeError("VAE latent must be [B, " + std::to_string(latent_channels_) + ", h, w], got " +
                     shape_str(z.shape()));
  return dec_(g, z);
}

Tensor Vae::encode_mean(const Tensor& x) const {
  return map_chunks(x, [this](const Tensor& part) {
    Graph g(false);
    return encode(g, g.constant(part)).mu.value();
  });
}

Tensor Vae::decode(const Tensor& z) const {
  return map_chunks(z, [this](const Tensor& part) {
    Graph g(false);
    return decode(g, g.constant(part)).value();
  });
}

Tensor vae_sample(const Tensor& mu, const Tensor& logvar, const Tensor& eps) {
  Graph g(false);
  return ag::reparameterize(g.constant(mu), g.constant(logvar), eps).value();
}

namespace {

double mse_d(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mse");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - b[i];
    s += d * d;
  }
  return s / static_cast<double>(a.size());
}

}  // namespace

AeLossReport vae_loss(const Tensor& x, const Tensor& x_hat, const Tensor& mu, const Tensor& logvar, double beta) {
  require_same_shape(mu, logvar, "vae_loss latent");
  AeLossReport r;
  r.recon = mse_d(x_hat, x);
  double kl = 0.0;
  for (std::size_t i = 0; i < mu.size(); ++i) {
    const double m = mu[i], l = logvar[i];
    kl += m * m + std::exp(l) - l - 1.0;
  }
  r.kl_or_codebook = 0.5 * kl / static_cast<double>(mu.size());
  r.beta = beta;
  r.total = r.recon + beta * r.kl_or_codebook;
  return r;
}

VaeStep vae_forward(Graph& g, const Vae& vae, const Tensor& x, const Tensor& eps, double beta) {
  Var xv = g.constant(x);
  auto lat = vae.encode(g, xv);
  Var z = ag::reparameterize(lat.mu, lat.logvar, eps);
  Var x_hat = vae.decode(g, z);
  Var recon = ag::mse(x_hat, xv);
  Var kl = ag::kl_standard_normal(lat.mu, lat.logvar);
  Var total = ag::add(recon, ag::scale(kl, static_cast<float>(beta)));
  VaeStep s{total, {}};
  s.report.recon = recon.value()[0];
  s.report.kl_or_codebook = kl.value()[0];
  s.report.beta = beta;
  s.report.total = s.report.recon + beta * s.report.kl_or_codebook;
  return s;
}

// ---- VQ-VAE -----------------------------------------------------------------

QuantResult quantize(const Tensor& z_e, const Tensor& codebook) {
  if (codebook.rank() != 2 || codebook.dim(0) < 1) throw std::invalid_argument("quantize: empty codebook");
  if (z_e.rank() != 4 || z_e.dim(1) != codebook.dim(1))
    throw ShapeError("quantize: z_e " + shape_str(z_e.shape()) + " does not match codebook " +
                     shape_str(codebook.shape()));
  const std::int64_t B = z_e.dim(0), C = z_e.dim(1), HW = z_e.dim(2) * z_e.dim(3), K = codebook.dim(0);
  QuantResult q;
  q.z_e = z_e;
  q.z_q = Tensor(z_e.shape());
  q.indices.resize(static_cast<std::size_t>(B * HW));
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t p = 0; p < HW; ++p) {
      double best = std::numeric_limits<double>::infinity();
      std::int32_t best_k = 0;
      for (std::int64_t k = 0; k < K; ++k) {
        double d = 0.0;
        for (std::int64_t c = 0; c < C; ++c) {
          const double diff = static_cast<double>(z_e[static_cast<std::size_t>((b * C + c) * HW + p)]) -
                              codebook[static_cast<std::size_t>(k * C + c)];
          d += diff * diff;
        }
        if (d < best) {
          best = d;
          best_k = static_cast<std::int32_t>(k);
        }
      }
      q.indices[static_cast<std::size_t>(b * HW + p)] = best_k;
      for (std::int64_t c = 0; c < C; ++c)
        q.z_q[static_cast<std::size_t>((b * C + c) * HW + p)] = codebook[static_cast<std::size_t>(best_k * C + c)];
    }
  return q;
}

VqVae::VqVae(const ConvStackSpec& spec, int latent_channels, int codebook_size, std::uint64_t seed)
    : spec_(spec), latent_channels_(latent_channels) {
  if (latent_channels < 1) throw ConfigError("VQ-VAE latent channels must be >= 1");
  if (codebook_size < 2) throw ConfigError("codebook needs at least 2 entries");
  CounterRng rng(seed, 0x7671ull);
  enc_ = Encoder(params_, "enc", spec, 1, latent_channels, rng);
  dec_ = Decoder(params_, "dec", spec, latent_channels, 1, rng);
  codebook_ = &params_.add("codebook",
                           nn::uniform_tensor({codebook_size, latent_channels}, 1.0f / static_cast<float>(codebook_size),
                                              rng));
}

Var VqVae::encode(Graph& g, Var x) const {
  check_frames(spec_, x.shape());
  return enc_(g, x);
}

Var VqVae::decode(Graph& g, Var z_q) const {
  if (z_q.shape().size() != 4 || z_q.shape()[1] != latent_channels_)
    throw ShapeError("VQ-VAE latent must be [B, " + std::to_string(latent_channels_) + ", h, w], got " +
                     shape_str(z_q.shape()));
  return dec_(g, z_q);
}

Tensor VqVae::encode(const Tensor& x) const {
  return map_chunks(x, [this](const Tensor& part) {
    Graph g(false);
    return encode(g, g.constant(part)).value();
  });
}

Tensor VqVae::encode_quantized(const Tensor& x) const { return quantize(encode(x), codebook()).z_q; }

Tensor VqVae::decode(const Tensor& z) const {
  return map_chunks(z, [this](const Tensor& part) {
    Graph g(false);
    return decode(g, g.constant(part)).value();
  });
}

AeLossReport vqvae_loss(const Tensor& x, const Tensor& x_hat, const Tensor& z_e, const Tensor& z_q, double beta) {
  AeLossReport r;
  r.recon = mse_d(x_hat, x);
  const double sq = mse_d(z_e, z_q);
  r.kl_or_codebook = sq;
  r.commit = beta * sq;
  r.beta = beta;
  r.total = r.recon + r.kl_or_codebook + r.commit;
  return r;
}

VqStep vqvae_forward(Graph& g, const VqVae& vq, const Tensor& x, double beta) {
  Var xv = g.constant(x);
  Var z_e = vq.encode(g, xv);
  const Shape& zs = z_e.shape();
  VqStep s{};
  s.quant = quantize(z_e.value(), vq.codebook());
  Var z_q = ag::gather_codebook(g.param(vq.codebook_param()), s.quant.indices, zs[0], zs[2], zs[3]);
  Var codebook_term = ag::mse(ag::detach(z_e), z_q);
  Var commit_term = ag::scale(ag::mse(z_e, ag::detach(z_q)), static_cast<float>(beta));
  Var x_hat = vq.decode(g, ag::straight_through(z_e, s.quant.z_q));
  Var recon = ag::mse(x_hat, xv);
  s.total = ag::add(ag::add(recon, codebook_term), commit_term);
  s.report.recon = recon.value()[0];
  s.report.kl_or_codebook = codebook_term.value()[0];
  s.report.commit = commit_term.value()[0];
  s.report.beta = beta;
  s.report.total = s.report.recon + s.report.kl_or_codebook + s.report.commit;
  return s;
}

// ---- config helpers ---------------------------------------------------------

ConvStackSpec conv_stack_from_config(const Config& cfg, const std::string& prefix) {
  ConvStackSpec s;
  s.channels = cfg.int_list(prefix + ".channels");
  s.n_down = s.n_up = static_cast<int>(s.channels.size()) - 1;
  s.residual_per_block = cfg.i32(prefix + ".res_blocks");
  s.norm_groups = cfg.i32(prefix + ".groups");
  s.has_mid_block = true;
  s.validate();
  return s;
}

Vae make_vae(const Config& cfg) {
  return Vae(conv_stack_from_config(cfg, "vae"), cfg.i32("vae.latent_channels"),
             static_cast<std::uint64_t>(cfg.i64("seed")));
}

VqVae make_vqvae(const Config& cfg) {
  return VqVae(conv_stack_from_config(cfg, "vqvae"), cfg.i32("vqvae.latent_channels"),
               cfg.i32("vqvae.codebook_size"), static_cast<std::uint64_t>(cfg.i64("seed")));
}

}  // namespace lavig::ae
