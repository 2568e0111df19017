#pragma once

// Frame autoencoders: a Gaussian VAE for pressure and a VQ-VAE for saturation.
// Both are convolutional encoder/decoder stacks without attention; inputs are
// single-channel frames [B, 1, H, W] and latents are [B, C, H/f, W/f].

#include <cstdint>
#include <string>
#include <vector>

#include "lavig/config.hpp"
#include "lavig/nn.hpp"

namespace lavig::ae {

using ag::Graph;
using ag::Var;

struct ConvStackSpec {
  int n_down = 3;
  int n_up = 3;
  std::vector<int> channels{16, 32, 48, 64};  // n_down + 1 levels
  int residual_per_block = 1;
  int norm_groups = 16;
  bool has_mid_block = true;

  int factor() const { return 1 << n_down; }
  void validate() const;
  /// Throws ShapeError unless H and W are divisible by the downsample factor.
  void check_input(std::int64_t height, std::int64_t width) const;
};

struct AeLossReport {
  double recon = 0.0;
  double kl_or_codebook = 0.0;  // KL for the VAE, codebook term for the VQ-VAE
  double commit = 0.0;          // VQ-VAE only, already scaled by beta
  double beta = 0.0;
  double total = 0.0;
};

/// Convolutional encoder: conv_in, per level residual blocks then a stride-2
/// conv, optional mid block, then norm/SiLU/conv_out to `out_channels`.
class Encoder {
 public:
  Encoder() = default;
  Encoder(nn::ParamStore& ps, const std::string& prefix, const ConvStackSpec& spec, int in_channels,
          int out_channels, CounterRng& rng);
  Var operator()(Graph& g, Var x) const;

 private:
  nn::Conv2d conv_in_;
  std::vector<std::vector<nn::ResBlock>> levels_;
  std::vector<nn::Conv2d> down_;
  std::vector<nn::ResBlock> mid_;
  nn::GroupNorm norm_out_;
  nn::Conv2d conv_out_;
};

/// Mirror of Encoder with nearest-neighbour upsampling followed by a conv.
class Decoder {
 public:
  Decoder() = default;
  Decoder(nn::ParamStore& ps, const std::string& prefix, const ConvStackSpec& spec, int in_channels,
          int out_channels, CounterRng& rng);
  Var operator()(Graph& g, Var z) const;

 private:
  nn::Conv2d conv_in_;
  std::vector<nn::ResBlock> mid_;
  std::vector<nn::Conv2d> up_;
  std::vector<std::vector<nn::ResBlock>> levels_;
  nn::GroupNorm norm_out_;
  nn::Conv2d conv_out_;
};

// ---- VAE --------------------------------------------------------------------

struct VaeLatentVars {
  Var mu;
  Var logvar;
};

class Vae {
 public:
  Vae(const ConvStackSpec& spec, int latent_channels, std::uint64_t seed);
  // Layers point into params_, whose element addresses survive moves but not copies.
  Vae(const Vae&) = delete;
  Vae& operator=(const Vae&) = delete;
  Vae(Vae&&) = default;

  VaeLatentVars encode(Graph& g, Var x) const;
  Var decode(Graph& g, Var z) const;

  /// Inference helpers (no gradient tape kept).
  Tensor encode_mean(const Tensor& x) const;
  Tensor decode(const Tensor& z) const;

  const ConvStackSpec& spec() const { return spec_; }
  int latent_channels() const { return latent_channels_; }
  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }

 private:
  ConvStackSpec spec_;
  int latent_channels_;
  nn::ParamStore params_;
  Encoder enc_;
  Decoder dec_;
};

inline constexpr float kLogvarMin = -30.0f;
inline constexpr float kLogvarMax = 20.0f;

/// z = mu + exp(logvar / 2) * eps, elementwise.
Tensor vae_sample(const Tensor& mu, const Tensor& logvar, const Tensor& eps);

/// recon = mse(x_hat, x); KL = 0.5 * mean(mu^2 + exp(logvar) - logvar - 1); total = recon + beta * KL.
AeLossReport vae_loss(const Tensor& x, const Tensor& x_hat, const Tensor& mu, const Tensor& logvar, double beta);

struct VaeStep {
  Var total;
  AeLossReport report;
};

/// Full training forward pass for a batch of frames with reparameterization noise `eps`.
VaeStep vae_forward(Graph& g, const Vae& vae, const Tensor& x, const Tensor& eps, double beta);

// ---- VQ-VAE -------------------------------------------------------------------

struct QuantResult {
  std::vector<std::int32_t> indices;  // one per (b, y, x)
  Tensor z_q;                         // [B, C, H', W']
  Tensor z_e;
};

/// Nearest codebook entry per location (squared L2, ties to the lowest index).
QuantResult quantize(const Tensor& z_e, const Tensor& codebook);

class VqVae {
 public:
  VqVae(const ConvStackSpec& spec, int latent_channels, int codebook_size, std::uint64_t seed);
  VqVae(const VqVae&) = delete;
  VqVae& operator=(const VqVae&) = delete;
  VqVae(VqVae&&) = default;

  Var encode(Graph& g, Var x) const;
  Var decode(Graph& g, Var z_q) const;

  Tensor encode(const Tensor& x) const;
  /// Encode then quantize (the latent the transformer sees).
  Tensor encode_quantized(const Tensor& x) const;
  Tensor decode(const Tensor& z) const;

  const Tensor& codebook() const { return codebook_->value; }
  ag::Parameter& codebook_param() const { return *codebook_; }
  int codebook_size() const { return static_cast<int>(codebook_->value.dim(0)); }
  const ConvStackSpec& spec() const { return spec_; }
  int latent_channels() const { return latent_channels_; }
  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }

 private:
  ConvStackSpec spec_;
  int latent_channels_;
  nn::ParamStore params_;
  Encoder enc_;
  Decoder dec_;
  ag::Parameter* codebook_ = nullptr;
};

/// recon = mse; codebook = mean (sg[z_e] - z_q)^2; commit = beta * mean (sg[z_q] - z_e)^2.
AeLossReport vqvae_loss(const Tensor& x, const Tensor& x_hat, const Tensor& z_e, const Tensor& z_q, double beta);

struct VqStep {
  Var total;
  AeLossReport report;
  QuantResult quant;
};

/// Training forward pass: the decoder sees z_e + sg[z_q - z_e], the codebook
/// term reaches only the codebook and the commitment term only the encoder.
VqStep vqvae_forward(Graph& g, const VqVae& vq, const Tensor& x, double beta);

// ---- config helpers ---------------------------------------------------------

/// prefix is "vae" or "vqvae".
ConvStackSpec conv_stack_from_config(const Config& cfg, const std::string& prefix);
Vae make_vae(const Config& cfg);
VqVae make_vqvae(const Config& cfg);

}  // namespace lavig::ae
