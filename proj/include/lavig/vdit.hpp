#pragma once

// Latent video diffusion transformer: patch embedding, alternating spatial and
// temporal self-attention blocks with AdaLN-Zero timestep conditioning, and a
// zero-initialized output head that is unpatchified back to latent frames.

#include <cstdint>
#include <vector>

#include "lavig/config.hpp"
#include "lavig/nn.hpp"

namespace lavig::vdit {

using ag::Graph;
using ag::Var;

struct VDiTConfig {
  int hidden_dim = 128;
  int n_layers = 4;
  int n_heads = 4;
  int head_dim = 32;
  int patch = 2;
  int t_embed_dim = 64;
  int in_channels = 6;
  int latent_height = 4;
  int latent_width = 8;
  int max_frames = 17;  // rows of the temporal position table
  double T = 1000.0;

  int tokens_per_frame() const;
  int patch_features() const { return in_channels * patch * patch; }
  void validate() const;
};

VDiTConfig vdit_config_from(const Config& cfg, int in_channels, int latent_height, int latent_width,
                            int max_frames);

/// Sinusoidal features [cos(t f_0) .. cos(t f_{h-1}), sin(t f_0) .. sin(t f_{h-1})]
/// with f_i = 10000^(-i/h), h = dim / 2. Throws when t is outside [0, T].
Tensor timestep_features(const std::vector<float>& t, int dim, double T);

class VDiT {
 public:
  /// Standard initialization: Xavier-uniform linears, N(0, 0.02) positions,
  /// zero-initialized modulation and output layers.
  VDiT(const VDiTConfig& cfg, std::uint64_t seed);
  VDiT(const VDiT&) = delete;
  VDiT& operator=(const VDiT&) = delete;
  VDiT(VDiT&&) = default;

  /// z_t [B, F, C, h, w], t per batch entry -> velocity [B, F, C, h, w].
  Var forward(Graph& g, Var z_t, const std::vector<float>& t) const;
  Tensor forward(const Tensor& z_t, const std::vector<float>& t) const;

  /// Both output groups, tokens [B, F, N, 2 * C * p * p] before unpatchify.
  Var head_tokens(Graph& g, Var z_t, const std::vector<float>& t) const;

  /// Conditioning vector [B, D] = MLP(sinusoidal(t)).
  Var condition(Graph& g, const std::vector<float>& t) const;
  /// Block `layer` on tokens [B, F, N, D] (spatial for even layers, temporal for odd).
  Var block(Graph& g, int layer, Var tokens, Var cond) const;
  Var embed(Graph& g, Var z_t) const;

  const VDiTConfig& config() const { return cfg_; }
  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }

  /// Overwrites every parameter with small random values (used for gradient
  /// checks, where zero-initialized gates would hide most of the network).
  void randomize(std::uint64_t seed, float scale);

 private:
  struct Block {
    nn::Linear ada;  // SiLU(c) -> 6D: shift/scale/gate for attention then MLP
    nn::Linear qkv;
    nn::Linear proj;
    nn::Linear fc1;
    nn::Linear fc2;
  };

  VDiTConfig cfg_;
  nn::ParamStore params_;
  nn::Linear patch_embed_;
  ag::Parameter* pos_spatial_ = nullptr;
  ag::Parameter* pos_temporal_ = nullptr;
  nn::Linear t_mlp1_;
  nn::Linear t_mlp2_;
  std::vector<Block> blocks_;
  nn::Linear final_ada_;
  nn::Linear head_;
};

}  // namespace lavig::vdit
