#include "lavig/vdit.hpp"

#include <cmath>

namespace lavig::vdit {

namespace {
constexpr float kLnEps = 1e-6f;
constexpr float kPosStd = 0.02f;
}  // namespace

int VDiTConfig::tokens_per_frame() const {
  return ((latent_height + patch - 1) / patch) * ((latent_width + patch - 1) / patch);
}

void VDiTConfig::validate() const {
  if (hidden_dim != n_heads * head_dim)
    throw ConfigError("hidden_dim (" + std::to_string(hidden_dim) + ") must equal heads x head_dim (" +
                      std::to_string(n_heads) + " x " + std::to_string(head_dim) + ")");
  if (n_layers < 2 || n_layers % 2 != 0) throw ConfigError("transformer layers must be a positive even count");
  if (patch < 1) throw ConfigError("patch size must be >= 1");
  if (t_embed_dim < 2 || t_embed_dim % 2 != 0) throw ConfigError("timestep embedding size must be even");
  if (in_channels < 1 || latent_height < 1 || latent_width < 1 || max_frames < 1)
    throw ConfigError("transformer input geometry must be positive");
  if (!(T > 0.0)) throw ConfigError("diffusion horizon T must be positive");
}

VDiTConfig vdit_config_from(const Config& cfg, int in_channels, int latent_height, int latent_width,
                            int max_frames) {
  VDiTConfig c;
  c.hidden_dim = cfg.i32("vdit.hidden_dim");
  c.n_layers = cfg.i32("vdit.layers");
  c.n_heads = cfg.i32("vdit.heads");
  c.head_dim = c.n_heads > 0 ? c.hidden_dim / c.n_heads : 0;
  c.patch = cfg.i32("vdit.patch");
  c.t_embed_dim = cfg.i32("vdit.t_embed_dim");
  c.in_channels = in_channels;
  c.latent_height = latent_height;
  c.latent_width = latent_width;
  c.max_frames = max_frames;
  c.T = cfg.f64("diffusion.T");
  if (c.n_heads < 1 || c.hidden_dim % c.n_heads != 0)
    throw ConfigError("vdit.hidden_dim must be divisible by vdit.heads");
  c.validate();
  return c;
}

Tensor timestep_features(const std::vector<float>& t, int dim, double T) {
  const int half = dim / 2;
  Tensor out({static_cast<std::int64_t>(t.size()), dim});
  for (std::size_t b = 0; b < t.size(); ++b) {
    if (!(t[b] >= 0.0f && t[b] <= T))
      throw std::out_of_range("diffusion time " + std::to_string(t[b]) + " outside [0, " + std::to_string(T) + "]");
    for (int i = 0; i < half; ++i) {
      const double freq = std::exp(-std::log(10000.0) * i / half);
      const double arg = static_cast<double>(t[b]) * freq;
      out[b * dim + i] = static_cast<float>(std::cos(arg));
      out[b * dim + half + i] = static_cast<float>(std::sin(arg));
    }
  }
  return out;
}

VDiT::VDiT(const VDiTConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  CounterRng rng(seed, 0x76646974ull);
  const int D = cfg_.hidden_dim;
  patch_embed_ = nn::Linear::xavier(params_, "patch_embed", cfg_.patch_features(), D, rng);
  pos_spatial_ = &params_.add("pos.spatial", nn::normal_tensor({cfg_.tokens_per_frame(), D}, kPosStd, rng));
  pos_temporal_ = &params_.add("pos.temporal", nn::normal_tensor({cfg_.max_frames, D}, kPosStd, rng));
  t_mlp1_ = nn::Linear::xavier(params_, "t_embed.fc1", cfg_.t_embed_dim, D, rng);
  t_mlp2_ = nn::Linear::xavier(params_, "t_embed.fc2", D, D, rng);
  for (int l = 0; l < cfg_.n_layers; ++l) {
    const std::string p = "block" + std::to_string(l);
    Block b;
    b.ada = nn::Linear::zeros(params_, p + ".ada", D, 6 * D);
    b.qkv = nn::Linear::xavier(params_, p + ".qkv", D, 3 * D, rng);
    b.proj = nn::Linear::xavier(params_, p + ".proj", D, D, rng);
    b.fc1 = nn::Linear::xavier(params_, p + ".fc1", D, 4 * D, rng);
    b.fc2 = nn::Linear::xavier(params_, p + ".fc2", 4 * D, D, rng);
    blocks_.push_back(b);
  }
  final_ada_ = nn::Linear::zeros(params_, "final.ada", D, 2 * D);
  head_ = nn::Linear::zeros(params_, "final.head", D, 2 * cfg_.patch_features());
}

void VDiT::randomize(std::uint64_t seed, float scale) {
  CounterRng rng(seed, 0x72616e64ull);
  for (auto* p : params_.all())
    for (auto& v : p->value.values()) v = static_cast<float>(scale * rng.normal());
}

Var VDiT::condition(Graph& g, const std::vector<float>& t) const {
  Var f = g.constant(timestep_features(t, cfg_.t_embed_dim, cfg_.T));
  return t_mlp2_(g, ag::silu(t_mlp1_(g, f)));
}

Var VDiT::embed(Graph& g, Var z_t) const {
  const Shape& s = z_t.shape();
  if (s.size() != 5 || s[2] != cfg_.in_channels || s[3] != cfg_.latent_height || s[4] != cfg_.latent_width)
    throw ShapeError("transformer expects [B, F, " + std::to_string(cfg_.in_channels) + ", " +
                     std::to_string(cfg_.latent_height) + ", " + std::to_string(cfg_.latent_width) + "], got " +
                     shape_str(s));
  if (s[1] > cfg_.max_frames)
    throw ShapeError("clip of " + std::to_string(s[1]) + " frames exceeds the " + std::to_string(cfg_.max_frames) +
                     "-frame position table");
  Var tokens = patch_embed_(g, ag::patchify(z_t, cfg_.patch));
  return ag::add_positional(tokens, g.param(*pos_spatial_), g.param(*pos_temporal_));
}

Var VDiT::block(Graph& g, int layer, Var x, Var cond) const {
  const Block& b = blocks_[static_cast<std::size_t>(layer)];
  const int D = cfg_.hidden_dim;
  Var mod = b.ada(g, ag::silu(cond));
  auto part = [&](int i) { return ag::slice_last(mod, static_cast<std::int64_t>(i) * D, D); };
  const auto axis = layer % 2 == 0 ? ag::AttnAxis::spatial : ag::AttnAxis::temporal;

  Var h = ag::modulate(ag::layer_norm(x, kLnEps), part(0), part(1));
  Var a = b.proj(g, ag::attention(b.qkv(g, h), cfg_.n_heads, axis));
  x = ag::gated_residual(x, part(2), a);

  h = ag::modulate(ag::layer_norm(x, kLnEps), part(3), part(4));
  Var m = b.fc2(g, ag::gelu(b.fc1(g, h)));
  return ag::gated_residual(x, part(5), m);
}

Var VDiT::head_tokens(Graph& g, Var z_t, const std::vector<float>& t) const {
  if (static_cast<std::int64_t>(t.size()) != z_t.shape()[0])
    throw ShapeError("need one diffusion time per batch entry");
  Var cond = condition(g, t);
  Var x = embed(g, z_t);
  for (int l = 0; l < cfg_.n_layers; ++l) x = block(g, l, x, cond);
  const int D = cfg_.hidden_dim;
  Var mod = final_ada_(g, ag::silu(cond));
  Var h = ag::modulate(ag::layer_norm(x, kLnEps), ag::slice_last(mod, 0, D), ag::slice_last(mod, D, D));
  return head_(g, h);
}

Var VDiT::forward(Graph& g, Var z_t, const std::vector<float>& t) const {
  Var out = head_tokens(g, z_t, t);
  // The first output group is the velocity; the second is produced and unused.
  Var v = ag::slice_last(out, 0, cfg_.patch_features());
  return ag::unpatchify(v, cfg_.in_channels, cfg_.latent_height, cfg_.latent_width, cfg_.patch);
}

Tensor VDiT::forward(const Tensor& z_t, const std::vector<float>& t) const {
  Graph g(false);
  return forward(g, g.constant(z_t), t).value();
}

}  // namespace lavig::vdit
