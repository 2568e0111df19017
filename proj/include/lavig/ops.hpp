#pragma once

// Differentiable tensor ops recorded on an ag::Graph.

#include <cstdint>
#include <vector>

#include "lavig/autograd.hpp"

namespace lavig::ag {

// elementwise / structural
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, float s);
Var silu(Var a);
/// tanh-approximated GELU.
Var gelu(Var a);
Var clamp(Var a, float lo, float hi);
Var reshape(Var a, Shape shape);
/// Stop-gradient copy.
Var detach(Var a);
/// x[..., offset : offset + len]
Var slice_last(Var a, std::int64_t offset, std::int64_t len);

// reductions to a single element
Var sum(Var a);
Var mean(Var a);
/// mean((a - b)^2) over all elements.
Var mse(Var a, Var b);
/// mean((a - b)^2) over the frames f of [B, F, ...] with frame_mask[b * F + f] != 0.
Var masked_mse(Var a, Var b, const std::vector<std::uint8_t>& frame_mask);

// dense layers
/// y[..., out] = x[..., in] * W[in, out] + b[out]; b may be invalid (no bias).
Var linear(Var x, Var w, Var b);
/// Normalization over the last axis without affine parameters.
Var layer_norm(Var x, float eps);
/// x[B, T, D] * (1 + scale[B, D]) + shift[B, D]
Var modulate(Var x, Var shift, Var scale);
/// x[B, T, D] + gate[B, D] * h[B, T, D]
Var gated_residual(Var x, Var gate, Var h);

enum class AttnAxis { spatial, temporal };
/// Multi-head self-attention on packed qkv[B, F, N, 3D] -> [B, F, N, D]. Spatial
/// attention mixes the N tokens of one frame; temporal attention mixes the F
/// frames at one token position.
Var attention(Var qkv, int n_heads, AttnAxis axis);

/// z[B, F, C, H, W] -> [B, F, ceil(H/p) * ceil(W/p), C*p*p], zero-padding bottom/right.
Var patchify(Var z, int p);
/// Inverse of patchify, cropping the padding: tokens -> [B, F, C, H, W].
Var unpatchify(Var tokens, int channels, int height, int width, int p);
/// x[B, F, N, D] + spatial[N, D] + temporal[f, D] (first F rows of temporal).
Var add_positional(Var x, Var spatial, Var temporal);

// convolutional layers
/// x[B, Cin, H, W], w[Cout, Cin, k, k], b[Cout] (may be invalid).
Var conv2d(Var x, Var w, Var b, int stride, int pad);
Var group_norm(Var x, Var gamma, Var beta, int groups, float eps);
/// Nearest-neighbour 2x upsampling of [B, C, H, W].
Var upsample2x(Var x);
/// x[:, start : start + len] on [B, C, H, W].
Var slice_channels(Var x, std::int64_t start, std::int64_t len);

// latent-variable helpers
/// mu + exp(logvar / 2) * eps
Var reparameterize(Var mu, Var logvar, const Tensor& eps);
/// 0.5 * mean(mu^2 + exp(logvar) - logvar - 1)
Var kl_standard_normal(Var mu, Var logvar);
/// Gather codebook[K, C] rows at indices (one per B*H*W location) into [B, C, H, W].
Var gather_codebook(Var codebook, const std::vector<std::int32_t>& indices, std::int64_t batch, std::int64_t height,
                    std::int64_t width);
/// Forward value is `quantized`; the gradient passes to z_e unchanged.
Var straight_through(Var z_e, const Tensor& quantized);

}  // namespace lavig::ag
