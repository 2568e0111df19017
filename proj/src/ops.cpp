#include "lavig/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "lavig/kernels.hpp"

namespace lavig::ag {

namespace {

Graph& graph_of(Var a) { return a.graph(); }

void require(bool ok, const char* what, const Shape& a, const Shape& b = {}) {
  if (!ok) throw ShapeError(std::string(what) + ": bad shapes " + shape_str(a) + (b.empty() ? "" : " / " + shape_str(b)));
}

std::size_t rows_of(const Shape& s) {
  std::size_t r = 1;
  for (std::size_t i = 0; i + 1 < s.size(); ++i) r *= static_cast<std::size_t>(s[i]);
  return r;
}

}  // namespace

// ---------------------------------------------------------------- elementwise

Var add(Var a, Var b) {
  require(a.shape() == b.shape(), "add", a.shape(), b.shape());
  Tensor out = a.value();
  kernels::axpy(1.0f, b.value().data(), out.data(), out.size());
  return graph_of(a).record(std::move(out), {a, b}, [a, b](Graph& g, int self) {
    const Tensor& gy = g.grad(self);
    for (Var in : {a, b})
      if (g.requires_grad(in.id())) kernels::axpy(1.0f, gy.data(), g.grad(in.id()).data(), gy.size());
  });
}

Var sub(Var a, Var b) {
  require(a.shape() == b.shape(), "sub", a.shape(), b.shape());
  Tensor out = a.value();
  kernels::axpy(-1.0f, b.value().data(), out.data(), out.size());
  return graph_of(a).record(std::move(out), {a, b}, [a, b](Graph& g, int self) {
    const Tensor& gy = g.grad(self);
    if (g.requires_grad(a.id())) kernels::axpy(1.0f, gy.data(), g.grad(a.id()).data(), gy.size());
    if (g.requires_grad(b.id())) kernels::axpy(-1.0f, gy.data(), g.grad(b.id()).data(), gy.size());
  });
}

Var mul(Var a, Var b) {
  require(a.shape() == b.shape(), "mul", a.shape(), b.shape());
  Tensor out(a.shape());
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return graph_of(a).record(std::move(out), {a, b}, [a, b](Graph& g, int self) {
    const Tensor& gy = g.grad(self);
    if (g.requires_grad(a.id())) {
      Tensor& ga = g.grad(a.id());
      const Tensor& bv = g.value(b.id());
      for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * bv[i];
    }
    if (g.requires_grad(b.id())) {
      Tensor& gb = g.grad(b.id());
      const Tensor& av = g.value(a.id());
      for (std::size_t i = 0; i < gy.size(); ++i) gb[i] += gy[i] * av[i];
    }
  });
}

Var scale(Var a, float s) {
  Tensor out = a.value();
  for (auto& v : out.values()) v *= s;
  return graph_of(a).record(std::move(out), {a}, [a, s](Graph& g, int self) {
    const Tensor& gy = g.grad(self);
    kernels::axpy(s, gy.data(), g.grad(a.id()).data(), gy.size());
  });
}

Var silu(Var a) {
  Tensor out(a.shape());
  const Tensor& x = a.value();
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] / (1.0f + std::exp(-x[i]));
  return graph_of(a).record(std::move(out), {a}, [a](Graph& g, int self) {
    const Tensor& gy = g.grad(self);
    const Tensor& x = g.value(a.id());
    Tensor& gx = g.grad(a.id());
    for (std::size_t i = 0; i < x.size(); ++i) {
      const float s = 1.0f / (1.0f + std::exp(-x[i]));
      gx[i] += gy[i] * s * (1.0f + x[i] * (1.0f - s));
    }
  });
}

namespace {
constexpr float kGeluC = 0.7978845608028654f;  // sqrt(2 / pi)
constexpr float kGeluA = 0.044715f;
}  // namespace

Var gelu(Var a) {
  Tensor out(a.shape());
  const Tensor& x = a.value();
  for (std::size_t i = 0; i < x.size(); ++i) {
    const float v = x[i];
    out[i] = 0.5f * v * (1.0f + std::tanh(kGeluC * (v + kGeluA * v * v * v)));
  }
  return graph_of(a).record(std::move(out), {a}, [a](Graph& g, int self) {
    const Tensor& gy = g.grad(self);
    const Tensor& x = g.value(a.id());
    Tensor& gx = g.grad(a.id());
    for (std::size_t i = 0; i < x.size(); ++i) {
      const float v = x[i];
      const float t = std::tanh(kGeluC * (v + kGeluA * v * v * v));
      const float d = 0.5f * (1.0f + t) + 0.5f * v * (1.0f - t * t) * kGeluC * (1.0f + 3.0f * kGeluA * v * v);
      gx[i] += gy[i] * d;
    }
  });
}

Var clamp(Var a, float lo, float hi) {
  Tensor out = a.value();
  for (auto& v : out.values()) v = std::clamp(v, lo, hi);
  return graph_of(a).record(std::move(out), {a}, [a, lo, hi](Graph& g, int self) {
    const Tensor& gy = g.grad(self);
    const Tensor& x = g.value(a.id());
    Tensor& gx = g.grad(a.id());
    for (std::size_t i = 0; i < x.size(); ++i)
      if (x[i] >= lo && x[i] <= hi) gx[i] += gy[i];
  });
}

Var reshape(Var a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return graph_of(a).record(std::move(out), {a}, [a](Graph& g, int self) {
    const Tensor& gy = g.grad(self);
    kernels::axpy(1.0f, gy.data(), g.grad(a.id()).data(), gy.size());
  });
}

Var detach(Var a) { return graph_of(a).constant(a.value()); }

Var slice_last(Var a, std::int64_t offset, std::int64_t len) {
  const Shape& s = a.shape();
  require(!s.empty() && offset >= 0 && len > 0 && offset + len <= s.back(), "slice_last", s);
  const std::int64_t d = s.back();
  const std::size_t rows = rows_of(s);
  Shape os = s;
  os.back() = len;
  Tensor out(os);
  const Tensor& x = a.value();
  for (std::size_t r = 0; r < rows; ++r)
    std::copy_n(x.data() + r * d + offset, len, out.data() + r * len);
  return graph_of(a).record(std::move(out), {a}, [a, rows, d, offset, len](Graph& g, int self) {
    const Tensor& gy = g.grad(self);
    Tensor& gx = g.grad(a.id());
    for (std::size_t r = 0; r < rows; ++r)
      kernels::axpy(1.0f, gy.data() + r * len, gx.data() + r * d + offset, static_cast<std::size_t>(len));
  });
}

// ----------------------------------------------------------------- reductions

Var sum(Var a) {
  double s = 0.0;
  for (float v : a.value().values()) s += v;
  return graph_of(a).record(Tensor::scalar(static_cast<float>(s)), {a}, [a](Graph& g, int self) {
    const float gy = g.grad(self)[0];
    for (auto& v : g.grad(a.id()).values()) v += gy;
  });
}

Var mean(Var a) {
  const double n = static_cast<double>(a.value().size());
  double s = 0.0;
  for (float v : a.value().values()) s += v;
  return graph_of(a).record(Tensor::scalar(static_cast<float>(s / n)), {a}, [a, n](Graph& g, int self) {
    const float gy = static_cast<float>(g.grad(self)[0] / n);
    for (auto& v : g.grad(a.id()).values()) v += gy;
  });
}

Var mse(Var a, Var b) {
  require(a.shape() == b.shape(), "mse", a.shape(), b.shape());
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  double s = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) {
    const double d = static_cast<double>(av[i]) - bv[i];
    s += d * d;
  }
  const double n = static_cast<double>(av.size());
  return graph_of(a).record(Tensor::scalar(static_cast<float>(s / n)), {a, b}, [a, b, n](Graph& g, int self) {
    const float k = static_cast<float>(2.0 * g.grad(self)[0] / n);
    const Tensor& av = g.value(a.id());
    const Tensor& bv = g.value(b.id());
    if (g.requires_grad(a.id())) {
      Tensor& ga = g.grad(a.id());
      for (std::size_t i = 0; i < av.size(); ++i) ga[i] += k * (av[i] - bv[i]);
    }
    if (g.requires_grad(b.id())) {
      Tensor& gb = g.grad(b.id());
      for (std::size_t i = 0; i < av.size(); ++i) gb[i] -= k * (av[i] - bv[i]);
    }
  });
}

Var masked_mse(Var a, Var b, const std::vector<std::uint8_t>& frame_mask) {
  require(a.shape() == b.shape() && a.shape().size() >= 2, "masked_mse", a.shape(), b.shape());
  const std::int64_t frames_total = a.shape()[0] * a.shape()[1];
  require(static_cast<std::int64_t>(frame_mask.size()) == frames_total, "masked_mse mask", a.shape());
  const std::size_t per_frame = a.value().size() / static_cast<std::size_t>(frames_total);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  double s = 0.0;
  std::size_t count = 0;
  for (std::int64_t f = 0; f < frames_total; ++f) {
    if (!frame_mask[static_cast<std::size_t>(f)]) continue;
    count += per_frame;
    for (std::size_t i = f * per_frame; i < (f + 1) * per_frame; ++i) {
      const double d = static_cast<double>(av[i]) - bv[i];
      s += d * d;
    }
  }
  if (count == 0) throw std::invalid_argument("masked_mse: mask selects no frames");
  const double n = static_cast<double>(count);
  return graph_of(a).record(Tensor::scalar(static_cast<float>(s / n)), {a, b},
                            [a, b, n, frame_mask, per_frame](Graph& g, int self) {
                              const float k = static_cast<float>(2.0 * g.grad(self)[0] / n);
                              const Tensor& av = g.value(a.id());
                              const Tensor& bv = g.value(b.id());
                              const bool ga_on = g.requires_grad(a.id());
                              const bool gb_on = g.requires_grad(b.id());
                              for (std::size_t f = 0; f < frame_mask.size(); ++f) {
                                if (!frame_mask[f]) continue;
                                for (std::size_t i = f * per_frame; i < (f + 1) * per_frame; ++i) {
                                  const float d = k * (av[i] - bv[i]);
                                  if (ga_on) g.grad(a.id())[i] += d;
                                  if (gb_on) g.grad(b.id())[i] -= d;
                                }
                              }
                            });
}

// --------------------------------------------------------------- dense layers

Var linear(Var x, Var w, Var b) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  require(ws.size() == 2 && !xs.empty() && xs.back() == ws[0], "linear", xs, ws);
  const int in = static_cast<int>(ws[0]);
  const int out_dim = static_cast<int>(ws[1]);
  const int rows = static_cast<int>(rows_of(xs));
  Shape os = xs;
  os.back() = out_dim;
  Tensor out(os);
  kernels::gemm(rows, out_dim, in, x.value().data(), in, w.value().data(), out_dim, out.data(), out_dim, false);
  const bool has_bias = b.valid();
  if (has_bias) {
    require(b.shape() == Shape{out_dim}, "linear bias", b.shape());
    for (int r = 0; r < rows; ++r)
      kernels::axpy(1.0f, b.value().data(), out.data() + static_cast<std::size_t>(r) * out_dim,
                    static_cast<std::size_t>(out_dim));
  }
  std::vector<Var> inputs{x, w};
  if (has_bias) inputs.push_back(b);
  return graph_of(x).record(std::move(out), inputs, [x, w, b, has_bias, rows, in, out_dim](Graph& g, int self) {
    const Tensor& gy = g.grad(self);
    if (g.requires_grad(x.id()))
      kernels::gemm_ex(false, true, rows, in, out_dim, gy.data(), g.value(w.id()).data(), g.grad(x.id()).data(),
                       true);
    if (g.requires_grad(w.id()))
      kernels::gemm_ex(true, false, in, out_dim, rows, g.value(x.id()).data(), gy.data(), g.grad(w.id()).data(),
                       true);
    if (has_bias && g.requires_grad(b.id())) {
      Tensor& gb = g.grad(b.id());
      for (int r = 0; r < rows; ++r)
        kernels::axpy(1.0f, gy.data() + static_cast<std::size_t>(r) * out_dim, gb.data(),
                      static_cast<std::size_t>(out_dim));
    }
  });
}

Var layer_norm(Var x, float eps) {
  const Shape& s = x.shape();
  const std::size_t d = static_cast<std::size_t>(s.back());
  const std::size_t rows = rows_of(s);
  Tensor out(s);
  std::vector<float> rstd(rows);
  const Tensor& xv = x.value();
  for (std::size_t r = 0; r < rows; ++r) {
    const float* xr = xv.data() + r * d;
    double m = 0.0;
    for (std::size_t i = 0; i < d; ++i) m += xr[i];
    m /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t i = 0; i < d; ++i) var += (xr[i] - m) * (xr[i] - m);
    var /= static_cast<double>(d);
    const float rs = static_cast<float>(1.0 / std::sqrt(var + eps));
    rstd[r] = rs;
    float* orow = out.data() + r * d;
    const float mf = static_cast<float>(m);
    for (std::size_t i = 0; i < d; ++i) orow[i] = (xr[i] - mf) * rs;
  }
  Tensor normalized = out;  // kept for backward
  return graph_of(x).record(std::move(out), {x}, [x, rows, d, rstd = std::move(rstd),
                                                  xhat = std::move(normalized)](Graph& g, int self) {
    const Tensor& gy = g.grad(self);
    Tensor& gx = g.grad(x.id());
    for (std::size_t r = 0; r < rows; ++r) {
      const float* dy = gy.data() + r * d;
      const float* xh = xhat.data() + r * d;
      double s1 = 0.0, s2 = 0.0;
      for (std::size_t i = 0; i < d; ++i) {
        s1 += dy[i];
        s2 += static_cast<double>(dy[i]) * xh[i];
      }
      const float m1 = static_cast<float>(s1 / static_cast<double>(d));
      const float m2 = static_cast<float>(s2 / static_cast<double>(d));
      float* dx = gx.data() + r * d;
      for (std::size_t i = 0; i < d; ++i) dx[i] += rstd[r] * (dy[i] - m1 - xh[i] * m2);
    }
  });
}

Var modulate(Var x, Var shift, Var scale_v) {
  const Shape& s = x.shape();
  require(s.size() >= 2 && shift.shape() == Shape{s[0], s.back()} && scale_v.shape() == shift.shape(), "modulate", s,
          shift.shape());
  const std::size_t B = static_cast<std::size_t>(s[0]);
  const std::size_t D = static_cast<std::size_t>(s.back());
  const std::size_t T = x.value().size() / (B * D);
  Tensor out(s);
  const Tensor& xv = x.value();
  const Tensor& sh = shift.value();
  const Tensor& sc = scale_v.value();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t t = 0; t < T; ++t) {
      const std::size_t base = (b * T + t) * D;
      for (std::size_t i = 0; i < D; ++i) out[base + i] = xv[base + i] * (1.0f + sc[b * D + i]) + sh[b * D + i];
    }
  return graph_of(x).record(std::move(out), {x, shift, scale_v}, [x, shift, scale_v, B, T, D](Graph& g, int self) {
    const Tensor& gy = g.grad(self);
    const Tensor& xv = g.value(x.id());
    const Tensor& sc = g.value(scale_v.id());
    const bool gx_on = g.requires_grad(x.id());
    const bool gsh_on = g.requires_grad(shift.id());
    const bool gsc_on = g.requires_grad(scale_v.id());
    std::vector<double> dsh(D), dsc(D);
    for (std::size_t b = 0; b < B; ++b) {
      std::fill(dsh.begin(), dsh.end(), 0.0);
      std::fill(dsc.begin(), dsc.end(), 0.0);
      for (std::size_t t = 0; t < T; ++t) {
        const std::size_t base = (b * T + t) * D;
        for (std::size_t i = 0; i < D; ++i) {
          const float dy = gy[base + i];
          dsh[i] += dy;
          dsc[i] += static_cast<double>(dy) * xv[base + i];
        }
        if (gx_on) {
          Tensor& gx = g.grad(x.id());
          for (std::size_t i = 0; i < D; ++i) gx[base + i] += gy[base + i] * (1.0f + sc[b * D + i]);
        }
      }
      if (gsh_on) {
        Tensor& gs = g.grad(shift.id());
        for (std::size_t i = 0; i < D; ++i) gs[b * D + i] += static_cast<float>(dsh[i]);
      }
      if (gsc_on) {
        Tensor& gs = g.grad(scale_v.id());
        for (std::size_t i = 0; i < D; ++i) gs[b * D + i] += static_cast<float>(dsc[i]);
      }
    }
  });
}

Var gated_residual(Var x, Var gate, Var h) {
  const Shape& s = x.shape();
  require(s == h.shape() && s.size() >= 2 && gate.shape() == Shape{s[0], s.back()}, "gated_residual", s,
          gate.shape());
  const std::size_t B = static_cast<std::size_t>(s[0]);
  const std::size_t D = static_cast<std::size_t>(s.back());
  const std::size_t T = x.value().size() / (B * D);
  Tensor out = x.value();
  const Tensor& gv = gate.value();
  const Tensor& hv = h.value();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t t = 0; t < T; ++t) {
      const std::size_t base = (b * T + t) * D;
      for (std::size_t i = 0; i < D; ++i) out[base + i] += gv[b * D + i] * hv[base + i];
    }
  return graph_of(x).record(std::move(out), {x, gate, h}, [x, gate, h, B, T, D](Graph& g, int self) {
    const Tensor& gy = g.grad(self);
    if (g.requires_grad(x.id())) kernels::axpy(1.0f, gy.data(), g.grad(x.id()).data(), gy.size());
    const Tensor& gv = g.value(gate.id());
    const Tensor& hv = g.value(h.id());
    const bool gg_on = g.requires_grad(gate.id());
    const bool gh_on = g.requires_grad(h.id());
    std::vector<double> dg(D);
    for (std::size_t b = 0; b < B; ++b) {
      std::fill(dg.begin(), dg.end(), 0.0);
      for (std::size_t t = 0; t < T; ++t) {
        const std::size_t base = (b * T + t) * D;
        for (std::size_t i = 0; i < D; ++i) dg[i] += static_cast<double>(gy[base + i]) * hv[base + i];
        if (gh_on) {
          Tensor& gh = g.grad(h.id());
          for (std::size_t i = 0; i < D; ++i) gh[base + i] += gy[base + i] * gv[b * D + i];
        }
      }
      if (gg_on) {
        Tensor& gg = g.grad(gate.id());
        for (std::size_t i = 0; i < D; ++i) gg[b * D + i] += static_cast<float>(dg[i]);
      }
    }
  });
}

// ------------------------------------------------------------------ attention

namespace {

struct AttnLayout {
  std::size_t B, F, N, D, heads, hd, groups, len;
  AttnAxis axis;

  // Row index (token) of sequence element s within group gidx.
  std::size_t token(std::size_t gidx, std::size_t s) const {
    if (axis == AttnAxis::spatial) return gidx * N + s;  // gidx = b*F + f
    const std::size_t b = gidx / N, n = gidx % N;        // gidx = b*N + n
    return (b * F + s) * N + n;
  }
};

}  // namespace

Var attention(Var qkv, int n_heads, AttnAxis axis) {
  const Shape& s = qkv.shape();
  require(s.size() == 4 && s[3] % (3 * n_heads) == 0, "attention", s);
  AttnLayout L{};
  L.B = static_cast<std::size_t>(s[0]);
  L.F = static_cast<std::size_t>(s[1]);
  L.N = static_cast<std::size_t>(s[2]);
  L.D = static_cast<std::size_t>(s[3] / 3);
  L.heads = static_cast<std::size_t>(n_heads);
  L.hd = L.D / L.heads;
  L.axis = axis;
  L.groups = axis == AttnAxis::spatial ? L.B * L.F : L.B * L.N;
  L.len = axis == AttnAxis::spatial ? L.N : L.F;
  const float sc = 1.0f / std::sqrt(static_cast<float>(L.hd));
  const std::size_t stride = 3 * L.D;

  Tensor out(Shape{s[0], s[1], s[2], static_cast<std::int64_t>(L.D)});
  std::vector<float> probs(L.groups * L.heads * L.len * L.len);
  const float* qv = qkv.value().data();
  std::vector<float> row(L.len);
  for (std::size_t gi = 0; gi < L.groups; ++gi)
    for (std::size_t h = 0; h < L.heads; ++h) {
      float* P = probs.data() + ((gi * L.heads + h) * L.len) * L.len;
      for (std::size_t i = 0; i < L.len; ++i) {
        const float* q = qv + L.token(gi, i) * stride + h * L.hd;
        float mx = -INFINITY;
        for (std::size_t j = 0; j < L.len; ++j) {
          const float* k = qv + L.token(gi, j) * stride + L.D + h * L.hd;
          row[j] = kernels::dot(q, k, L.hd) * sc;
          mx = std::max(mx, row[j]);
        }
        double z = 0.0;
        for (std::size_t j = 0; j < L.len; ++j) {
          row[j] = std::exp(row[j] - mx);
          z += row[j];
        }
        const float inv = static_cast<float>(1.0 / z);
        float* o = out.data() + L.token(gi, i) * L.D + h * L.hd;
        for (std::size_t j = 0; j < L.len; ++j) {
          P[i * L.len + j] = row[j] * inv;
          const float* v = qv + L.token(gi, j) * stride + 2 * L.D + h * L.hd;
          kernels::axpy(P[i * L.len + j], v, o, L.hd);
        }
      }
    }

  return graph_of(qkv).record(std::move(out), {qkv}, [qkv, L, sc, stride, probs = std::move(probs)](Graph& g,
                                                                                                     int self) {
    const Tensor& gy = g.grad(self);
    const float* qv = g.value(qkv.id()).data();
    float* gq = g.grad(qkv.id()).data();
    std::vector<float> dP(L.len);
    for (std::size_t gi = 0; gi < L.groups; ++gi)
      for (std::size_t h = 0; h < L.heads; ++h) {
        const float* P = probs.data() + ((gi * L.heads + h) * L.len) * L.len;
        for (std::size_t i = 0; i < L.len; ++i) {
          const std::size_t ti = L.token(gi, i);
          const float* dout = gy.data() + ti * L.D + h * L.hd;
          double dot_pd = 0.0;
          for (std::size_t j = 0; j < L.len; ++j) {
            const std::size_t tj = L.token(gi, j);
            const float* v = qv + tj * stride + 2 * L.D + h * L.hd;
            dP[j] = kernels::dot(dout, v, L.hd);
            dot_pd += static_cast<double>(P[i * L.len + j]) * dP[j];
            // dV_j += P_ij * dout_i
            kernels::axpy(P[i * L.len + j], dout, gq + tj * stride + 2 * L.D + h * L.hd, L.hd);
          }
          const float* q = qv + ti * stride + h * L.hd;
          float* dq = gq + ti * stride + h * L.hd;
          for (std::size_t j = 0; j < L.len; ++j) {
            const float dS = P[i * L.len + j] * (dP[j] - static_cast<float>(dot_pd)) * sc;
            const std::size_t tj = L.token(gi, j);
            const float* k = qv + tj * stride + L.D + h * L.hd;
            kernels::axpy(dS, k, dq, L.hd);
            kernels::axpy(dS, q, gq + tj * stride + L.D + h * L.hd, L.hd);
          }
        }
      }
  });
}

// ------------------------------------------------------------------- patches

Var patchify(Var z, int p) {
  const Shape& s = z.shape();
  require(s.size() == 5 && p >= 1, "patchify", s);
  const std::int64_t B = s[0], F = s[1], C = s[2], H = s[3], W = s[4];
  const std::int64_t Hp = (H + p - 1) / p, Wp = (W + p - 1) / p;
  const std::int64_t N = Hp * Wp, E = C * p * p;
  Tensor out(Shape{B, F, N, E});
  // index map: for each token element, source offset or -1 for padding
  std::vector<std::int64_t> src(static_cast<std::size_t>(N * E));
  for (std::int64_t py = 0; py < Hp; ++py)
    for (std::int64_t px = 0; px < Wp; ++px)
      for (std::int64_t c = 0; c < C; ++c)
        for (std::int64_t dy = 0; dy < p; ++dy)
          for (std::int64_t dx = 0; dx < p; ++dx) {
            const std::int64_t y = py * p + dy, x = px * p + dx;
            const std::int64_t e = (c * p + dy) * p + dx;
            src[static_cast<std::size_t>((py * Wp + px) * E + e)] = (y < H && x < W) ? (c * H + y) * W + x : -1;
          }
  const std::int64_t frame = C * H * W;
  const Tensor& zv = z.value();
  for (std::int64_t bf = 0; bf < B * F; ++bf)
    for (std::int64_t i = 0; i < N * E; ++i) {
      const std::int64_t o = src[static_cast<std::size_t>(i)];
      out[static_cast<std::size_t>(bf * N * E + i)] = o < 0 ? 0.0f : zv[static_cast<std::size_t>(bf * frame + o)];
    }
  return graph_of(z).record(std::move(out), {z}, [z, src = std::move(src), B, F, N, E, frame](Graph& g, int self) {
    const Tensor& gy = g.grad(self);
    Tensor& gz = g.grad(z.id());
    for (std::int64_t bf = 0; bf < B * F; ++bf)
      for (std::int64_t i = 0; i < N * E; ++i) {
        const std::int64_t o = src[static_cast<std::size_t>(i)];
        if (o >= 0) gz[static_cast<std::size_t>(bf * frame + o)] += gy[static_cast<std::size_t>(bf * N * E + i)];
      }
  });
}

Var unpatchify(Var tokens, int channels, int height, int width, int p) {
  const Shape& s = tokens.shape();
  const std::int64_t C = channels, H = height, W = width;
  const std::int64_t Hp = (H + p - 1) / p, Wp = (W + p - 1) / p;
  const std::int64_t E = C * p * p;
  require(s.size() == 4 && s[2] == Hp * Wp && s[3] == E, "unpatchify", s);
  const std::int64_t B = s[0], F = s[1], N = s[2];
  Tensor out(Shape{B, F, C, H, W});
  std::vector<std::int64_t> src(static_cast<std::size_t>(C * H * W));
  for (std::int64_t c = 0; c < C; ++c)
    for (std::int64_t y = 0; y < H; ++y)
      for (std::int64_t x = 0; x < W; ++x) {
        const std::int64_t tok = (y / p) * Wp + (x / p);
        const std::int64_t e = (c * p + y % p) * p + x % p;
        src[static_cast<std::size_t>((c * H + y) * W + x)] = tok * E + e;
      }
  const std::int64_t frame = C * H * W;
  const Tensor& tv = tokens.value();
  for (std::int64_t bf = 0; bf < B * F; ++bf)
    for (std::int64_t i = 0; i < frame; ++i)
      out[static_cast<std::size_t>(bf * frame + i)] = tv[static_cast<std::size_t>(bf * N * E + src[static_cast<std::size_t>(i)])];
  return graph_of(tokens).record(std::move(out), {tokens},
                                 [tokens, src = std::move(src), B, F, N, E, frame](Graph& g, int self) {
                                   const Tensor& gy = g.grad(self);
                                   Tensor& gt = g.grad(tokens.id());
                                   for (std::int64_t bf = 0; bf < B * F; ++bf)
                                     for (std::int64_t i = 0; i < frame; ++i)
                                       gt[static_cast<std::size_t>(bf * N * E + src[static_cast<std::size_t>(i)])] +=
                                           gy[static_cast<std::size_t>(bf * frame + i)];
                                 });
}

Var add_positional(Var x, Var spatial, Var temporal) {
  const Shape& s = x.shape();
  require(s.size() == 4 && spatial.shape() == Shape{s[2], s[3]} && temporal.shape().size() == 2 &&
              temporal.shape()[0] >= s[1] && temporal.shape()[1] == s[3],
          "add_positional", s, temporal.shape());
  const std::size_t B = static_cast<std::size_t>(s[0]), F = static_cast<std::size_t>(s[1]);
  const std::size_t N = static_cast<std::size_t>(s[2]), D = static_cast<std::size_t>(s[3]);
  Tensor out = x.value();
  const Tensor& sp = spatial.value();
  const Tensor& tp = temporal.value();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t f = 0; f < F; ++f)
      for (std::size_t n = 0; n < N; ++n) {
        float* o = out.data() + ((b * F + f) * N + n) * D;
        for (std::size_t i = 0; i < D; ++i) o[i] += sp[n * D + i] + tp[f * D + i];
      }
  return graph_of(x).record(std::move(out), {x, spatial, temporal}, [x, spatial, temporal, B, F, N, D](Graph& g,
                                                                                                         int self) {
    const Tensor& gy = g.grad(self);
    if (g.requires_grad(x.id())) kernels::axpy(1.0f, gy.data(), g.grad(x.id()).data(), gy.size());
    const bool sp_on = g.requires_grad(spatial.id());
    const bool tp_on = g.requires_grad(temporal.id());
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t f = 0; f < F; ++f)
        for (std::size_t n = 0; n < N; ++n) {
          const float* dy = gy.data() + ((b * F + f) * N + n) * D;
          if (sp_on) kernels::axpy(1.0f, dy, g.grad(spatial.id()).data() + n * D, D);
          if (tp_on) kernels::axpy(1.0f, dy, g.grad(temporal.id()).data() + f * D, D);
        }
  });
}

// ------------------------------------------------------------- convolutions

namespace {

struct ConvGeom {
  int cin, h, w, cout, k, stride, pad, ho, wo;
  int patch() const { return cin * k * k; }
  int pixels() const { return ho * wo; }
};

// Pixel-major patch matrix rows[p][(c * k + ky) * k + kx].
void im2row(const ConvGeom& G, const float* x, float* rows) {
  const int P = G.patch();
  for (int oy = 0; oy < G.ho; ++oy)
    for (int ox = 0; ox < G.wo; ++ox) {
      float* dst = rows + static_cast<std::size_t>(oy * G.wo + ox) * P;
      const int y0 = oy * G.stride - G.pad, x0 = ox * G.stride - G.pad;
      for (int c = 0; c < G.cin; ++c) {
        const float* xc = x + static_cast<std::size_t>(c) * G.h * G.w;
        for (int ky = 0; ky < G.k; ++ky) {
          const int iy = y0 + ky;
          float* d = dst + (c * G.k + ky) * G.k;
          if (iy < 0 || iy >= G.h) {
            for (int kx = 0; kx < G.k; ++kx) d[kx] = 0.0f;
            continue;
          }
          const float* xr = xc + static_cast<std::size_t>(iy) * G.w;
          for (int kx = 0; kx < G.k; ++kx) {
            const int ix = x0 + kx;
            d[kx] = (ix >= 0 && ix < G.w) ? xr[ix] : 0.0f;
          }
        }
      }
    }
}

void row2im_add(const ConvGeom& G, const float* rows, float* x) {
  const int P = G.patch();
  for (int oy = 0; oy < G.ho; ++oy)
    for (int ox = 0; ox < G.wo; ++ox) {
      const float* src = rows + static_cast<std::size_t>(oy * G.wo + ox) * P;
      const int y0 = oy * G.stride - G.pad, x0 = ox * G.stride - G.pad;
      for (int c = 0; c < G.cin; ++c) {
        float* xc = x + static_cast<std::size_t>(c) * G.h * G.w;
        for (int ky = 0; ky < G.k; ++ky) {
          const int iy = y0 + ky;
          if (iy < 0 || iy >= G.h) continue;
          const float* s = src + (c * G.k + ky) * G.k;
          float* xr = xc + static_cast<std::size_t>(iy) * G.w;
          for (int kx = 0; kx < G.k; ++kx) {
            const int ix = x0 + kx;
            if (ix >= 0 && ix < G.w) xr[ix] += s[kx];
          }
        }
      }
    }
}

void transpose(const float* src, int rows, int cols, float* dst) {
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) dst[static_cast<std::size_t>(c) * rows + r] = src[static_cast<std::size_t>(r) * cols + c];
}

}  // namespace

// Per sample: y^T[pixels, cout] = rows[pixels, patch] * W^T[patch, cout]; the
// patch matrices are kept for the weight gradient.
Var conv2d(Var x, Var w, Var b, int stride, int pad) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  require(xs.size() == 4 && ws.size() == 4 && ws[1] == xs[1] && ws[2] == ws[3], "conv2d", xs, ws);
  ConvGeom G{};
  G.cin = static_cast<int>(xs[1]);
  G.h = static_cast<int>(xs[2]);
  G.w = static_cast<int>(xs[3]);
  G.cout = static_cast<int>(ws[0]);
  G.k = static_cast<int>(ws[2]);
  G.stride = stride;
  G.pad = pad;
  G.ho = (G.h + 2 * pad - G.k) / stride + 1;
  G.wo = (G.w + 2 * pad - G.k) / stride + 1;
  require(G.ho > 0 && G.wo > 0, "conv2d output", xs, ws);
  const int B = static_cast<int>(xs[0]);
  const bool has_bias = b.valid();
  const std::size_t in_frame = static_cast<std::size_t>(G.cin) * G.h * G.w;
  const std::size_t out_frame = static_cast<std::size_t>(G.cout) * G.pixels();
  const std::size_t rows_frame = static_cast<std::size_t>(G.pixels()) * G.patch();

  std::vector<float> wt(static_cast<std::size_t>(G.patch()) * G.cout);
  transpose(w.value().data(), G.cout, G.patch(), wt.data());
  Tensor out(Shape{B, G.cout, G.ho, G.wo});
  std::vector<float> rows(static_cast<std::size_t>(B) * rows_frame);
  std::vector<float> yt(out_frame);
  for (int n = 0; n < B; ++n) {
    float* rn = rows.data() + n * rows_frame;
    im2row(G, x.value().data() + n * in_frame, rn);
    kernels::gemm(G.pixels(), G.cout, G.patch(), rn, G.patch(), wt.data(), G.cout, yt.data(), G.cout, false);
    float* yn = out.data() + n * out_frame;
    transpose(yt.data(), G.pixels(), G.cout, yn);
    if (has_bias) {
      const float* bv = b.value().data();
      for (int c = 0; c < G.cout; ++c) {
        float* yc = yn + static_cast<std::size_t>(c) * G.pixels();
        for (int i = 0; i < G.pixels(); ++i) yc[i] += bv[c];
      }
    }
  }
  if (!graph_of(x).grad_enabled() || !(graph_of(x).requires_grad(w.id()) || graph_of(x).requires_grad(x.id())))
    rows = {};
  std::vector<Var> inputs{x, w};
  if (has_bias) inputs.push_back(b);
  return graph_of(x).record(
      std::move(out), inputs,
      [x, w, b, G, B, has_bias, in_frame, out_frame, rows_frame, rows = std::move(rows)](Graph& g, int self) {
        const Tensor& gy = g.grad(self);
        const bool gx_on = g.requires_grad(x.id());
        const bool gw_on = g.requires_grad(w.id());
        std::vector<float> dyt(out_frame);
        std::vector<float> drows(gx_on ? rows_frame : 0);
        for (int n = 0; n < B; ++n) {
          const float* dy = gy.data() + n * out_frame;
          if (gw_on)
            kernels::gemm(G.cout, G.patch(), G.pixels(), dy, G.pixels(), rows.data() + n * rows_frame, G.patch(),
                          g.grad(w.id()).data(), G.patch(), true);
          if (gx_on) {
            transpose(dy, G.cout, G.pixels(), dyt.data());
            kernels::gemm(G.pixels(), G.patch(), G.cout, dyt.data(), G.cout, g.value(w.id()).data(), G.patch(),
                          drows.data(), G.patch(), false);
            row2im_add(G, drows.data(), g.grad(x.id()).data() + n * in_frame);
          }
          if (has_bias && g.requires_grad(b.id())) {
            Tensor& gb = g.grad(b.id());
            for (int c = 0; c < G.cout; ++c) {
              double s = 0.0;
              const float* dyc = dy + static_cast<std::size_t>(c) * G.pixels();
              for (int i = 0; i < G.pixels(); ++i) s += dyc[i];
              gb[static_cast<std::size_t>(c)] += static_cast<float>(s);
            }
          }
        }
      });
}

Var group_norm(Var x, Var gamma, Var beta, int groups, float eps) {
  const Shape& s = x.shape();
  require(s.size() == 4 && s[1] % groups == 0 && gamma.shape() == Shape{s[1]} && beta.shape() == Shape{s[1]},
          "group_norm", s, gamma.shape());
  const std::size_t B = static_cast<std::size_t>(s[0]), C = static_cast<std::size_t>(s[1]);
  const std::size_t HW = static_cast<std::size_t>(s[2] * s[3]);
  const std::size_t G = static_cast<std::size_t>(groups), cpg = C / G, gsize = cpg * HW;
  const Tensor& xv = x.value();
  Tensor xhat(s);
  std::vector<float> rstd(B * G);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t gi = 0; gi < G; ++gi) {
      const std::size_t base = (b * C + gi * cpg) * HW;
      double m = 0.0;
      for (std::size_t i = 0; i < gsize; ++i) m += xv[base + i];
      m /= static_cast<double>(gsize);
      double var = 0.0;
      for (std::size_t i = 0; i < gsize; ++i) var += (xv[base + i] - m) * (xv[base + i] - m);
      var /= static_cast<double>(gsize);
      const float rs = static_cast<float>(1.0 / std::sqrt(var + eps));
      rstd[b * G + gi] = rs;
      const float mf = static_cast<float>(m);
      for (std::size_t i = 0; i < gsize; ++i) xhat[base + i] = (xv[base + i] - mf) * rs;
    }
  Tensor out(s);
  const Tensor& gm = gamma.value();
  const Tensor& bt = beta.value();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c) {
      const std::size_t base = (b * C + c) * HW;
      for (std::size_t i = 0; i < HW; ++i) out[base + i] = xhat[base + i] * gm[c] + bt[c];
    }
  return graph_of(x).record(std::move(out), {x, gamma, beta}, [x, gamma, beta, B, C, HW, G, cpg, gsize,
                                                                xhat = std::move(xhat),
                                                                rstd = std::move(rstd)](Graph& g, int self) {
    const Tensor& gy = g.grad(self);
    const Tensor& gm = g.value(gamma.id());
    if (g.requires_grad(gamma.id()) || g.requires_grad(beta.id())) {
      for (std::size_t c = 0; c < C; ++c) {
        double sg = 0.0, sb = 0.0;
        for (std::size_t b = 0; b < B; ++b) {
          const std::size_t base = (b * C + c) * HW;
          for (std::size_t i = 0; i < HW; ++i) {
            sg += static_cast<double>(gy[base + i]) * xhat[base + i];
            sb += gy[base + i];
          }
        }
        if (g.requires_grad(gamma.id())) g.grad(gamma.id())[c] += static_cast<float>(sg);
        if (g.requires_grad(beta.id())) g.grad(beta.id())[c] += static_cast<float>(sb);
      }
    }
    if (!g.requires_grad(x.id())) return;
    Tensor& gx = g.grad(x.id());
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t gi = 0; gi < G; ++gi) {
        double s1 = 0.0, s2 = 0.0;
        for (std::size_t c = gi * cpg; c < (gi + 1) * cpg; ++c) {
          const std::size_t base = (b * C + c) * HW;
          for (std::size_t i = 0; i < HW; ++i) {
            const double d = static_cast<double>(gy[base + i]) * gm[c];
            s1 += d;
            s2 += d * xhat[base + i];
          }
        }
        const float m1 = static_cast<float>(s1 / static_cast<double>(gsize));
        const float m2 = static_cast<float>(s2 / static_cast<double>(gsize));
        const float rs = rstd[b * G + gi];
        for (std::size_t c = gi * cpg; c < (gi + 1) * cpg; ++c) {
          const std::size_t base = (b * C + c) * HW;
          for (std::size_t i = 0; i < HW; ++i)
            gx[base + i] += rs * (gy[base + i] * gm[c] - m1 - xhat[base + i] * m2);
        }
      }
  });
}

Var upsample2x(Var x) {
  const Shape& s = x.shape();
  require(s.size() == 4, "upsample2x", s);
  const std::size_t BC = static_cast<std::size_t>(s[0] * s[1]);
  const std::size_t H = static_cast<std::size_t>(s[2]), W = static_cast<std::size_t>(s[3]);
  Tensor out(Shape{s[0], s[1], s[2] * 2, s[3] * 2});
  const Tensor& xv = x.value();
  for (std::size_t p = 0; p < BC; ++p)
    for (std::size_t y = 0; y < 2 * H; ++y)
      for (std::size_t xx = 0; xx < 2 * W; ++xx) out[(p * 2 * H + y) * 2 * W + xx] = xv[(p * H + y / 2) * W + xx / 2];
  return graph_of(x).record(std::move(out), {x}, [x, BC, H, W](Graph& g, int self) {
    const Tensor& gy = g.grad(self);
    Tensor& gx = g.grad(x.id());
    for (std::size_t p = 0; p < BC; ++p)
      for (std::size_t y = 0; y < 2 * H; ++y)
        for (std::size_t xx = 0; xx < 2 * W; ++xx) gx[(p * H + y / 2) * W + xx / 2] += gy[(p * 2 * H + y) * 2 * W + xx];
  });
}

Var slice_channels(Var x, std::int64_t start, std::int64_t len) {
  const Shape& s = x.shape();
  require(s.size() == 4 && start >= 0 && len > 0 && start + len <= s[1], "slice_channels", s);
  const std::size_t B = static_cast<std::size_t>(s[0]), C = static_cast<std::size_t>(s[1]);
  const std::size_t HW = static_cast<std::size_t>(s[2] * s[3]);
  Tensor out(Shape{s[0], len, s[2], s[3]});
  const Tensor& xv = x.value();
  for (std::size_t b = 0; b < B; ++b)
    std::copy_n(xv.data() + (b * C + static_cast<std::size_t>(start)) * HW, static_cast<std::size_t>(len) * HW,
                out.data() + b * static_cast<std::size_t>(len) * HW);
  return graph_of(x).record(std::move(out), {x}, [x, B, C, HW, start, len](Graph& g, int self) {
    const Tensor& gy = g.grad(self);
    Tensor& gx = g.grad(x.id());
    for (std::size_t b = 0; b < B; ++b)
      kernels::axpy(1.0f, gy.data() + b * static_cast<std::size_t>(len) * HW,
                    gx.data() + (b * C + static_cast<std::size_t>(start)) * HW, static_cast<std::size_t>(len) * HW);
  });
}

// ----------------------------------------------------------- latent helpers

Var reparameterize(Var mu, Var logvar, const Tensor& eps) {
  require(mu.shape() == logvar.shape() && mu.shape() == eps.shape(), "reparameterize", mu.shape(), eps.shape());
  Tensor out(mu.shape());
  const Tensor& m = mu.value();
  const Tensor& lv = logvar.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = m[i] + std::exp(0.5f * lv[i]) * eps[i];
  return graph_of(mu).record(std::move(out), {mu, logvar}, [mu, logvar, eps](Graph& g, int self) {
    const Tensor& gy = g.grad(self);
    if (g.requires_grad(mu.id())) kernels::axpy(1.0f, gy.data(), g.grad(mu.id()).data(), gy.size());
    if (g.requires_grad(logvar.id())) {
      const Tensor& lv = g.value(logvar.id());
      Tensor& gl = g.grad(logvar.id());
      for (std::size_t i = 0; i < gy.size(); ++i) gl[i] += gy[i] * 0.5f * std::exp(0.5f * lv[i]) * eps[i];
    }
  });
}

Var kl_standard_normal(Var mu, Var logvar) {
  require(mu.shape() == logvar.shape(), "kl_standard_normal", mu.shape(), logvar.shape());
  const Tensor& m = mu.value();
  const Tensor& lv = logvar.value();
  double s = 0.0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    const double l = lv[i];
    s += static_cast<double>(m[i]) * m[i] + std::exp(l) - l - 1.0;
  }
  const double n = static_cast<double>(m.size());
  return graph_of(mu).record(Tensor::scalar(static_cast<float>(0.5 * s / n)), {mu, logvar},
                             [mu, logvar, n](Graph& g, int self) {
                               const float k = static_cast<float>(g.grad(self)[0] / n);
                               const Tensor& m = g.value(mu.id());
                               const Tensor& lv = g.value(logvar.id());
                               if (g.requires_grad(mu.id())) {
                                 Tensor& gm = g.grad(mu.id());
                                 for (std::size_t i = 0; i < m.size(); ++i) gm[i] += k * m[i];
                               }
                               if (g.requires_grad(logvar.id())) {
                                 Tensor& gl = g.grad(logvar.id());
                                 for (std::size_t i = 0; i < m.size(); ++i) gl[i] += k * 0.5f * (std::exp(lv[i]) - 1.0f);
                               }
                             });
}

Var gather_codebook(Var codebook, const std::vector<std::int32_t>& indices, std::int64_t batch, std::int64_t height,
                    std::int64_t width) {
  const Shape& cs = codebook.shape();
  require(cs.size() == 2 && static_cast<std::int64_t>(indices.size()) == batch * height * width, "gather_codebook", cs);
  const std::int64_t K = cs[0], C = cs[1], HW = height * width;
  Tensor out(Shape{batch, C, height, width});
  const Tensor& cb = codebook.value();
  for (std::int64_t b = 0; b < batch; ++b)
    for (std::int64_t p = 0; p < HW; ++p) {
      const std::int32_t k = indices[static_cast<std::size_t>(b * HW + p)];
      if (k < 0 || k >= K) throw std::out_of_range("codebook index out of range");
      for (std::int64_t c = 0; c < C; ++c)
        out[static_cast<std::size_t>((b * C + c) * HW + p)] = cb[static_cast<std::size_t>(k * C + c)];
    }
  return graph_of(codebook).record(std::move(out), {codebook}, [codebook, indices, batch, C, HW](Graph& g, int self) {
    const Tensor& gy = g.grad(self);
    Tensor& gc = g.grad(codebook.id());
    for (std::int64_t b = 0; b < batch; ++b)
      for (std::int64_t p = 0; p < HW; ++p) {
        const std::int32_t k = indices[static_cast<std::size_t>(b * HW + p)];
        for (std::int64_t c = 0; c < C; ++c)
          gc[static_cast<std::size_t>(k * C + c)] += gy[static_cast<std::size_t>((b * C + c) * HW + p)];
      }
  });
}

Var straight_through(Var z_e, const Tensor& quantized) {
  require(z_e.shape() == quantized.shape(), "straight_through", z_e.shape(), quantized.shape());
  return graph_of(z_e).record(quantized, {z_e}, [z_e](Graph& g, int self) {
    const Tensor& gy = g.grad(self);
    kernels::axpy(1.0f, gy.data(), g.grad(z_e.id()).data(), gy.size());
  });
}

}  // namespace lavig::ag
