#include <doctest.h>

#include "grad_check.hpp"

using namespace lavig;
using namespace lavig::ag;
using lavig::testing::grad_check;
using lavig::testing::probe;
using lavig::testing::random_tensor;

namespace {
constexpr double kTol = 2e-2;  // fp32 central differences with eps = 1e-2
}

TEST_CASE("elementwise op gradients") {
  auto a = random_tensor({3, 5}, 1), b = random_tensor({3, 5}, 2);
  CHECK(grad_check({a, b}, [](Graph& g, auto v) { return probe(g, add(v[0], v[1])); }).max_rel_err < kTol);
  CHECK(grad_check({a, b}, [](Graph& g, auto v) { return probe(g, sub(v[0], v[1])); }).max_rel_err < kTol);
  CHECK(grad_check({a, b}, [](Graph& g, auto v) { return probe(g, mul(v[0], v[1])); }).max_rel_err < kTol);
  CHECK(grad_check({a}, [](Graph& g, auto v) { return probe(g, scale(v[0], -1.7f)); }).max_rel_err < kTol);
  CHECK(grad_check({a}, [](Graph& g, auto v) { return probe(g, silu(v[0])); }).max_rel_err < kTol);
  CHECK(grad_check({a}, [](Graph& g, auto v) { return probe(g, gelu(v[0])); }).max_rel_err < kTol);
  CHECK(grad_check({a}, [](Graph& g, auto v) { return probe(g, slice_last(v[0], 1, 3)); }).max_rel_err < kTol);
  CHECK(grad_check({a}, [](Graph&, auto v) { return mean(v[0]); }).max_rel_err < kTol);
  CHECK(grad_check({a, b}, [](Graph&, auto v) { return mse(v[0], v[1]); }).max_rel_err < kTol);
}

TEST_CASE("masked_mse ignores unmasked frames") {
  auto a = random_tensor({2, 3, 4}, 3), b = random_tensor({2, 3, 4}, 4);
  const std::vector<std::uint8_t> mask{0, 1, 1, 1, 0, 0};
  CHECK(grad_check({a, b}, [&](Graph&, auto v) { return masked_mse(v[0], v[1], mask); }).max_rel_err < kTol);

  Graph g;
  Parameter pa{"a", a, Tensor()};
  Var va = g.param(pa);
  g.backward(masked_mse(va, g.constant(b), mask));
  for (int i = 0; i < 4; ++i) {
    CHECK(pa.grad[static_cast<std::size_t>(i)] == 0.0f);           // frame (0,0)
    CHECK(pa.grad[static_cast<std::size_t>(16 + i)] == 0.0f);      // frame (1,1)
  }
  CHECK_THROWS(masked_mse(va, g.constant(b), std::vector<std::uint8_t>(6, 0)));
}

TEST_CASE("dense layer gradients") {
  auto x = random_tensor({2, 3, 6}, 5), w = random_tensor({6, 4}, 6), b = random_tensor({4}, 7);
  CHECK(grad_check({x, w, b}, [](Graph& g, auto v) { return probe(g, linear(v[0], v[1], v[2])); }).max_rel_err <
        kTol);
  CHECK(grad_check({x}, [](Graph& g, auto v) { return probe(g, layer_norm(v[0], 1e-6f)); }).max_rel_err < kTol);
  auto sh = random_tensor({2, 6}, 8), sc = random_tensor({2, 6}, 9), h = random_tensor({2, 3, 6}, 10);
  CHECK(grad_check({x, sh, sc}, [](Graph& g, auto v) { return probe(g, modulate(v[0], v[1], v[2])); })
            .max_rel_err < kTol);
  CHECK(grad_check({x, sc, h}, [](Graph& g, auto v) { return probe(g, gated_residual(v[0], v[1], v[2])); })
            .max_rel_err < kTol);
}

TEST_CASE("attention gradients on both axes") {
  auto qkv = random_tensor({2, 3, 4, 12}, 11);
  for (auto axis : {AttnAxis::spatial, AttnAxis::temporal}) {
    auto r = grad_check({qkv}, [axis](Graph& g, auto v) { return probe(g, attention(v[0], 2, axis)); }, 1e-2f, 20);
    CHECK(r.max_rel_err < kTol);
  }
}

TEST_CASE("attention with identical keys averages values") {
  // Equal keys give uniform weights, so every output is the mean value vector.
  Tensor qkv({1, 1, 3, 6});
  for (int n = 0; n < 3; ++n) {
    qkv[static_cast<std::size_t>(n * 6 + 0)] = static_cast<float>(n);  // q varies
    qkv[static_cast<std::size_t>(n * 6 + 2)] = 1.0f;                    // k constant
    qkv[static_cast<std::size_t>(n * 6 + 4)] = static_cast<float>(3 * n);
    qkv[static_cast<std::size_t>(n * 6 + 5)] = 1.0f;
  }
  Graph g(false);
  auto out = attention(g.constant(qkv), 1, AttnAxis::spatial).value();
  for (int n = 0; n < 3; ++n) {
    CHECK(out[static_cast<std::size_t>(n * 2)] == doctest::Approx(3.0));
    CHECK(out[static_cast<std::size_t>(n * 2 + 1)] == doctest::Approx(1.0));
  }
}

TEST_CASE("patch and positional op gradients") {
  auto z = random_tensor({1, 2, 3, 5, 3}, 12);
  CHECK(grad_check({z}, [](Graph& g, auto v) { return probe(g, patchify(v[0], 2)); }).max_rel_err < kTol);
  auto tok = random_tensor({1, 2, 6, 12}, 13);
  CHECK(grad_check({tok}, [](Graph& g, auto v) { return probe(g, unpatchify(v[0], 3, 5, 3, 2)); }).max_rel_err <
        kTol);
  auto x = random_tensor({2, 3, 4, 5}, 14), sp = random_tensor({4, 5}, 15), tp = random_tensor({6, 5}, 16);
  CHECK(grad_check({x, sp, tp}, [](Graph& g, auto v) { return probe(g, add_positional(v[0], v[1], v[2])); })
            .max_rel_err < kTol);
}

TEST_CASE("convolution and normalization gradients") {
  auto x = random_tensor({2, 3, 6, 5}, 17);
  auto w3 = random_tensor({4, 3, 3, 3}, 18), b = random_tensor({4}, 19);
  CHECK(grad_check({x, w3, b}, [](Graph& g, auto v) { return probe(g, conv2d(v[0], v[1], v[2], 1, 1)); })
            .max_rel_err < kTol);
  CHECK(grad_check({x, w3, b}, [](Graph& g, auto v) { return probe(g, conv2d(v[0], v[1], v[2], 2, 1)); })
            .max_rel_err < kTol);
  auto w1 = random_tensor({4, 3, 1, 1}, 20);
  CHECK(grad_check({x, w1, b}, [](Graph& g, auto v) { return probe(g, conv2d(v[0], v[1], v[2], 1, 0)); })
            .max_rel_err < kTol);
  auto x4 = random_tensor({2, 4, 3, 3}, 21), gm = random_tensor({4}, 22), bt = random_tensor({4}, 23);
  CHECK(grad_check({x4, gm, bt}, [](Graph& g, auto v) { return probe(g, group_norm(v[0], v[1], v[2], 2, 1e-6f)); })
            .max_rel_err < kTol);
  CHECK(grad_check({x}, [](Graph& g, auto v) { return probe(g, upsample2x(v[0])); }).max_rel_err < kTol);
  CHECK(grad_check({x}, [](Graph& g, auto v) { return probe(g, slice_channels(v[0], 1, 2)); }).max_rel_err < kTol);
}

TEST_CASE("conv2d matches direct summation") {
  auto x = random_tensor({1, 2, 5, 4}, 30), w = random_tensor({3, 2, 3, 3}, 31), b = random_tensor({3}, 32);
  Graph g(false);
  auto y = conv2d(g.constant(x), g.constant(w), g.constant(b), 2, 1).value();
  REQUIRE(y.shape() == Shape{1, 3, 3, 2});
  for (int co = 0; co < 3; ++co)
    for (int oy = 0; oy < 3; ++oy)
      for (int ox = 0; ox < 2; ++ox) {
        double s = b[static_cast<std::size_t>(co)];
        for (int ci = 0; ci < 2; ++ci)
          for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
              const int iy = oy * 2 - 1 + ky, ix = ox * 2 - 1 + kx;
              if (iy < 0 || iy >= 5 || ix < 0 || ix >= 4) continue;
              s += static_cast<double>(w[static_cast<std::size_t>(((co * 2 + ci) * 3 + ky) * 3 + kx)]) *
                   x[static_cast<std::size_t>((ci * 5 + iy) * 4 + ix)];
            }
        CHECK(y[static_cast<std::size_t>((co * 3 + oy) * 2 + ox)] == doctest::Approx(s).epsilon(1e-5));
      }
}

TEST_CASE("latent helper gradients") {
  auto mu = random_tensor({2, 3}, 24), lv = random_tensor({2, 3}, 25), eps = random_tensor({2, 3}, 26);
  CHECK(grad_check({mu, lv}, [&](Graph& g, auto v) { return probe(g, reparameterize(v[0], v[1], eps)); })
            .max_rel_err < kTol);
  CHECK(grad_check({mu, lv}, [](Graph&, auto v) { return kl_standard_normal(v[0], v[1]); }).max_rel_err < kTol);
  auto cb = random_tensor({5, 2}, 27);
  const std::vector<std::int32_t> idx{4, 0, 0, 2, 1, 4};
  CHECK(grad_check({cb}, [&](Graph& g, auto v) { return probe(g, gather_codebook(v[0], idx, 1, 2, 3)); })
            .max_rel_err < kTol);
}

TEST_CASE("parameters shared across graphs accumulate in place") {
  Parameter p{"p", Tensor({2}, 1.0f), Tensor()};
  p.zero_grad();
  for (int i = 0; i < 2; ++i) {
    Graph g;
    g.backward(sum(scale(g.param(p), 3.0f)));
  }
  CHECK(p.grad[0] == 6.0f);
  CHECK(p.grad[1] == 6.0f);
}

TEST_CASE("graphs without gradients refuse backward") {
  Parameter p{"p", Tensor({1}, 1.0f), Tensor()};
  Graph g(false);
  CHECK_THROWS(g.backward(sum(g.param(p))));
}
