#include <doctest.h>

#include <cmath>

#include "grad_check.hpp"
#include "lavig/metrics.hpp"

using namespace lavig;
using namespace lavig::metrics;
using lavig::testing::random_tensor;

namespace {

/// Straightforward SSIM: explicit 2-D Gaussian weights summed at every valid
/// window position, no separability.
double ssim_oracle(const Tensor& x, const Tensor& y, double L) {
  const int H = static_cast<int>(x.dim(x.rank() - 2)), W = static_cast<int>(x.dim(x.rank() - 1));
  const int k = std::min({11, H, W});
  std::vector<double> w(static_cast<std::size_t>(k * k));
  double sum = 0;
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j) {
      const double di = i - (k - 1) / 2.0, dj = j - (k - 1) / 2.0;
      w[static_cast<std::size_t>(i * k + j)] = std::exp(-(di * di + dj * dj) / (2 * 1.5 * 1.5));
      sum += w[static_cast<std::size_t>(i * k + j)];
    }
  for (auto& v : w) v /= sum;
  const double c1 = std::pow(0.01 * L, 2), c2 = std::pow(0.03 * L, 2);
  const std::size_t per = static_cast<std::size_t>(H * W);
  double total = 0;
  int count = 0;
  for (std::size_t n = 0; n < x.size() / per; ++n)
    for (int r = 0; r + k <= H; ++r)
      for (int c = 0; c + k <= W; ++c) {
        double mx = 0, my = 0;
        for (int i = 0; i < k; ++i)
          for (int j = 0; j < k; ++j) {
            const std::size_t o = n * per + static_cast<std::size_t>((r + i) * W + c + j);
            mx += w[static_cast<std::size_t>(i * k + j)] * x[o];
            my += w[static_cast<std::size_t>(i * k + j)] * y[o];
          }
        double vx = 0, vy = 0, cov = 0;
        for (int i = 0; i < k; ++i)
          for (int j = 0; j < k; ++j) {
            const std::size_t o = n * per + static_cast<std::size_t>((r + i) * W + c + j);
            const double wi = w[static_cast<std::size_t>(i * k + j)];
            vx += wi * (x[o] - mx) * (x[o] - mx);
            vy += wi * (y[o] - my) * (y[o] - my);
            cov += wi * (x[o] - mx) * (y[o] - my);
          }
        total += (2 * mx * my + c1) * (2 * cov + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
        ++count;
      }
  return total / count;
}

Tensor add_noise(const Tensor& x, double amp, std::uint64_t seed) {
  Tensor out = x;
  CounterRng rng(seed);
  for (auto& v : out.values()) v += static_cast<float>(amp * rng.normal());
  return out;
}

}  // namespace

TEST_CASE("pointwise error metrics") {
  Tensor a({2, 2}, 1.0f), b({2, 2}, 1.5f);
  CHECK(mse(a, a) == 0.0);
  CHECK(mae(a, a) == 0.0);
  CHECK(rmse(a, a) == 0.0);
  CHECK(mse(a, b) == 0.25);
  CHECK(mae(a, b) == 0.5);
  CHECK(rmse(a, b) == 0.5);
  Tensor p({2}, {0.0f, 1.0f}), t({2}, {0.0f, 0.0f});
  CHECK(mse(p, t) == 0.5);
  CHECK(mae(p, t) == 0.5);
  CHECK(rmse(p, t) == doctest::Approx(0.70710678).epsilon(1e-8));
  CHECK_THROWS_AS(mse(a, Tensor({3})), ShapeError);
}

TEST_CASE("psnr formula and cap") {
  auto x = random_tensor({4, 4}, 1);
  CHECK(psnr(x, x, 1.0) == kPsnrCap);
  CHECK(psnr_from_mse(1.0, 1.0) == 0.0);
  CHECK(psnr_from_mse(4.0, 2.0) == 0.0);
  CHECK(psnr_from_mse(0.01, 1.0) == doctest::Approx(20.0).epsilon(1e-12));
  CHECK(psnr_from_mse(0.99e-10, 1.0) == kPsnrCap);
  CHECK(psnr_from_mse(1e-10, 1.0) == doctest::Approx(100.0));
  CHECK_THROWS(psnr_from_mse(0.1, 0.0));
}

TEST_CASE("ssim identities and closed forms") {
  auto x = random_tensor({3, 16, 16}, 2);
  CHECK(ssim(x, x, 1.0) == 1.0);
  Tensor c02({12, 12}, 0.2f), c04({12, 12}, 0.4f);
  const double expect = (2 * 0.2 * 0.4 + 1e-4) / (0.04 + 0.16 + 1e-4);
  CHECK(ssim(c02, c04, 1.0) == doctest::Approx(0.8005).epsilon(1e-3));
  CHECK(ssim(c02, c04, 1.0) == doctest::Approx(expect).epsilon(1e-6));
  Tensor far = c02;
  for (auto& v : far.values()) v += 50.0f;
  CHECK(ssim(far, c02, 1.0) < 0.5);
}

TEST_CASE("ssim matches direct summation") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto x = random_tensor({16, 16}, 10 + seed), y = random_tensor({16, 16}, 20 + seed);
    auto near = add_noise(x, 0.1, seed);
    CHECK(std::abs(ssim(x, y, 1.0) - ssim_oracle(x, y, 1.0)) < 1e-6);
    CHECK(std::abs(ssim(x, near, 2.0) - ssim_oracle(x, near, 2.0)) < 1e-6);
  }
  // Images smaller than the window shrink it.
  auto a = random_tensor({2, 5, 7}, 30), b = random_tensor({2, 5, 7}, 31);
  CHECK(std::abs(ssim(a, b, 1.0) - ssim_oracle(a, b, 1.0)) < 1e-6);
  auto tall = random_tensor({20, 9}, 32), tall2 = add_noise(tall, 0.2, 3);
  CHECK(std::abs(ssim(tall, tall2, 1.0) - ssim_oracle(tall, tall2, 1.0)) < 1e-6);
}

TEST_CASE("metric symmetry and ranges on random pairs") {
  CounterRng gen(9);
  for (int trial = 0; trial < 30; ++trial) {
    const auto H = static_cast<std::int64_t>(3 + gen.below(20)), W = static_cast<std::int64_t>(3 + gen.below(20));
    auto x = random_tensor({2, H, W}, 100 + trial, static_cast<float>(gen.uniform(0.1, 3.0)));
    auto y = random_tensor({2, H, W}, 200 + trial);
    CHECK(mse(x, y) == mse(y, x));
    CHECK(mae(x, y) == mae(y, x));
    CHECK(std::abs(ssim(x, y, 1.0) - ssim(y, x, 1.0)) < 1e-12);
    const double s = ssim(x, y, 1.0);
    CHECK(s >= -1.0);
    CHECK(s <= 1.0);
    CHECK(std::abs(rmse(x, y) - std::sqrt(mse(x, y))) < 1e-9);
  }
  Tensor a({4, 4}, 0.0f), b({4, 4}, 1.0f);  // MSE = L^2
  CHECK(psnr(a, b, 1.0) >= 0.0);
}

TEST_CASE("metrics degrade monotonically with noise") {
  auto x = random_tensor({16, 16}, 3, 0.5f);
  std::vector<double> m, s, p;
  for (double amp : {0.01, 0.05, 0.1, 0.2, 0.4}) {
    double mm = 0, ss = 0, pp = 0;
    for (std::uint64_t trial = 0; trial < 20; ++trial) {
      auto y = add_noise(x, amp, 1000 + trial);
      mm += mse(y, x);
      ss += ssim(y, x, 1.0);
      pp += psnr(y, x, 1.0);
    }
    m.push_back(mm / 20);
    s.push_back(ss / 20);
    p.push_back(pp / 20);
  }
  for (std::size_t i = 1; i < m.size(); ++i) {
    CHECK(m[i] > m[i - 1]);
    CHECK(s[i] < s[i - 1]);
    CHECK(p[i] < p[i - 1]);
  }
}

TEST_CASE("population mean and std") {
  CHECK(mean_std({3.0}).second == 0.0);
  auto [m, sd] = mean_std({1.0, 3.0});
  CHECK(m == 2.0);
  CHECK(sd == 1.0);
}

TEST_CASE("rollout evaluation by stage") {
  auto plan = diffusion::build_rollout_plan(15, 2, 4);
  std::vector<ClipFields> truth, pred;
  for (int s = 0; s < 3; ++s) {
    auto sat = random_tensor({23, 1, 12, 12}, 40 + s), dp = random_tensor({23, 1, 12, 12}, 50 + s);
    truth.push_back({sat, dp});
    // Context frames are wrong on purpose: they must not influence any stage.
    Tensor psat = sat, pdp = dp;
    for (std::size_t i = 0; i < 15u * 144u; ++i) psat[i] = pdp[i] = 9.0f;
    pred.push_back({psat, pdp});
  }
  auto rep = evaluate_rollout(pred, truth, plan, "lavig-flow");
  CHECK(rep.rows.size() == 2u * 4u * 5u);
  for (const auto& r : rep.rows) {
    if (r.metric == "MSE" || r.metric == "MAE" || r.metric == "RMSE") CHECK(r.mean == 0.0);
    if (r.metric == "SSIM") CHECK(r.mean == 1.0);
    if (r.metric == "PSNR") CHECK(r.mean == kPsnrCap);
    CHECK(r.std == 0.0);
    CHECK(r.pred_frames == 2 * r.stage);
  }

  // Stage k only sees frames [15, 15 + 2k).
  Tensor bad = truth[0].pressure;
  for (std::size_t i = 21u * 144u; i < 23u * 144u; ++i) bad[i] += 1.0f;
  pred[0].pressure = bad;
  rep = evaluate_rollout(pred, truth, plan, "m");
  for (const auto& r : rep.rows)
    if (r.field == "pressure" && r.metric == "MSE") {
      if (r.stage < 4) CHECK(r.mean == 0.0);
      else CHECK(r.mean == doctest::Approx(2.0 / 8.0 / 3.0));
    }

  // A single sample has zero spread.
  auto one = evaluate_rollout({pred[0]}, {truth[0]}, plan, "m");
  for (const auto& r : one.rows) CHECK(r.std == 0.0);

  CHECK_THROWS(evaluate_rollout({pred[0]}, truth, plan, "m"));
  CHECK_THROWS_AS(evaluate_rollout({pred[0]}, {{truth[0].saturation.slice0(0, 21), truth[0].pressure}}, plan, "m"),
                  ShapeError);
}

TEST_CASE("metric report csv round trip") {
  auto plan = diffusion::build_rollout_plan(3, 1, 2);
  std::vector<ClipFields> truth{{random_tensor({5, 1, 8, 8}, 1), random_tensor({5, 1, 8, 8}, 2)}};
  std::vector<ClipFields> pred{{random_tensor({5, 1, 8, 8}, 3), random_tensor({5, 1, 8, 8}, 4)}};
  auto rep = evaluate_rollout(pred, truth, plan, "lavig-flow");
  const std::string csv = rep.to_csv();
  CHECK(csv.rfind("# units: normalized\nmethod,field,stage,pred_frames,metric,mean,std\n", 0) == 0);
  auto back = MetricReport::from_csv(csv);
  CHECK(back.to_csv() == csv);
  CHECK(back.summary() == MetricReport::from_csv(back.to_csv()).summary());
  CHECK(back.summary().find("saturation") != std::string::npos);
  CHECK_THROWS(MetricReport::from_csv("a,b\n"));
}
