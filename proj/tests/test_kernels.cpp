#include <doctest.h>

#include <cmath>
#include <vector>

#include "lavig/kernels.hpp"
#include "lavig/rng.hpp"

using namespace lavig;

namespace {

std::vector<float> random_vec(std::size_t n, std::uint64_t seed) {
  CounterRng rng(seed);
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(rng.uniform(-1.0, 1.0));
  return v;
}

// Double-precision reference with explicit transposes.
std::vector<double> gemm_oracle(bool ta, bool tb, int M, int N, int K, const std::vector<float>& A,
                                const std::vector<float>& B) {
  std::vector<double> C(static_cast<std::size_t>(M) * N, 0.0);
  for (int i = 0; i < M; ++i)
    for (int j = 0; j < N; ++j) {
      double s = 0.0;
      for (int k = 0; k < K; ++k) {
        const double a = ta ? A[static_cast<std::size_t>(k) * M + i] : A[static_cast<std::size_t>(i) * K + k];
        const double b = tb ? B[static_cast<std::size_t>(j) * K + k] : B[static_cast<std::size_t>(k) * N + j];
        s += a * b;
      }
      C[static_cast<std::size_t>(i) * N + j] = s;
    }
  return C;
}

struct IsaGuard {
  kernels::Isa saved = kernels::active_isa();
  ~IsaGuard() { kernels::set_isa(saved); }
};

}  // namespace

TEST_CASE("gemm matches a double-precision oracle on odd shapes") {
  IsaGuard guard;
  const int shapes[][3] = {{1, 1, 1}, {7, 13, 5}, {6, 16, 300}, {13, 35, 257}, {2, 9, 17}, {31, 8, 64}};
  for (auto isa : {kernels::Isa::scalar, kernels::Isa::avx2}) {
    if (!kernels::isa_supported(isa)) continue;
    kernels::set_isa(isa);
    for (const auto& s : shapes) {
      const int M = s[0], N = s[1], K = s[2];
      for (int ta = 0; ta < 2; ++ta)
        for (int tb = 0; tb < 2; ++tb) {
          auto A = random_vec(static_cast<std::size_t>(M) * K, 11 + M);
          auto B = random_vec(static_cast<std::size_t>(K) * N, 17 + N);
          std::vector<float> C(static_cast<std::size_t>(M) * N, 0.5f);
          kernels::gemm_ex(ta, tb, M, N, K, A.data(), B.data(), C.data(), true);
          auto ref = gemm_oracle(ta, tb, M, N, K, A, B);
          double worst = 0.0;
          for (std::size_t i = 0; i < C.size(); ++i) worst = std::max(worst, std::abs(C[i] - (ref[i] + 0.5)));
          CHECK_MESSAGE(worst < 1e-4 * std::sqrt(static_cast<double>(K)), kernels::isa_name(isa), " M=", M, " N=",
                        N, " K=", K);
        }
    }
  }
}

TEST_CASE("avx2 gemm agrees with the scalar reference") {
  if (!kernels::isa_supported(kernels::Isa::avx2)) return;
  for (int M : {1, 5, 6, 7, 19})
    for (int N : {3, 8, 16, 29, 64})
      for (int K : {1, 9, 255, 513}) {
        auto A = random_vec(static_cast<std::size_t>(M) * K, 100 + K);
        auto B = random_vec(static_cast<std::size_t>(K) * N, 200 + N);
        std::vector<float> c_ref(static_cast<std::size_t>(M) * N), c_vec(c_ref.size());
        kernels::scalar::gemm(M, N, K, A.data(), K, B.data(), N, c_ref.data(), N, false);
        kernels::avx2::gemm(M, N, K, A.data(), K, B.data(), N, c_vec.data(), N, false);
        float worst = 0.0f;
        for (std::size_t i = 0; i < c_ref.size(); ++i) worst = std::max(worst, std::abs(c_ref[i] - c_vec[i]));
        CHECK(worst <= 2e-5f * static_cast<float>(K));
      }
}

TEST_CASE("gemm rows depend only on their own input row") {
  // Running a subset of rows must give bitwise the same result as running all
  // of them; batched inference relies on this.
  IsaGuard guard;
  for (auto isa : {kernels::Isa::scalar, kernels::Isa::avx2}) {
    if (!kernels::isa_supported(isa)) continue;
    kernels::set_isa(isa);
    const int M = 17, N = 37, K = 300;
    auto A = random_vec(static_cast<std::size_t>(M) * K, 3);
    auto B = random_vec(static_cast<std::size_t>(K) * N, 4);
    std::vector<float> full(static_cast<std::size_t>(M) * N);
    kernels::gemm(M, N, K, A.data(), K, B.data(), N, full.data(), N, false);
    for (int start : {0, 5, 11, 16}) {
      std::vector<float> one(N);
      kernels::gemm(1, N, K, A.data() + static_cast<std::size_t>(start) * K, K, B.data(), N, one.data(), N, false);
      for (int j = 0; j < N; ++j) CHECK(one[j] == full[static_cast<std::size_t>(start) * N + j]);
    }
  }
}

TEST_CASE("axpy and adam are bit-identical across ISAs") {
  if (!kernels::isa_supported(kernels::Isa::avx2)) return;
  for (std::size_t n : {1u, 7u, 8u, 33u, 1000u}) {
    auto x = random_vec(n, 5);
    auto y1 = random_vec(n, 6);
    auto y2 = y1;
    kernels::scalar::axpy(0.37f, x.data(), y1.data(), n);
    kernels::avx2::axpy(0.37f, x.data(), y2.data(), n);
    CHECK(y1 == y2);

    kernels::AdamStep s{1e-3f, 0.9f, 0.999f, 1e-8f, 0.01f, 0.1f, 0.001f};
    auto p1 = random_vec(n, 7), g = random_vec(n, 8), m1 = random_vec(n, 9), v1 = random_vec(n, 10);
    for (auto& v : v1) v = std::abs(v);
    auto p2 = p1, m2 = m1, v2 = v1;
    kernels::scalar::adam_update(s, p1.data(), g.data(), m1.data(), v1.data(), n);
    kernels::avx2::adam_update(s, p2.data(), g.data(), m2.data(), v2.data(), n);
    CHECK(p1 == p2);
    CHECK(m1 == m2);
    CHECK(v1 == v2);
  }
}

TEST_CASE("dot agrees across ISAs within rounding") {
  if (!kernels::isa_supported(kernels::Isa::avx2)) return;
  for (std::size_t n : {0u, 1u, 15u, 16u, 64u, 333u}) {
    auto a = random_vec(n, 21), b = random_vec(n, 22);
    double ref = 0.0;
    for (std::size_t i = 0; i < n; ++i) ref += static_cast<double>(a[i]) * b[i];
    CHECK(std::abs(kernels::scalar::dot(a.data(), b.data(), n) - ref) < 1e-4);
    CHECK(std::abs(kernels::avx2::dot(a.data(), b.data(), n) - ref) < 1e-4);
  }
}

TEST_CASE("set_isa rejects unavailable targets") {
  IsaGuard guard;
  CHECK_NOTHROW(kernels::set_isa(kernels::Isa::scalar));
  CHECK(kernels::active_isa() == kernels::Isa::scalar);
  if (!kernels::isa_supported(kernels::Isa::avx2)) CHECK_THROWS(kernels::set_isa(kernels::Isa::avx2));
}
