#include "lavig/kernels.hpp"

#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>
#include <vector>

namespace lavig::kernels {
namespace {

Isa detect() {
  Isa best = Isa::scalar;
#if defined(LAVIG_HAVE_AVX2_TU) && (defined(__GNUC__) || defined(__clang__))
  if (__builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma")) best = Isa::avx2;
#endif
  if (const char* env = std::getenv("LAVIG_ISA")) {
    const std::string want(env);
    if (want == "scalar") return Isa::scalar;
    if (want == "avx2" && best == Isa::avx2) return Isa::avx2;
  }
  return best;
}

std::atomic<Isa>& current() {
  static std::atomic<Isa> isa{detect()};
  return isa;
}

}  // namespace

std::string_view isa_name(Isa isa) { return isa == Isa::avx2 ? "avx2" : "scalar"; }

bool isa_supported(Isa isa) {
  if (isa == Isa::scalar) return true;
#if defined(LAVIG_HAVE_AVX2_TU) && (defined(__GNUC__) || defined(__clang__))
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

Isa active_isa() { return current().load(std::memory_order_relaxed); }

void set_isa(Isa isa) {
  if (!isa_supported(isa)) throw std::runtime_error("ISA not supported on this CPU: " + std::string(isa_name(isa)));
  current().store(isa, std::memory_order_relaxed);
}

void gemm(int M, int N, int K, const float* A, int lda, const float* B, int ldb, float* C, int ldc, bool accumulate) {
  if (active_isa() == Isa::avx2) return avx2::gemm(M, N, K, A, lda, B, ldb, C, ldc, accumulate);
  scalar::gemm(M, N, K, A, lda, B, ldb, C, ldc, accumulate);
}

void gemm_ex(bool trans_a, bool trans_b, int M, int N, int K, const float* A, const float* B, float* C,
             bool accumulate) {
  // Transposed operands are packed into contiguous row-major scratch first.
  thread_local std::vector<float> pack_a;
  thread_local std::vector<float> pack_b;
  const float* a = A;
  const float* b = B;
  if (trans_a) {
    pack_a.resize(static_cast<std::size_t>(M) * K);
    for (int k = 0; k < K; ++k)
      for (int i = 0; i < M; ++i) pack_a[static_cast<std::size_t>(i) * K + k] = A[static_cast<std::size_t>(k) * M + i];
    a = pack_a.data();
  }
  if (trans_b) {
    pack_b.resize(static_cast<std::size_t>(K) * N);
    for (int j = 0; j < N; ++j)
      for (int k = 0; k < K; ++k) pack_b[static_cast<std::size_t>(k) * N + j] = B[static_cast<std::size_t>(j) * K + k];
    b = pack_b.data();
  }
  gemm(M, N, K, a, K, b, N, C, N, accumulate);
}

float dot(const float* a, const float* b, std::size_t n) {
  if (active_isa() == Isa::avx2) return avx2::dot(a, b, n);
  return scalar::dot(a, b, n);
}

void axpy(float alpha, const float* x, float* y, std::size_t n) {
  if (active_isa() == Isa::avx2) return avx2::axpy(alpha, x, y, n);
  scalar::axpy(alpha, x, y, n);
}

void adam_update(const AdamStep& step, float* param, const float* grad, float* m, float* v, std::size_t n) {
  if (active_isa() == Isa::avx2) return avx2::adam_update(step, param, grad, m, v, n);
  scalar::adam_update(step, param, grad, m, v, n);
}

}  // namespace lavig::kernels
