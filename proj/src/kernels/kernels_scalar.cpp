#include "lavig/kernels.hpp"

#include <cmath>

namespace lavig::kernels::scalar {

void gemm(int M, int N, int K, const float* A, int lda, const float* B, int ldb, float* C, int ldc, bool accumulate) {
  for (int i = 0; i < M; ++i) {
    float* c = C + static_cast<std::size_t>(i) * ldc;
    const float* a = A + static_cast<std::size_t>(i) * lda;
    if (!accumulate) {
      for (int j = 0; j < N; ++j) c[j] = 0.0f;
    }
    for (int k = 0; k < K; ++k) {
      const float aik = a[k];
      const float* b = B + static_cast<std::size_t>(k) * ldb;
      for (int j = 0; j < N; ++j) c[j] += aik * b[j];
    }
  }
}

float dot(const float* a, const float* b, std::size_t n) {
  float s = 0.0f;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

void axpy(float alpha, const float* x, float* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = y[i] + alpha * x[i];
}

void adam_update(const AdamStep& s, float* param, const float* grad, float* m, float* v, std::size_t n) {
  const float one_b1 = 1.0f - s.beta1;
  const float one_b2 = 1.0f - s.beta2;
  const float inv_bc1 = 1.0f / s.bias_correction1;
  const float inv_bc2 = 1.0f / s.bias_correction2;
  const float decay = 1.0f - s.lr * s.weight_decay;
  for (std::size_t i = 0; i < n; ++i) {
    const float g = grad[i];
    const float mi = s.beta1 * m[i] + one_b1 * g;
    const float vi = s.beta2 * v[i] + one_b2 * (g * g);
    m[i] = mi;
    v[i] = vi;
    const float mhat = mi * inv_bc1;
    const float vhat = vi * inv_bc2;
    const float denom = std::sqrt(vhat) + s.eps;
    param[i] = param[i] * decay - s.lr * (mhat / denom);
  }
}

}  // namespace lavig::kernels::scalar
