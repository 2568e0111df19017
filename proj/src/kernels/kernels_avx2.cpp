#include "lavig/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#if defined(LAVIG_HAVE_AVX2_TU)
#include <immintrin.h>

namespace lavig::kernels::avx2 {
namespace {

constexpr int kRowBlock = 6;
constexpr int kColBlock = 16;
constexpr int kDepthBlock = 256;
constexpr int kPanelCols = 128;  // B panel of kDepthBlock x kPanelCols stays in L2

// R rows x 16 columns, accumulating k in [k0, k1) on top of whatever C holds
// (or zero when `fresh`). Accumulation order per element is strictly k-ascending.
template <int R>
inline void tile16(int k0, int k1, const float* A, int lda, const float* B, int ldb, float* C, int ldc, bool fresh) {
  __m256 acc0[R];
  __m256 acc1[R];
  for (int r = 0; r < R; ++r) {
    if (fresh) {
      acc0[r] = _mm256_setzero_ps();
      acc1[r] = _mm256_setzero_ps();
    } else {
      acc0[r] = _mm256_loadu_ps(C + r * ldc);
      acc1[r] = _mm256_loadu_ps(C + r * ldc + 8);
    }
  }
  for (int k = k0; k < k1; ++k) {
    const float* b = B + static_cast<std::size_t>(k) * ldb;
    const __m256 b0 = _mm256_loadu_ps(b);
    const __m256 b1 = _mm256_loadu_ps(b + 8);
    for (int r = 0; r < R; ++r) {
      const __m256 a = _mm256_broadcast_ss(A + static_cast<std::size_t>(r) * lda + k);
      acc0[r] = _mm256_fmadd_ps(a, b0, acc0[r]);
      acc1[r] = _mm256_fmadd_ps(a, b1, acc1[r]);
    }
  }
  for (int r = 0; r < R; ++r) {
    _mm256_storeu_ps(C + r * ldc, acc0[r]);
    _mm256_storeu_ps(C + r * ldc + 8, acc1[r]);
  }
}

template <int R>
inline void tile8(int k0, int k1, const float* A, int lda, const float* B, int ldb, float* C, int ldc, bool fresh) {
  __m256 acc[R];
  for (int r = 0; r < R; ++r) acc[r] = fresh ? _mm256_setzero_ps() : _mm256_loadu_ps(C + r * ldc);
  for (int k = k0; k < k1; ++k) {
    const __m256 b0 = _mm256_loadu_ps(B + static_cast<std::size_t>(k) * ldb);
    for (int r = 0; r < R; ++r) {
      const __m256 a = _mm256_broadcast_ss(A + static_cast<std::size_t>(r) * lda + k);
      acc[r] = _mm256_fmadd_ps(a, b0, acc[r]);
    }
  }
  for (int r = 0; r < R; ++r) _mm256_storeu_ps(C + r * ldc, acc[r]);
}

// Scalar column tail; std::fma rounds exactly like the vector lanes.
template <int R>
inline void tile1(int width, int k0, int k1, const float* A, int lda, const float* B, int ldb, float* C, int ldc,
                  bool fresh) {
  for (int r = 0; r < R; ++r) {
    const float* a = A + static_cast<std::size_t>(r) * lda;
    float* c = C + static_cast<std::size_t>(r) * ldc;
    for (int j = 0; j < width; ++j) {
      float acc = fresh ? 0.0f : c[j];
      for (int k = k0; k < k1; ++k) acc = std::fma(a[k], B[static_cast<std::size_t>(k) * ldb + j], acc);
      c[j] = acc;
    }
  }
}

template <int R>
void row_block(int N, int k0, int k1, const float* A, int lda, const float* B, int ldb, float* C, int ldc, bool fresh) {
  int j = 0;
  for (; j + kColBlock <= N; j += kColBlock) tile16<R>(k0, k1, A, lda, B + j, ldb, C + j, ldc, fresh);
  for (; j + 8 <= N; j += 8) tile8<R>(k0, k1, A, lda, B + j, ldb, C + j, ldc, fresh);
  if (j < N) tile1<R>(N - j, k0, k1, A, lda, B + j, ldb, C + j, ldc, fresh);
}

void dispatch_rows(int rows, int N, int k0, int k1, const float* A, int lda, const float* B, int ldb, float* C,
                   int ldc, bool fresh) {
  switch (rows) {
    case 6: row_block<6>(N, k0, k1, A, lda, B, ldb, C, ldc, fresh); break;
    case 5: row_block<5>(N, k0, k1, A, lda, B, ldb, C, ldc, fresh); break;
    case 4: row_block<4>(N, k0, k1, A, lda, B, ldb, C, ldc, fresh); break;
    case 3: row_block<3>(N, k0, k1, A, lda, B, ldb, C, ldc, fresh); break;
    case 2: row_block<2>(N, k0, k1, A, lda, B, ldb, C, ldc, fresh); break;
    default: row_block<1>(N, k0, k1, A, lda, B, ldb, C, ldc, fresh); break;
  }
}

inline float hsum(__m256 v) {
  __m128 lo = _mm256_castps256_ps128(v);
  __m128 hi = _mm256_extractf128_ps(v, 1);
  __m128 s = _mm_add_ps(lo, hi);
  s = _mm_hadd_ps(s, s);
  s = _mm_hadd_ps(s, s);
  return _mm_cvtss_f32(s);
}

}  // namespace

void gemm(int M, int N, int K, const float* A, int lda, const float* B, int ldb, float* C, int ldc, bool accumulate) {
  if (M <= 0 || N <= 0) return;
  if (K <= 0) {
    if (!accumulate) {
      for (int i = 0; i < M; ++i)
        for (int j = 0; j < N; ++j) C[static_cast<std::size_t>(i) * ldc + j] = 0.0f;
    }
    return;
  }
  for (int k0 = 0; k0 < K; k0 += kDepthBlock) {
    const int k1 = std::min(K, k0 + kDepthBlock);
    const bool fresh = (k0 == 0) && !accumulate;
    for (int j0 = 0; j0 < N; j0 += kPanelCols) {
      const int cols = std::min(kPanelCols, N - j0);
      for (int i = 0; i < M; i += kRowBlock) {
        const int rows = std::min(kRowBlock, M - i);
        dispatch_rows(rows, cols, k0, k1, A + static_cast<std::size_t>(i) * lda, lda, B + j0, ldb,
                      C + static_cast<std::size_t>(i) * ldc + j0, ldc, fresh);
      }
    }
  }
}

float dot(const float* a, const float* b, std::size_t n) {
  __m256 acc0 = _mm256_setzero_ps();
  __m256 acc1 = _mm256_setzero_ps();
  std::size_t i = 0;
  for (; i + 16 <= n; i += 16) {
    acc0 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i), acc0);
    acc1 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i + 8), _mm256_loadu_ps(b + i + 8), acc1);
  }
  for (; i + 8 <= n; i += 8) acc0 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i), acc0);
  float s = hsum(_mm256_add_ps(acc0, acc1));
  for (; i < n; ++i) s = std::fma(a[i], b[i], s);
  return s;
}

void axpy(float alpha, const float* x, float* y, std::size_t n) {
  const __m256 va = _mm256_set1_ps(alpha);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 prod = _mm256_mul_ps(va, _mm256_loadu_ps(x + i));
    _mm256_storeu_ps(y + i, _mm256_add_ps(_mm256_loadu_ps(y + i), prod));
  }
  for (; i < n; ++i) y[i] = y[i] + alpha * x[i];
}

void adam_update(const AdamStep& s, float* param, const float* grad, float* m, float* v, std::size_t n) {
  const float one_b1 = 1.0f - s.beta1;
  const float one_b2 = 1.0f - s.beta2;
  const float inv_bc1 = 1.0f / s.bias_correction1;
  const float inv_bc2 = 1.0f / s.bias_correction2;
  const float decay = 1.0f - s.lr * s.weight_decay;
  const __m256 vb1 = _mm256_set1_ps(s.beta1), vb2 = _mm256_set1_ps(s.beta2);
  const __m256 v1b1 = _mm256_set1_ps(one_b1), v1b2 = _mm256_set1_ps(one_b2);
  const __m256 vbc1 = _mm256_set1_ps(inv_bc1), vbc2 = _mm256_set1_ps(inv_bc2);
  const __m256 veps = _mm256_set1_ps(s.eps), vlr = _mm256_set1_ps(s.lr), vdecay = _mm256_set1_ps(decay);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 g = _mm256_loadu_ps(grad + i);
    const __m256 mi = _mm256_add_ps(_mm256_mul_ps(vb1, _mm256_loadu_ps(m + i)), _mm256_mul_ps(v1b1, g));
    const __m256 vi =
        _mm256_add_ps(_mm256_mul_ps(vb2, _mm256_loadu_ps(v + i)), _mm256_mul_ps(v1b2, _mm256_mul_ps(g, g)));
    _mm256_storeu_ps(m + i, mi);
    _mm256_storeu_ps(v + i, vi);
    const __m256 mhat = _mm256_mul_ps(mi, vbc1);
    const __m256 denom = _mm256_add_ps(_mm256_sqrt_ps(_mm256_mul_ps(vi, vbc2)), veps);
    const __m256 p = _mm256_mul_ps(_mm256_loadu_ps(param + i), vdecay);
    _mm256_storeu_ps(param + i, _mm256_sub_ps(p, _mm256_mul_ps(vlr, _mm256_div_ps(mhat, denom))));
  }
  for (; i < n; ++i) {
    const float g = grad[i];
    const float mi = s.beta1 * m[i] + one_b1 * g;
    const float vi = s.beta2 * v[i] + one_b2 * (g * g);
    m[i] = mi;
    v[i] = vi;
    const float mhat = mi * inv_bc1;
    const float denom = std::sqrt(vi * inv_bc2) + s.eps;
    param[i] = param[i] * decay - s.lr * (mhat / denom);
  }
}

}  // namespace lavig::kernels::avx2

#else

namespace lavig::kernels::avx2 {

[[noreturn]] static void unavailable() { throw std::runtime_error("AVX2 kernels were not compiled for this target"); }

void gemm(int, int, int, const float*, int, const float*, int, float*, int, bool) { unavailable(); }
float dot(const float*, const float*, std::size_t) { unavailable(); }
void axpy(float, const float*, float*, std::size_t) { unavailable(); }
void adam_update(const AdamStep&, float*, const float*, float*, float*, std::size_t) { unavailable(); }

}  // namespace lavig::kernels::avx2

#endif
