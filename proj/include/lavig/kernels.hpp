#pragma once

// Data-parallel inner loops used by the rest of the library.
//
// Every kernel has a portable scalar reference and, on x86-64, an AVX2/FMA
// variant. The active implementation is picked once at startup from CPUID
// (overridable with LAVIG_ISA=scalar|avx2 or set_isa()). All matrices are
// row-major with explicit leading dimensions.

#include <cstddef>
#include <string_view>

namespace lavig::kernels {

enum class Isa { scalar, avx2 };

std::string_view isa_name(Isa isa);
bool isa_supported(Isa isa);
Isa active_isa();
/// Throws std::runtime_error if the requested ISA is not available here.
void set_isa(Isa isa);

/// C[M,N] (+)= A[M,K] * B[K,N].
///
/// Each output element is produced by a single in-order accumulation over k,
/// independent of which row or column block it falls in, so a given row of C
/// depends only on the matching row of A (bitwise).
void gemm(int M, int N, int K, const float* A, int lda, const float* B, int ldb, float* C, int ldc,
          bool accumulate);

/// C[M,N] (+)= op(A) * op(B) where op transposes when the flag is set.
/// A is stored [M,K] (or [K,M] when trans_a), B is [K,N] (or [N,K] when trans_b).
void gemm_ex(bool trans_a, bool trans_b, int M, int N, int K, const float* A, const float* B, float* C,
             bool accumulate);

float dot(const float* a, const float* b, std::size_t n);

/// y += alpha * x. Bit-identical across ISAs (no fused multiply-add).
void axpy(float alpha, const float* x, float* y, std::size_t n);

struct AdamStep {
  float lr;
  float beta1;
  float beta2;
  float eps;
  float weight_decay;  // decoupled (AdamW); 0 for plain Adam
  float bias_correction1;
  float bias_correction2;
};

/// One Adam/AdamW update over a flat parameter slice. Bit-identical across ISAs.
void adam_update(const AdamStep& step, float* param, const float* grad, float* m, float* v, std::size_t n);

namespace scalar {
void gemm(int M, int N, int K, const float* A, int lda, const float* B, int ldb, float* C, int ldc, bool accumulate);
float dot(const float* a, const float* b, std::size_t n);
void axpy(float alpha, const float* x, float* y, std::size_t n);
void adam_update(const AdamStep& step, float* param, const float* grad, float* m, float* v, std::size_t n);
}  // namespace scalar

namespace avx2 {
void gemm(int M, int N, int K, const float* A, int lda, const float* B, int ldb, float* C, int ldc, bool accumulate);
float dot(const float* a, const float* b, std::size_t n);
void axpy(float alpha, const float* x, float* y, std::size_t n);
void adam_update(const AdamStep& step, float* param, const float* grad, float* m, float* v, std::size_t n);
}  // namespace avx2

}  // namespace lavig::kernels
