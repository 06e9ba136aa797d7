#pragma once

#include <cstdint>

namespace bnet::ops {

// C[M,N] += A[M,K] * B[K,N], all row-major, single-threaded.
//
// Accumulate semantics: callers that want a fresh product zero C first.
// Convolution weight gradients rely on the accumulation to sum over the
// batch without a separate reduction buffer. Summation order is fixed, so
// results are reproducible run to run.
void gemm_nn_acc(int64_t M, int64_t N, int64_t K, const float* A, const float* B, float* C);
void gemm_nn_acc(int64_t M, int64_t N, int64_t K, const double* A, const double* B, double* C);

// Which float kernel was compiled in: "avx512", "avx2" or "scalar".
const char* gemm_kernel_name();

}  // namespace bnet::ops
