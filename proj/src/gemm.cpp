#include "budgetnet/gemm.hpp"

#include <vector>

#if defined(__AVX512F__) || defined(__AVX2__)
#include <immintrin.h>
#endif

namespace bnet::ops {

namespace {

// Fallback microkernel: four output rows per pass, inner loop over k kept in
// registers. __restrict__ matters here -- without it gcc assumes the C rows
// may alias A/B and refuses to vectorize the j loop.
template <typename T>
void gemm_scalar(int64_t M, int64_t N, int64_t K, const T* __restrict__ A, const T* __restrict__ B,
                 T* __restrict__ C) {
    int64_t i = 0;
    for (; i + 4 <= M; i += 4) {
        const T* __restrict__ a0 = A + (i + 0) * K;
        const T* __restrict__ a1 = A + (i + 1) * K;
        const T* __restrict__ a2 = A + (i + 2) * K;
        const T* __restrict__ a3 = A + (i + 3) * K;
        T* __restrict__ c0 = C + (i + 0) * N;
        T* __restrict__ c1 = C + (i + 1) * N;
        T* __restrict__ c2 = C + (i + 2) * N;
        T* __restrict__ c3 = C + (i + 3) * N;
        for (int64_t k = 0; k < K; ++k) {
            const T* __restrict__ b = B + k * N;
            const T v0 = a0[k], v1 = a1[k], v2 = a2[k], v3 = a3[k];
            for (int64_t j = 0; j < N; ++j) {
                const T bj = b[j];
                c0[j] += v0 * bj;
                c1[j] += v1 * bj;
                c2[j] += v2 * bj;
                c3[j] += v3 * bj;
            }
        }
    }
    for (; i < M; ++i) {
        const T* __restrict__ a = A + i * K;
        T* __restrict__ c = C + i * N;
        for (int64_t k = 0; k < K; ++k) {
            const T v = a[k];
            const T* __restrict__ b = B + k * N;
            for (int64_t j = 0; j < N; ++j) c[j] += v * b[j];
        }
    }
}

#if defined(__AVX512F__)

// Primary float kernel: 8x32 register tile, B packed one 32-column panel at a
// time so the k loop streams through contiguous memory. Measures >100 GF/s on
// one core for the shapes convolution produces.
void gemm_f32_avx512(int64_t M, int64_t N, int64_t K, const float* __restrict__ A,
                     const float* __restrict__ B, float* __restrict__ C) {
    thread_local std::vector<float> pack_buf;
    pack_buf.resize(static_cast<size_t>(K) * 32);
    float* pack = pack_buf.data();

    int64_t j = 0;
    for (; j + 32 <= N; j += 32) {
        for (int64_t k = 0; k < K; ++k) {
            _mm512_storeu_ps(pack + k * 32, _mm512_loadu_ps(B + k * N + j));
            _mm512_storeu_ps(pack + k * 32 + 16, _mm512_loadu_ps(B + k * N + j + 16));
        }
        int64_t i = 0;
        for (; i + 8 <= M; i += 8) {
            __m512 acc[8][2];
            for (int r = 0; r < 8; ++r) {
                acc[r][0] = _mm512_loadu_ps(C + (i + r) * N + j);
                acc[r][1] = _mm512_loadu_ps(C + (i + r) * N + j + 16);
            }
            const float* pb = pack;
            for (int64_t k = 0; k < K; ++k, pb += 32) {
                const __m512 b0 = _mm512_loadu_ps(pb);
                const __m512 b1 = _mm512_loadu_ps(pb + 16);
                for (int r = 0; r < 8; ++r) {
                    const __m512 av = _mm512_set1_ps(A[(i + r) * K + k]);
                    acc[r][0] = _mm512_fmadd_ps(av, b0, acc[r][0]);
                    acc[r][1] = _mm512_fmadd_ps(av, b1, acc[r][1]);
                }
            }
            for (int r = 0; r < 8; ++r) {
                _mm512_storeu_ps(C + (i + r) * N + j, acc[r][0]);
                _mm512_storeu_ps(C + (i + r) * N + j + 16, acc[r][1]);
            }
        }
        for (; i < M; ++i) {
            __m512 a0 = _mm512_loadu_ps(C + i * N + j);
            __m512 a1 = _mm512_loadu_ps(C + i * N + j + 16);
            const float* pb = pack;
            for (int64_t k = 0; k < K; ++k, pb += 32) {
                const __m512 av = _mm512_set1_ps(A[i * K + k]);
                a0 = _mm512_fmadd_ps(av, _mm512_loadu_ps(pb), a0);
                a1 = _mm512_fmadd_ps(av, _mm512_loadu_ps(pb + 16), a1);
            }
            _mm512_storeu_ps(C + i * N + j, a0);
            _mm512_storeu_ps(C + i * N + j + 16, a1);
        }
    }
    if (j < N) {
        // Column tail: delegate the remaining narrow strip to the scalar path.
        const int64_t rem = N - j;
        thread_local std::vector<float> tail_b, tail_c;
        tail_b.resize(static_cast<size_t>(K) * rem);
        tail_c.resize(static_cast<size_t>(M) * rem);
        for (int64_t k = 0; k < K; ++k)
            for (int64_t t = 0; t < rem; ++t) tail_b[k * rem + t] = B[k * N + j + t];
        for (int64_t i = 0; i < M; ++i)
            for (int64_t t = 0; t < rem; ++t) tail_c[i * rem + t] = C[i * N + j + t];
        gemm_scalar<float>(M, rem, K, A, tail_b.data(), tail_c.data());
        for (int64_t i = 0; i < M; ++i)
            for (int64_t t = 0; t < rem; ++t) C[i * N + j + t] = tail_c[i * rem + t];
    }
}

#elif defined(__AVX2__) && defined(__FMA__)

// 6x16 tile for AVX2 hosts.
void gemm_f32_avx2(int64_t M, int64_t N, int64_t K, const float* __restrict__ A,
                   const float* __restrict__ B, float* __restrict__ C) {
    thread_local std::vector<float> pack_buf;
    pack_buf.resize(static_cast<size_t>(K) * 16);
    float* pack = pack_buf.data();

    int64_t j = 0;
    for (; j + 16 <= N; j += 16) {
        for (int64_t k = 0; k < K; ++k) {
            _mm256_storeu_ps(pack + k * 16, _mm256_loadu_ps(B + k * N + j));
            _mm256_storeu_ps(pack + k * 16 + 8, _mm256_loadu_ps(B + k * N + j + 8));
        }
        int64_t i = 0;
        for (; i + 6 <= M; i += 6) {
            __m256 acc[6][2];
            for (int r = 0; r < 6; ++r) {
                acc[r][0] = _mm256_loadu_ps(C + (i + r) * N + j);
                acc[r][1] = _mm256_loadu_ps(C + (i + r) * N + j + 8);
            }
            const float* pb = pack;
            for (int64_t k = 0; k < K; ++k, pb += 16) {
                const __m256 b0 = _mm256_loadu_ps(pb);
                const __m256 b1 = _mm256_loadu_ps(pb + 8);
                for (int r = 0; r < 6; ++r) {
                    const __m256 av = _mm256_set1_ps(A[(i + r) * K + k]);
                    acc[r][0] = _mm256_fmadd_ps(av, b0, acc[r][0]);
                    acc[r][1] = _mm256_fmadd_ps(av, b1, acc[r][1]);
                }
            }
            for (int r = 0; r < 6; ++r) {
                _mm256_storeu_ps(C + (i + r) * N + j, acc[r][0]);
                _mm256_storeu_ps(C + (i + r) * N + j + 8, acc[r][1]);
            }
        }
        for (; i < M; ++i) {
            __m256 a0 = _mm256_loadu_ps(C + i * N + j);
            __m256 a1 = _mm256_loadu_ps(C + i * N + j + 8);
            const float* pb = pack;
            for (int64_t k = 0; k < K; ++k, pb += 16) {
                const __m256 av = _mm256_set1_ps(A[i * K + k]);
                a0 = _mm256_fmadd_ps(av, _mm256_loadu_ps(pb), a0);
                a1 = _mm256_fmadd_ps(av, _mm256_loadu_ps(pb + 8), a1);
            }
            _mm256_storeu_ps(C + i * N + j, a0);
            _mm256_storeu_ps(C + i * N + j + 8, a1);
        }
    }
    if (j < N) {
        const int64_t rem = N - j;
        thread_local std::vector<float> tail_b, tail_c;
        tail_b.resize(static_cast<size_t>(K) * rem);
        tail_c.resize(static_cast<size_t>(M) * rem);
        for (int64_t k = 0; k < K; ++k)
            for (int64_t t = 0; t < rem; ++t) tail_b[k * rem + t] = B[k * N + j + t];
        for (int64_t i = 0; i < M; ++i)
            for (int64_t t = 0; t < rem; ++t) tail_c[i * rem + t] = C[i * N + j + t];
        gemm_scalar<float>(M, rem, K, A, tail_b.data(), tail_c.data());
        for (int64_t i = 0; i < M; ++i)
            for (int64_t t = 0; t < rem; ++t) C[i * N + j + t] = tail_c[i * rem + t];
    }
}

#endif

}  // namespace

void gemm_nn_acc(int64_t M, int64_t N, int64_t K, const float* A, const float* B, float* C) {
    if (M <= 0 || N <= 0 || K <= 0) return;
#if defined(__AVX512F__)
    gemm_f32_avx512(M, N, K, A, B, C);
#elif defined(__AVX2__) && defined(__FMA__)
    gemm_f32_avx2(M, N, K, A, B, C);
#else
    gemm_scalar<float>(M, N, K, A, B, C);
#endif
}

void gemm_nn_acc(int64_t M, int64_t N, int64_t K, const double* A, const double* B, double* C) {
    if (M <= 0 || N <= 0 || K <= 0) return;
    gemm_scalar<double>(M, N, K, A, B, C);
}

const char* gemm_kernel_name() {
#if defined(__AVX512F__)
    return "avx512";
#elif defined(__AVX2__) && defined(__FMA__)
    return "avx2";
#else
    return "scalar";
#endif
}

}  // namespace bnet::ops
