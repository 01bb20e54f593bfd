// AVX2+FMA kernel variants. This translation unit is the only one compiled
// with -mavx2 -mfma; callers reach it through the runtime dispatch table.

#if defined(__x86_64__) || defined(_M_X64)

#include "griddiff/kernels.hpp"
#include <immintrin.h>

namespace griddiff::kernels::avx2 {

namespace {

inline float hsum8(__m256 v) {
    __m128 lo = _mm256_castps256_ps128(v);
    __m128 hi = _mm256_extractf128_ps(v, 1);
    lo = _mm_add_ps(lo, hi);
    lo = _mm_hadd_ps(lo, lo);
    lo = _mm_hadd_ps(lo, lo);
    return _mm_cvtss_f32(lo);
}

inline double hsum4(__m256d v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    lo = _mm_hadd_pd(lo, lo);
    return _mm_cvtsd_f64(lo);
}

} // namespace

void gemm_nn_f32(float* c, const float* a, const float* b, size_t m, size_t k, size_t n) {
    size_t i = 0;
    // 4-row micro-kernel, 16 columns per tile, accumulators live across k
    for (; i + 4 <= m; i += 4) {
        const float* a0 = a + (i + 0) * k;
        const float* a1 = a + (i + 1) * k;
        const float* a2 = a + (i + 2) * k;
        const float* a3 = a + (i + 3) * k;
        float* c0 = c + (i + 0) * n;
        float* c1 = c + (i + 1) * n;
        float* c2 = c + (i + 2) * n;
        float* c3 = c + (i + 3) * n;
        size_t j = 0;
        for (; j + 16 <= n; j += 16) {
            __m256 r00 = _mm256_loadu_ps(c0 + j), r01 = _mm256_loadu_ps(c0 + j + 8);
            __m256 r10 = _mm256_loadu_ps(c1 + j), r11 = _mm256_loadu_ps(c1 + j + 8);
            __m256 r20 = _mm256_loadu_ps(c2 + j), r21 = _mm256_loadu_ps(c2 + j + 8);
            __m256 r30 = _mm256_loadu_ps(c3 + j), r31 = _mm256_loadu_ps(c3 + j + 8);
            for (size_t p = 0; p < k; ++p) {
                const float* bp = b + p * n + j;
                __m256 b0 = _mm256_loadu_ps(bp);
                __m256 b1 = _mm256_loadu_ps(bp + 8);
                __m256 s0 = _mm256_set1_ps(a0[p]);
                __m256 s1 = _mm256_set1_ps(a1[p]);
                __m256 s2 = _mm256_set1_ps(a2[p]);
                __m256 s3 = _mm256_set1_ps(a3[p]);
                r00 = _mm256_fmadd_ps(s0, b0, r00); r01 = _mm256_fmadd_ps(s0, b1, r01);
                r10 = _mm256_fmadd_ps(s1, b0, r10); r11 = _mm256_fmadd_ps(s1, b1, r11);
                r20 = _mm256_fmadd_ps(s2, b0, r20); r21 = _mm256_fmadd_ps(s2, b1, r21);
                r30 = _mm256_fmadd_ps(s3, b0, r30); r31 = _mm256_fmadd_ps(s3, b1, r31);
            }
            _mm256_storeu_ps(c0 + j, r00); _mm256_storeu_ps(c0 + j + 8, r01);
            _mm256_storeu_ps(c1 + j, r10); _mm256_storeu_ps(c1 + j + 8, r11);
            _mm256_storeu_ps(c2 + j, r20); _mm256_storeu_ps(c2 + j + 8, r21);
            _mm256_storeu_ps(c3 + j, r30); _mm256_storeu_ps(c3 + j + 8, r31);
        }
        for (; j + 8 <= n; j += 8) {
            __m256 r0 = _mm256_loadu_ps(c0 + j);
            __m256 r1 = _mm256_loadu_ps(c1 + j);
            __m256 r2 = _mm256_loadu_ps(c2 + j);
            __m256 r3 = _mm256_loadu_ps(c3 + j);
            for (size_t p = 0; p < k; ++p) {
                __m256 bv = _mm256_loadu_ps(b + p * n + j);
                r0 = _mm256_fmadd_ps(_mm256_set1_ps(a0[p]), bv, r0);
                r1 = _mm256_fmadd_ps(_mm256_set1_ps(a1[p]), bv, r1);
                r2 = _mm256_fmadd_ps(_mm256_set1_ps(a2[p]), bv, r2);
                r3 = _mm256_fmadd_ps(_mm256_set1_ps(a3[p]), bv, r3);
            }
            _mm256_storeu_ps(c0 + j, r0);
            _mm256_storeu_ps(c1 + j, r1);
            _mm256_storeu_ps(c2 + j, r2);
            _mm256_storeu_ps(c3 + j, r3);
        }
        for (; j < n; ++j) {
            float s0 = 0, s1 = 0, s2 = 0, s3 = 0;
            for (size_t p = 0; p < k; ++p) {
                const float bv = b[p * n + j];
                s0 += a0[p] * bv;
                s1 += a1[p] * bv;
                s2 += a2[p] * bv;
                s3 += a3[p] * bv;
            }
            c0[j] += s0; c1[j] += s1; c2[j] += s2; c3[j] += s3;
        }
    }
    for (; i < m; ++i) {
        const float* ai = a + i * k;
        float* ci = c + i * n;
        size_t j = 0;
        for (; j + 8 <= n; j += 8) {
            __m256 r = _mm256_loadu_ps(ci + j);
            for (size_t p = 0; p < k; ++p) {
                r = _mm256_fmadd_ps(_mm256_set1_ps(ai[p]), _mm256_loadu_ps(b + p * n + j), r);
            }
            _mm256_storeu_ps(ci + j, r);
        }
        for (; j < n; ++j) {
            float s = 0;
            for (size_t p = 0; p < k; ++p) {
                s += ai[p] * b[p * n + j];
            }
            ci[j] += s;
        }
    }
}

void gemm_nt_f32(float* c, const float* a, const float* b, size_t m, size_t k, size_t n) {
    for (size_t i = 0; i < m; ++i) {
        const float* ai = a + i * k;
        float* ci = c + i * n;
        size_t j = 0;
        for (; j + 4 <= n; j += 4) {
            const float* b0 = b + (j + 0) * k;
            const float* b1 = b + (j + 1) * k;
            const float* b2 = b + (j + 2) * k;
            const float* b3 = b + (j + 3) * k;
            __m256 s0 = _mm256_setzero_ps(), s1 = _mm256_setzero_ps();
            __m256 s2 = _mm256_setzero_ps(), s3 = _mm256_setzero_ps();
            size_t p = 0;
            for (; p + 8 <= k; p += 8) {
                __m256 av = _mm256_loadu_ps(ai + p);
                s0 = _mm256_fmadd_ps(av, _mm256_loadu_ps(b0 + p), s0);
                s1 = _mm256_fmadd_ps(av, _mm256_loadu_ps(b1 + p), s1);
                s2 = _mm256_fmadd_ps(av, _mm256_loadu_ps(b2 + p), s2);
                s3 = _mm256_fmadd_ps(av, _mm256_loadu_ps(b3 + p), s3);
            }
            float t0 = hsum8(s0), t1 = hsum8(s1), t2 = hsum8(s2), t3 = hsum8(s3);
            for (; p < k; ++p) {
                t0 += ai[p] * b0[p];
                t1 += ai[p] * b1[p];
                t2 += ai[p] * b2[p];
                t3 += ai[p] * b3[p];
            }
            ci[j + 0] += t0; ci[j + 1] += t1; ci[j + 2] += t2; ci[j + 3] += t3;
        }
        for (; j < n; ++j) {
            ci[j] += dot_f32(ai, b + j * k, k);
        }
    }
}

void gemm_tn_f32(float* c, const float* a, const float* b, size_t m, size_t k, size_t n) {
    for (size_t p = 0; p < k; ++p) {
        const float* ap = a + p * m;
        const float* bp = b + p * n;
        for (size_t i = 0; i < m; ++i) {
            axpy_f32(c + i * n, ap[i], bp, n);
        }
    }
}

void gemm_nn_f64(double* c, const double* a, const double* b, size_t m, size_t k, size_t n) {
    for (size_t i = 0; i < m; ++i) {
        const double* ai = a + i * k;
        double* ci = c + i * n;
        size_t j = 0;
        for (; j + 4 <= n; j += 4) {
            __m256d r = _mm256_loadu_pd(ci + j);
            for (size_t p = 0; p < k; ++p) {
                r = _mm256_fmadd_pd(_mm256_set1_pd(ai[p]), _mm256_loadu_pd(b + p * n + j), r);
            }
            _mm256_storeu_pd(ci + j, r);
        }
        for (; j < n; ++j) {
            double s = 0;
            for (size_t p = 0; p < k; ++p) {
                s += ai[p] * b[p * n + j];
            }
            ci[j] += s;
        }
    }
}

void gemm_nt_f64(double* c, const double* a, const double* b, size_t m, size_t k, size_t n) {
    for (size_t i = 0; i < m; ++i) {
        const double* ai = a + i * k;
        double* ci = c + i * n;
        for (size_t j = 0; j < n; ++j) {
            ci[j] += dot_f64(ai, b + j * k, k);
        }
    }
}

void gemm_tn_f64(double* c, const double* a, const double* b, size_t m, size_t k, size_t n) {
    for (size_t p = 0; p < k; ++p) {
        const double* ap = a + p * m;
        const double* bp = b + p * n;
        for (size_t i = 0; i < m; ++i) {
            axpy_f64(c + i * n, ap[i], bp, n);
        }
    }
}

float dot_f32(const float* a, const float* b, size_t n) {
    __m256 s0 = _mm256_setzero_ps();
    __m256 s1 = _mm256_setzero_ps();
    size_t i = 0;
    for (; i + 16 <= n; i += 16) {
        s0 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i), s0);
        s1 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i + 8), _mm256_loadu_ps(b + i + 8), s1);
    }
    for (; i + 8 <= n; i += 8) {
        s0 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i), s0);
    }
    float acc = hsum8(_mm256_add_ps(s0, s1));
    for (; i < n; ++i) {
        acc += a[i] * b[i];
    }
    return acc;
}

double dot_f64(const double* a, const double* b, size_t n) {
    __m256d s = _mm256_setzero_pd();
    size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        s = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), s);
    }
    double acc = hsum4(s);
    for (; i < n; ++i) {
        acc += a[i] * b[i];
    }
    return acc;
}

void axpy_f32(float* y, float alpha, const float* x, size_t n) {
    const __m256 av = _mm256_set1_ps(alpha);
    size_t i = 0;
    for (; i + 16 <= n; i += 16) {
        _mm256_storeu_ps(y + i, _mm256_fmadd_ps(av, _mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
        _mm256_storeu_ps(y + i + 8, _mm256_fmadd_ps(av, _mm256_loadu_ps(x + i + 8), _mm256_loadu_ps(y + i + 8)));
    }
    for (; i + 8 <= n; i += 8) {
        _mm256_storeu_ps(y + i, _mm256_fmadd_ps(av, _mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
    }
    for (; i < n; ++i) {
        y[i] += alpha * x[i];
    }
}

void axpy_f64(double* y, double alpha, const double* x, size_t n) {
    const __m256d av = _mm256_set1_pd(alpha);
    size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(y + i, _mm256_fmadd_pd(av, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
    }
    for (; i < n; ++i) {
        y[i] += alpha * x[i];
    }
}

} // namespace griddiff::kernels::avx2

#endif // x86_64
