#include "griddiff/kernels.hpp"

// Reference kernels. Plain loops, fixed accumulation order; the AVX2 variants
// are checked against these.

namespace griddiff::kernels::scalar {

template <class T>
static void gemm_nn_impl(T* c, const T* a, const T* b, size_t m, size_t k, size_t n) {
    for (size_t i = 0; i < m; ++i) {
        T* ci = c + i * n;
        const T* ai = a + i * k;
        for (size_t p = 0; p < k; ++p) {
            const T alpha = ai[p];
            const T* bp = b + p * n;
            for (size_t j = 0; j < n; ++j) {
                ci[j] += alpha * bp[j];
            }
        }
    }
}

template <class T>
static void gemm_nt_impl(T* c, const T* a, const T* b, size_t m, size_t k, size_t n) {
    for (size_t i = 0; i < m; ++i) {
        const T* ai = a + i * k;
        T* ci = c + i * n;
        for (size_t j = 0; j < n; ++j) {
            const T* bj = b + j * k;
            T acc = 0;
            for (size_t p = 0; p < k; ++p) {
                acc += ai[p] * bj[p];
            }
            ci[j] += acc;
        }
    }
}

template <class T>
static void gemm_tn_impl(T* c, const T* a, const T* b, size_t m, size_t k, size_t n) {
    // a is k x m, walked row-wise so every inner update is a contiguous axpy
    for (size_t p = 0; p < k; ++p) {
        const T* ap = a + p * m;
        const T* bp = b + p * n;
        for (size_t i = 0; i < m; ++i) {
            const T alpha = ap[i];
            T* ci = c + i * n;
            for (size_t j = 0; j < n; ++j) {
                ci[j] += alpha * bp[j];
            }
        }
    }
}

void gemm_nn_f32(float* c, const float* a, const float* b, size_t m, size_t k, size_t n) { gemm_nn_impl(c, a, b, m, k, n); }
void gemm_nt_f32(float* c, const float* a, const float* b, size_t m, size_t k, size_t n) { gemm_nt_impl(c, a, b, m, k, n); }
void gemm_tn_f32(float* c, const float* a, const float* b, size_t m, size_t k, size_t n) { gemm_tn_impl(c, a, b, m, k, n); }
void gemm_nn_f64(double* c, const double* a, const double* b, size_t m, size_t k, size_t n) { gemm_nn_impl(c, a, b, m, k, n); }
void gemm_nt_f64(double* c, const double* a, const double* b, size_t m, size_t k, size_t n) { gemm_nt_impl(c, a, b, m, k, n); }
void gemm_tn_f64(double* c, const double* a, const double* b, size_t m, size_t k, size_t n) { gemm_tn_impl(c, a, b, m, k, n); }

float dot_f32(const float* a, const float* b, size_t n) {
    float acc = 0;
    for (size_t i = 0; i < n; ++i) {
        acc += a[i] * b[i];
    }
    return acc;
}

double dot_f64(const double* a, const double* b, size_t n) {
    double acc = 0;
    for (size_t i = 0; i < n; ++i) {
        acc += a[i] * b[i];
    }
    return acc;
}

void axpy_f32(float* y, float alpha, const float* x, size_t n) {
    for (size_t i = 0; i < n; ++i) {
        y[i] += alpha * x[i];
    }
}

void axpy_f64(double* y, double alpha, const double* x, size_t n) {
    for (size_t i = 0; i < n; ++i) {
        y[i] += alpha * x[i];
    }
}

} // namespace griddiff::kernels::scalar
