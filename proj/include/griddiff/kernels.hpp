#pragma once
// Dense math inner loops. Scalar reference kernels are the semantic ground
// truth; AVX2 variants are selected at runtime when the CPU supports them and
// are equivalence-tested against the reference.
//
// GEMM naming: nn  C += A(m x k) * B(k x n)
//              nt  C += A(m x k) * B(n x k)^T
//              tn  C += A(k x m)^T * B(k x n)
// All matrices row-major, C accumulated in place.

#include <cstddef>

namespace griddiff::kernels {

namespace scalar {
void gemm_nn_f32(float* c, const float* a, const float* b, size_t m, size_t k, size_t n);
void gemm_nt_f32(float* c, const float* a, const float* b, size_t m, size_t k, size_t n);
void gemm_tn_f32(float* c, const float* a, const float* b, size_t m, size_t k, size_t n);
void gemm_nn_f64(double* c, const double* a, const double* b, size_t m, size_t k, size_t n);
void gemm_nt_f64(double* c, const double* a, const double* b, size_t m, size_t k, size_t n);
void gemm_tn_f64(double* c, const double* a, const double* b, size_t m, size_t k, size_t n);
float dot_f32(const float* a, const float* b, size_t n);
double dot_f64(const double* a, const double* b, size_t n);
void axpy_f32(float* y, float alpha, const float* x, size_t n);
void axpy_f64(double* y, double alpha, const double* x, size_t n);
} // namespace scalar

#if defined(__x86_64__) || defined(_M_X64)
namespace avx2 {
void gemm_nn_f32(float* c, const float* a, const float* b, size_t m, size_t k, size_t n);
void gemm_nt_f32(float* c, const float* a, const float* b, size_t m, size_t k, size_t n);
void gemm_tn_f32(float* c, const float* a, const float* b, size_t m, size_t k, size_t n);
void gemm_nn_f64(double* c, const double* a, const double* b, size_t m, size_t k, size_t n);
void gemm_nt_f64(double* c, const double* a, const double* b, size_t m, size_t k, size_t n);
void gemm_tn_f64(double* c, const double* a, const double* b, size_t m, size_t k, size_t n);
float dot_f32(const float* a, const float* b, size_t n);
double dot_f64(const double* a, const double* b, size_t n);
void axpy_f32(float* y, float alpha, const float* x, size_t n);
void axpy_f64(double* y, double alpha, const double* x, size_t n);
} // namespace avx2
#endif

// Runtime-dispatched entry points (function pointers bound on first use).
extern void (*gemm_nn_f32)(float*, const float*, const float*, size_t, size_t, size_t);
extern void (*gemm_nt_f32)(float*, const float*, const float*, size_t, size_t, size_t);
extern void (*gemm_tn_f32)(float*, const float*, const float*, size_t, size_t, size_t);
extern void (*gemm_nn_f64)(double*, const double*, const double*, size_t, size_t, size_t);
extern void (*gemm_nt_f64)(double*, const double*, const double*, size_t, size_t, size_t);
extern void (*gemm_tn_f64)(double*, const double*, const double*, size_t, size_t, size_t);
extern float (*dot_f32)(const float*, const float*, size_t);
extern double (*dot_f64)(const double*, const double*, size_t);
extern void (*axpy_f32)(float*, float, const float*, size_t);
extern void (*axpy_f64)(double*, double, const double*, size_t);

// Name of the kernel set in use ("scalar" or "avx2").
const char* active_backend();
// Force a backend; "scalar" or "avx2" (throws if unsupported). Used by tests.
void select_backend(const char* name);

// Typed front-ends so templated code can call the dispatched kernels.
inline void gemm_nn(float* c, const float* a, const float* b, size_t m, size_t k, size_t n) { gemm_nn_f32(c, a, b, m, k, n); }
inline void gemm_nn(double* c, const double* a, const double* b, size_t m, size_t k, size_t n) { gemm_nn_f64(c, a, b, m, k, n); }
inline void gemm_nt(float* c, const float* a, const float* b, size_t m, size_t k, size_t n) { gemm_nt_f32(c, a, b, m, k, n); }
inline void gemm_nt(double* c, const double* a, const double* b, size_t m, size_t k, size_t n) { gemm_nt_f64(c, a, b, m, k, n); }
inline void gemm_tn(float* c, const float* a, const float* b, size_t m, size_t k, size_t n) { gemm_tn_f32(c, a, b, m, k, n); }
inline void gemm_tn(double* c, const double* a, const double* b, size_t m, size_t k, size_t n) { gemm_tn_f64(c, a, b, m, k, n); }
inline float dot(const float* a, const float* b, size_t n) { return dot_f32(a, b, n); }
inline double dot(const double* a, const double* b, size_t n) { return dot_f64(a, b, n); }
inline void axpy(float* y, float alpha, const float* x, size_t n) { axpy_f32(y, alpha, x, n); }
inline void axpy(double* y, double alpha, const double* x, size_t n) { axpy_f64(y, alpha, x, n); }

} // namespace griddiff::kernels
