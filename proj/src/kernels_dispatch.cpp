#include "griddiff/kernels.hpp"

#include <cstring>
#include <stdexcept>
#include <string>

namespace griddiff::kernels {

namespace {

bool cpu_has_avx2() {
#if defined(__x86_64__) || defined(_M_X64)
#if defined(__GNUC__) || defined(__clang__)
    __builtin_cpu_init();
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
#else
    return false;
#endif
}

const char* g_backend = nullptr;

void bind_scalar() {
    gemm_nn_f32 = scalar::gemm_nn_f32;
    gemm_nt_f32 = scalar::gemm_nt_f32;
    gemm_tn_f32 = scalar::gemm_tn_f32;
    gemm_nn_f64 = scalar::gemm_nn_f64;
    gemm_nt_f64 = scalar::gemm_nt_f64;
    gemm_tn_f64 = scalar::gemm_tn_f64;
    dot_f32 = scalar::dot_f32;
    dot_f64 = scalar::dot_f64;
    axpy_f32 = scalar::axpy_f32;
    axpy_f64 = scalar::axpy_f64;
    g_backend = "scalar";
}

#if defined(__x86_64__) || defined(_M_X64)
void bind_avx2() {
    gemm_nn_f32 = avx2::gemm_nn_f32;
    gemm_nt_f32 = avx2::gemm_nt_f32;
    gemm_tn_f32 = avx2::gemm_tn_f32;
    gemm_nn_f64 = avx2::gemm_nn_f64;
    gemm_nt_f64 = avx2::gemm_nt_f64;
    gemm_tn_f64 = avx2::gemm_tn_f64;
    dot_f32 = avx2::dot_f32;
    dot_f64 = avx2::dot_f64;
    axpy_f32 = avx2::axpy_f32;
    axpy_f64 = avx2::axpy_f64;
    g_backend = "avx2";
}
#endif

struct AutoBind {
    AutoBind() {
#if defined(__x86_64__) || defined(_M_X64)
        if (cpu_has_avx2()) {
            bind_avx2();
            return;
        }
#endif
        bind_scalar();
    }
};

AutoBind g_autobind;

} // namespace

void (*gemm_nn_f32)(float*, const float*, const float*, size_t, size_t, size_t) = nullptr;
void (*gemm_nt_f32)(float*, const float*, const float*, size_t, size_t, size_t) = nullptr;
void (*gemm_tn_f32)(float*, const float*, const float*, size_t, size_t, size_t) = nullptr;
void (*gemm_nn_f64)(double*, const double*, const double*, size_t, size_t, size_t) = nullptr;
void (*gemm_nt_f64)(double*, const double*, const double*, size_t, size_t, size_t) = nullptr;
void (*gemm_tn_f64)(double*, const double*, const double*, size_t, size_t, size_t) = nullptr;
float (*dot_f32)(const float*, const float*, size_t) = nullptr;
double (*dot_f64)(const double*, const double*, size_t) = nullptr;
void (*axpy_f32)(float*, float, const float*, size_t) = nullptr;
void (*axpy_f64)(double*, double, const double*, size_t) = nullptr;

const char* active_backend() {
    if (g_backend == nullptr) {
        AutoBind rebind;
        (void)rebind;
    }
    return g_backend;
}

void select_backend(const char* name) {
    if (std::strcmp(name, "scalar") == 0) {
        bind_scalar();
        return;
    }
#if defined(__x86_64__) || defined(_M_X64)
    if (std::strcmp(name, "avx2") == 0) {
        if (!cpu_has_avx2()) {
            throw std::runtime_error("avx2 backend requested but CPU lacks AVX2/FMA");
        }
        bind_avx2();
        return;
    }
#endif
    throw std::runtime_error(std::string("unknown kernel backend: ") + name);
}

} // namespace griddiff::kernels
