#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "griddiff/kernels.hpp"
#include "griddiff/rng.hpp"

#include <cstring>
#include <string>
#include <vector>

using namespace griddiff;

namespace {

template <class Real>
std::vector<Real> random_vec(Rng& rng, size_t n) {
    std::vector<Real> v(n);
    for (auto& x : v) {
        x = static_cast<Real>(rng.uniform() * 2.0 - 1.0);
    }
    return v;
}

#if defined(__x86_64__) || defined(_M_X64)
bool have_avx2() {
    return std::string(kernels::active_backend()) == "avx2";
}
#endif

} // namespace

TEST_CASE("scalar gemm_nn matches a naive triple loop") {
    Rng rng(1);
    const size_t m = 5, k = 7, n = 9;
    auto a = random_vec<float>(rng, m * k);
    auto b = random_vec<float>(rng, k * n);
    std::vector<float> c(m * n, 0.5f), ref(m * n, 0.5f);
    kernels::scalar::gemm_nn_f32(c.data(), a.data(), b.data(), m, k, n);
    for (size_t i = 0; i < m; ++i) {
        for (size_t j = 0; j < n; ++j) {
            for (size_t p = 0; p < k; ++p) {
                ref[i * n + j] += a[i * k + p] * b[p * n + j];
            }
        }
    }
    for (size_t i = 0; i < m * n; ++i) {
        CHECK(c[i] == doctest::Approx(ref[i]).epsilon(1e-5));
    }
}

TEST_CASE("gemm_nt and gemm_tn agree with transposed gemm_nn") {
    Rng rng(2);
    const size_t m = 6, k = 11, n = 4;
    auto a = random_vec<double>(rng, m * k);
    auto b = random_vec<double>(rng, n * k); // logical (n x k), used transposed
    std::vector<double> bt(k * n);
    for (size_t i = 0; i < n; ++i) {
        for (size_t j = 0; j < k; ++j) {
            bt[j * n + i] = b[i * k + j];
        }
    }
    std::vector<double> c1(m * n, 0.0), c2(m * n, 0.0);
    kernels::scalar::gemm_nt_f64(c1.data(), a.data(), b.data(), m, k, n);
    kernels::scalar::gemm_nn_f64(c2.data(), a.data(), bt.data(), m, k, n);
    for (size_t i = 0; i < m * n; ++i) {
        CHECK(c1[i] == doctest::Approx(c2[i]).epsilon(1e-12));
    }

    // tn: C(m x n) += A(k x m)^T B(k x n)
    auto a2 = random_vec<double>(rng, k * m);
    std::vector<double> a2t(m * k);
    for (size_t i = 0; i < k; ++i) {
        for (size_t j = 0; j < m; ++j) {
            a2t[j * k + i] = a2[i * m + j];
        }
    }
    auto b2 = random_vec<double>(rng, k * n);
    std::vector<double> c3(m * n, 0.0), c4(m * n, 0.0);
    kernels::scalar::gemm_tn_f64(c3.data(), a2.data(), b2.data(), m, k, n);
    kernels::scalar::gemm_nn_f64(c4.data(), a2t.data(), b2.data(), m, k, n);
    for (size_t i = 0; i < m * n; ++i) {
        CHECK(c3[i] == doctest::Approx(c4[i]).epsilon(1e-12));
    }
}

#if defined(__x86_64__) || defined(_M_X64)
TEST_CASE("avx2 kernels match scalar over shape sweep") {
    if (!have_avx2()) {
        return; // host without AVX2: dispatch already fell back to scalar
    }
    Rng rng(3);
    const size_t shapes[][3] = {{1, 1, 1},   {2, 3, 5},   {4, 16, 16}, {5, 17, 33},
                                {7, 64, 1},  {1, 128, 9}, {8, 96, 40}, {13, 31, 130},
                                {32, 128, 512}};
    for (const auto& s : shapes) {
        const size_t m = s[0], k = s[1], n = s[2];
        auto af = random_vec<float>(rng, m * k);
        auto bf = random_vec<float>(rng, k * n);
        auto bnf = random_vec<float>(rng, n * k);
        auto akm = random_vec<float>(rng, k * m);

        std::vector<float> c_ref(m * n, 0.25f), c_simd(c_ref);
        kernels::scalar::gemm_nn_f32(c_ref.data(), af.data(), bf.data(), m, k, n);
        kernels::avx2::gemm_nn_f32(c_simd.data(), af.data(), bf.data(), m, k, n);
        double max_mag = 1.0;
        for (float x : c_ref) {
            max_mag = std::max(max_mag, static_cast<double>(std::abs(x)));
        }
        for (size_t i = 0; i < m * n; ++i) {
            CHECK(std::abs(c_ref[i] - c_simd[i]) <= 1e-5 * max_mag);
        }

        std::fill(c_ref.begin(), c_ref.end(), -0.5f);
        c_simd = c_ref;
        kernels::scalar::gemm_nt_f32(c_ref.data(), af.data(), bnf.data(), m, k, n);
        kernels::avx2::gemm_nt_f32(c_simd.data(), af.data(), bnf.data(), m, k, n);
        for (size_t i = 0; i < m * n; ++i) {
            CHECK(std::abs(c_ref[i] - c_simd[i]) <= 1e-5 * max_mag);
        }

        std::fill(c_ref.begin(), c_ref.end(), 0.0f);
        c_simd = c_ref;
        kernels::scalar::gemm_tn_f32(c_ref.data(), akm.data(), bf.data(), m, k, n);
        kernels::avx2::gemm_tn_f32(c_simd.data(), akm.data(), bf.data(), m, k, n);
        for (size_t i = 0; i < m * n; ++i) {
            CHECK(std::abs(c_ref[i] - c_simd[i]) <= 1e-5 * max_mag);
        }

        auto ad = random_vec<double>(rng, m * k);
        auto bd = random_vec<double>(rng, k * n);
        std::vector<double> d_ref(m * n, 0.0), d_simd(m * n, 0.0);
        kernels::scalar::gemm_nn_f64(d_ref.data(), ad.data(), bd.data(), m, k, n);
        kernels::avx2::gemm_nn_f64(d_simd.data(), ad.data(), bd.data(), m, k, n);
        for (size_t i = 0; i < m * n; ++i) {
            CHECK(d_ref[i] == doctest::Approx(d_simd[i]).epsilon(1e-12));
        }
    }
}

TEST_CASE("avx2 dot and axpy match scalar including ragged tails") {
    if (!have_avx2()) {
        return;
    }
    Rng rng(4);
    for (size_t n : {0, 1, 3, 7, 8, 9, 15, 16, 31, 64, 100, 257}) {
        auto a = random_vec<float>(rng, n);
        auto b = random_vec<float>(rng, n);
        const float d_ref = kernels::scalar::dot_f32(a.data(), b.data(), n);
        const float d_simd = kernels::avx2::dot_f32(a.data(), b.data(), n);
        CHECK(std::abs(d_ref - d_simd) <= 1e-4f * (1.0f + std::abs(d_ref)));

        auto y1 = random_vec<float>(rng, n);
        auto y2 = y1;
        kernels::scalar::axpy_f32(y1.data(), 0.37f, a.data(), n);
        kernels::avx2::axpy_f32(y2.data(), 0.37f, a.data(), n);
        for (size_t i = 0; i < n; ++i) {
            CHECK(y1[i] == doctest::Approx(y2[i]).epsilon(1e-6));
        }
    }
}
#endif

TEST_CASE("backend selection") {
    const std::string original = kernels::active_backend();
    kernels::select_backend("scalar");
    CHECK(std::string(kernels::active_backend()) == "scalar");
    CHECK_THROWS(kernels::select_backend("neon"));
    kernels::select_backend(original.c_str());
    CHECK(std::string(kernels::active_backend()) == original);
}
