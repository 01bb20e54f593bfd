#pragma once
#include "griddiff/kernels.hpp"

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace griddiff {

/// Dense row-major tensor. Plain storage; all math goes through the kernel
/// layer or explicit loops.
template <class Real>
struct Tensor {
    std::vector<size_t> dims;
    std::vector<Real> data;

    Tensor() = default;
    explicit Tensor(std::vector<size_t> d) : dims(std::move(d)) {
        data.assign(count(), Real(0));
    }

    size_t count() const {
        size_t n = 1;
        for (size_t d : dims) {
            n *= d;
        }
        return dims.empty() ? 0 : n;
    }

    size_t rows() const { return dims.empty() ? 0 : dims[0]; }
    size_t cols() const { return dims.size() < 2 ? 1 : dims[1]; }

    Real* ptr() { return data.data(); }
    const Real* ptr() const { return data.data(); }
    Real* row(size_t i) { return data.data() + i * cols(); }
    const Real* row(size_t i) const { return data.data() + i * cols(); }

    void zero() { std::fill(data.begin(), data.end(), Real(0)); }

    bool same_shape(const Tensor& o) const { return dims == o.dims; }
};

// y = softmax(x), numerically stabilized; returns nothing, operates on a row.
template <class Real>
inline void softmax_row(Real* x, size_t n) {
    Real mx = x[0];
    for (size_t i = 1; i < n; ++i) {
        if (x[i] > mx) {
            mx = x[i];
        }
    }
    Real sum = 0;
    for (size_t i = 0; i < n; ++i) {
        x[i] = std::exp(x[i] - mx);
        sum += x[i];
    }
    const Real inv = Real(1) / sum;
    for (size_t i = 0; i < n; ++i) {
        x[i] *= inv;
    }
}

// Exact GELU: x * Phi(x).
template <class Real>
inline Real gelu(Real x) {
    return Real(0.5) * x * (Real(1) + std::erf(x * Real(0.7071067811865476)));
}

// d/dx GELU = Phi(x) + x * phi(x).
template <class Real>
inline Real gelu_grad(Real x) {
    const Real phi = Real(0.3989422804014327) * std::exp(Real(-0.5) * x * x);
    const Real cdf = Real(0.5) * (Real(1) + std::erf(x * Real(0.7071067811865476)));
    return cdf + x * phi;
}

inline std::string shape_str(const std::vector<size_t>& dims) {
    std::string s = "[";
    for (size_t i = 0; i < dims.size(); ++i) {
        if (i) {
            s += ",";
        }
        s += std::to_string(dims[i]);
    }
    return s + "]";
}

} // namespace griddiff
