#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <unordered_map>
#include <vector>

#include "vap/common.hpp"

namespace vap {

/// A named parameter tensor. Parameters are stored as float32 (the on-disk
/// format); all arithmetic runs in double.
struct Tensor {
    std::string name;
    std::vector<std::uint32_t> dims;
    std::vector<float> data;

    std::size_t numel() const {
        std::size_t n = 1;
        for (auto d : dims) n *= d;
        return n;
    }
};

namespace nn {

/// y = W x  (W row-major [rows x cols])
inline void matvec(const float* w, int rows, int cols, const double* x, double* y) {
    for (int r = 0; r < rows; ++r) {
        const float* row = w + static_cast<std::size_t>(r) * cols;
        double acc = 0.0;
        for (int c = 0; c < cols; ++c) acc += double(row[c]) * x[c];
        y[r] = acc;
    }
}

/// y += W x
inline void matvec_acc(const float* w, int rows, int cols, const double* x,
                       double* y) {
    for (int r = 0; r < rows; ++r) {
        const float* row = w + static_cast<std::size_t>(r) * cols;
        double acc = 0.0;
        for (int c = 0; c < cols; ++c) acc += double(row[c]) * x[c];
        y[r] += acc;
    }
}

/// y = W x + b
inline void affine(const float* w, const float* b, int rows, int cols,
                   const double* x, double* y) {
    matvec(w, rows, cols, x, y);
    for (int r = 0; r < rows; ++r) y[r] += double(b[r]);
}

/// dx += W^T dy
inline void matvec_transpose_acc(const float* w, int rows, int cols,
                                 const double* dy, double* dx) {
    for (int r = 0; r < rows; ++r) {
        const float* row = w + static_cast<std::size_t>(r) * cols;
        const double d = dy[r];
        for (int c = 0; c < cols; ++c) dx[c] += double(row[c]) * d;
    }
}

/// gW += dy x^T
inline void outer_acc(double* gw, int rows, int cols, const double* dy,
                      const double* x) {
    for (int r = 0; r < rows; ++r) {
        double* row = gw + static_cast<std::size_t>(r) * cols;
        const double d = dy[r];
        for (int c = 0; c < cols; ++c) row[c] += d * x[c];
    }
}

inline void acc(double* g, const double* d, int n) {
    for (int i = 0; i < n; ++i) g[i] += d[i];
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline double gelu(double x) {
    return 0.5 * x * (1.0 + std::erf(x * 0.7071067811865475244));
}

inline double gelu_grad(double x) {
    const double phi_big = 0.5 * (1.0 + std::erf(x * 0.7071067811865475244));
    const double phi_small = std::exp(-0.5 * x * x) * 0.3989422804014326779;
    return phi_big + x * phi_small;
}

inline void softmax_inplace(double* v, int n) {
    double m = v[0];
    for (int i = 1; i < n; ++i)
        if (v[i] > m) m = v[i];
    double z = 0.0;
    for (int i = 0; i < n; ++i) {
        v[i] = std::exp(v[i] - m);
        z += v[i];
    }
    for (int i = 0; i < n; ++i) v[i] /= z;
}

inline constexpr double kLnEps = 1e-5;

/// out = g * (x - mean) * rstd + b; also records mean and rstd.
inline void layer_norm(const double* x, int n, const float* g, const float* b,
                       double* out, double* mean_out, double* rstd_out) {
    double mean = 0.0;
    for (int i = 0; i < n; ++i) mean += x[i];
    mean /= n;
    double var = 0.0;
    for (int i = 0; i < n; ++i) {
        const double c = x[i] - mean;
        var += c * c;
    }
    var /= n;
    const double rstd = 1.0 / std::sqrt(var + kLnEps);
    for (int i = 0; i < n; ++i)
        out[i] = double(g[i]) * (x[i] - mean) * rstd + double(b[i]);
    *mean_out = mean;
    *rstd_out = rstd;
}

/// dx += layer-norm input gradient; dg/db accumulate parameter gradients.
inline void layer_norm_backward(const double* x, int n, const float* g,
                                double mean, double rstd, const double* dy,
                                double* dx, double* dg, double* db) {
    double sum_gdy = 0.0;
    double sum_gdy_xhat = 0.0;
    for (int i = 0; i < n; ++i) {
        const double xhat = (x[i] - mean) * rstd;
        const double gdy = double(g[i]) * dy[i];
        sum_gdy += gdy;
        sum_gdy_xhat += gdy * xhat;
        dg[i] += dy[i] * xhat;
        db[i] += dy[i];
    }
    const double inv_n = 1.0 / n;
    for (int i = 0; i < n; ++i) {
        const double xhat = (x[i] - mean) * rstd;
        const double gdy = double(g[i]) * dy[i];
        dx[i] += rstd * (gdy - inv_n * sum_gdy - xhat * inv_n * sum_gdy_xhat);
    }
}

} // namespace nn
} // namespace vap
