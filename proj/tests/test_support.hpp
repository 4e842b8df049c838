#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "mhla/attention.hpp"
#include "mhla/matrix.hpp"
#include "mhla/mixing.hpp"
#include "mhla/partition.hpp"

// Test-side oracles, kept independent of the library's summary/GEMM paths:
// everything here is a direct per-token loop over the defining formulas.
namespace oracle {

inline double phi(double x, mhla::FeatureMap map) {
    switch (map) {
        case mhla::FeatureMap::Identity: return x;
        case mhla::FeatureMap::Relu: return x > 0.0 ? x : 0.0;
        case mhla::FeatureMap::EluPlusOne: return x > 0.0 ? x + 1.0 : std::exp(x);
    }
    return x;
}

// Generic attention with the exponential kernel, one query at a time.
inline mhla::Matrix softmax_attention(const mhla::Matrix& q, const mhla::Matrix& k,
                                      const mhla::Matrix& v) {
    const std::size_t n = q.rows(), d = q.cols();
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    mhla::Matrix out(n, d);
    for (std::size_t t = 0; t < n; ++t) {
        std::vector<double> sim(n);
        double total = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            double dot = 0.0;
            for (std::size_t a = 0; a < d; ++a) dot += q(t, a) * k(j, a);
            sim[j] = std::exp(dot * scale);
            total += sim[j];
        }
        for (std::size_t j = 0; j < n; ++j) {
            for (std::size_t c = 0; c < d; ++c) out(t, c) += sim[j] / total * v(j, c);
        }
    }
    return out;
}

// Kernelized attention evaluated per token pair, no shared summary.
inline mhla::Matrix linear_attention(const mhla::Matrix& q, const mhla::Matrix& k,
                                     const mhla::Matrix& v, mhla::FeatureMap map,
                                     bool normalize) {
    const std::size_t n = q.rows(), d = q.cols();
    mhla::Matrix out(n, d);
    for (std::size_t t = 0; t < n; ++t) {
        double den = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            double dot = 0.0;
            for (std::size_t a = 0; a < d; ++a) dot += phi(q(t, a), map) * phi(k(j, a), map);
            den += dot;
            for (std::size_t c = 0; c < d; ++c) out(t, c) += dot * v(j, c);
        }
        if (normalize) {
            for (std::size_t c = 0; c < d; ++c) out(t, c) /= den;
        }
    }
    return out;
}

// Block-weighted kernelized attention evaluated per token pair.
inline mhla::Matrix mhla_attention(const mhla::Matrix& q, const mhla::Matrix& k,
                                   const mhla::Matrix& v, const mhla::BlockPartition& partition,
                                   const mhla::Matrix& coeffs, mhla::FeatureMap map,
                                   bool normalize, bool causal = false) {
    const std::size_t n = q.rows(), d = q.cols();
    mhla::Matrix out(n, d);
    for (std::size_t t = 0; t < n; ++t) {
        const std::size_t i = partition.block_of(t);
        double den = 0.0;
        const std::size_t last = causal ? t : n - 1;
        for (std::size_t j = 0; j <= last; ++j) {
            double dot = 0.0;
            for (std::size_t a = 0; a < d; ++a) dot += phi(q(t, a), map) * phi(k(j, a), map);
            const double w = coeffs(i, partition.block_of(j)) * dot;
            den += w;
            for (std::size_t c = 0; c < d; ++c) out(t, c) += w * v(j, c);
        }
        if (normalize) {
            for (std::size_t c = 0; c < d; ++c) out(t, c) /= den;
        }
    }
    return out;
}

// Row-stochastic positive matrix for mixing tests.
inline mhla::Matrix random_row_stochastic(std::mt19937_64& engine, std::size_t m) {
    std::uniform_real_distribution<double> uniform(0.05, 1.0);
    mhla::Matrix w(m, m);
    for (std::size_t i = 0; i < m; ++i) {
        double sum = 0.0;
        for (std::size_t j = 0; j < m; ++j) {
            w(i, j) = uniform(engine);
            sum += w(i, j);
        }
        for (std::size_t j = 0; j < m; ++j) w(i, j) /= sum;
    }
    return w;
}

// Orthonormal columns via modified Gram-Schmidt on Gaussian draws;
// independent of the Jacobi path it helps validate.
inline mhla::Matrix random_orthonormal(std::mt19937_64& engine, std::size_t rows,
                                       std::size_t cols) {
    std::normal_distribution<double> normal(0.0, 1.0);
    mhla::Matrix q(rows, cols);
    for (std::size_t j = 0; j < cols; ++j) {
        std::vector<double> col(rows);
        for (double& x : col) x = normal(engine);
        for (std::size_t p = 0; p < j; ++p) {
            double dot = 0.0;
            for (std::size_t i = 0; i < rows; ++i) dot += col[i] * q(i, p);
            for (std::size_t i = 0; i < rows; ++i) col[i] -= dot * q(i, p);
        }
        double norm = 0.0;
        for (const double x : col) norm += x * x;
        norm = std::sqrt(norm);
        for (std::size_t i = 0; i < rows; ++i) q(i, j) = col[i] / norm;
    }
    return q;
}

inline double rel_max_diff(const mhla::Matrix& a, const mhla::Matrix& b) {
    const double scale = std::max({mhla::max_abs(a), mhla::max_abs(b), 1e-12});
    return mhla::max_abs_diff(a, b) / scale;
}

}  // namespace oracle
