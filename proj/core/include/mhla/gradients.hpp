#pragma once

#include <functional>
#include <span>
#include <vector>

#include "mhla/attention.hpp"

namespace mhla {

/// Gradients of sum(<upstream, Y>) with respect to the forward inputs.
/// Shapes mirror the inputs; causal coefficient gradients are zero above the
/// diagonal.
struct GradientBundle {
    Matrix d_q;
    Matrix d_k;
    Matrix d_v;
    Matrix d_coefficients;
};

/// Analytic backward pass. Differentiates mhla_forward for non-causal
/// configurations and chunkwise_causal_forward for causal ones, including the
/// quotient rule through the normalizers and the feature-map chain rule.
GradientBundle mhla_backward(const Matrix& q, const Matrix& k, const Matrix& v,
                             const AttentionConfig& cfg, const Matrix& upstream);

/// Central finite differences (f(x+h e_i) - f(x-h e_i)) / 2h per coordinate.
std::vector<double> finite_diff_grad(const std::function<double(std::span<const double>)>& fn,
                                     std::span<const double> x, double h);

struct TrainRecord {
    std::size_t step;
    double loss;
    double coefficient_norm;
};

struct DistillResult {
    CoefficientMatrix coefficients;
    std::vector<TrainRecord> trace;
};

/// Plain gradient descent on the coefficient matrix only (q, k, v frozen)
/// against a mean-squared-error target, with clipping after every update.
/// trace[s].loss is the MSE before update s; the returned coefficients are
/// the post-training state.
DistillResult distill_coefficients(const Matrix& q, const Matrix& k, const Matrix& v,
                                   const Matrix& target, const AttentionConfig& cfg,
                                   std::size_t steps, double lr);

/// Forward for whichever variant the config selects (bidirectional or causal).
Matrix mhla_forward_any(const Matrix& q, const Matrix& k, const Matrix& v,
                        const AttentionConfig& cfg);

}  // namespace mhla
