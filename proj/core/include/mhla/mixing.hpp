#pragma once

#include <cstddef>
#include <map>
#include <string>

#include "mhla/matrix.hpp"
#include "mhla/partition.hpp"

namespace mhla {

/// Clip bound for coefficient updates: the open interval (0, 1) is realized
/// as the closed clamp [kClipEpsilon, 1 - kClipEpsilon].
inline constexpr double kClipEpsilon = 1e-6;

/// M x M mixing weights; row i tells how query block i combines the M local
/// key-value summaries. Causal variants are lower-triangular. Construction
/// checks finiteness and the causal mask; locality_init, clip_coefficients,
/// and the training loop keep entries inside [0, 1] across updates.
class CoefficientMatrix {
public:
    CoefficientMatrix(Matrix weights, bool causal = false);

    const Matrix& weights() const noexcept { return weights_; }
    bool causal() const noexcept { return causal_; }
    std::size_t size() const noexcept { return weights_.rows(); }

    double operator()(std::size_t i, std::size_t b) const noexcept { return weights_(i, b); }

    std::map<std::string, Matrix> to_tensors() const;
    static CoefficientMatrix from_tensors(const std::map<std::string, Matrix>& tensors);

private:
    Matrix weights_;
    bool causal_ = false;
};

/// Locality-biased initialization: row i is proportional to
/// 1 - dist(i, j) / max_k dist(i, k) (block-grid Euclidean distance), plus an
/// optional floor added before normalization, then normalized to row-sum 1.
/// The self coefficient is always the row maximum.
CoefficientMatrix locality_init(const BlockPartition& partition, double init_floor = 0.0);

/// Clamp every non-masked entry to [kClipEpsilon, 1 - kClipEpsilon];
/// causal-mask zeros are preserved.
CoefficientMatrix clip_coefficients(const CoefficientMatrix& c);

/// Zero all entries above the diagonal and mark the matrix causal.
CoefficientMatrix causal_mask(const CoefficientMatrix& c);

/// The M local key-value summaries S_b (d x d each) and their normalizers
/// z_b (row b of a M x d matrix).
struct SummaryStack {
    std::vector<Matrix> summaries;
    Matrix normalizers;

    std::size_t size() const noexcept { return summaries.size(); }
    std::size_t dim() const noexcept { return normalizers.cols(); }
};

/// Per-block summaries S_b = sum_{j in b} k_feat_j v_j^T and
/// z_b = sum_{j in b} k_feat_j. Independent of token order inside a block.
SummaryStack compute_local_summaries(const Matrix& k_feat, const Matrix& v,
                                     const BlockPartition& partition);

/// Mixed stack: entry i = sum_b c(i, b) * stack[b], computed as a single GEMM
/// between the coefficient matrix and the flattened stack.
SummaryStack mix_summaries(const CoefficientMatrix& c, const SummaryStack& stack);

}  // namespace mhla
