#pragma once

#include <optional>

#include "mhla/matrix.hpp"
#include "mhla/mixing.hpp"
#include "mhla/partition.hpp"

namespace mhla {

/// Normalizer values with magnitude below this are reported as degenerate
/// instead of being smoothed away.
inline constexpr double kNormalizerFloor = 1e-30;

/// Shared configuration for the linear-attention family. partition and
/// coefficients are only consulted by the multi-head paths.
struct AttentionConfig {
    FeatureMap feature_map = FeatureMap::EluPlusOne;
    bool normalize = true;
    std::optional<BlockPartition> partition;
    std::optional<CoefficientMatrix> coefficients;
};

/// Softmax attention oracle: row_softmax(Q K^T / sqrt(d)) V. Materializes the
/// N x N score matrix, so it exists for testing and diagnostics only.
Matrix softmax_attention(const Matrix& q, const Matrix& k, const Matrix& v);

/// Global kernelized linear attention via the two-pass summary form:
/// Y_i = phi(Q_i) G / (phi(Q_i) z) with G = sum_j phi(K_j)^T V_j. Never forms
/// the N x N matrix. Throws on degenerate normalizers, naming the row.
Matrix linear_attention(const Matrix& q, const Matrix& k, const Matrix& v,
                        const AttentionConfig& cfg);

/// Multi-head linear attention: local summaries per block, mixed per query
/// block by the coefficient matrix, then one GEMM per block of queries.
/// Requires a non-causal coefficient matrix and a partition covering N.
Matrix mhla_forward(const Matrix& q, const Matrix& k, const Matrix& v,
                    const AttentionConfig& cfg);

/// Token-level expansion of the same computation:
/// y_t = sum_s m(i(t), b(s)) (q_t . k_s) v_s. O(N^2 d); the correctness
/// oracle for mhla_forward.
Matrix mhla_token_expansion(const Matrix& q, const Matrix& k, const Matrix& v,
                            const AttentionConfig& cfg);

namespace detail {

/// Shape and config validation shared with the causal engine and diagnostics.
void check_qkv(const Matrix& q, const Matrix& k, const Matrix& v);
void check_normalize_map(const AttentionConfig& cfg);
const BlockPartition& require_partition(const AttentionConfig& cfg, std::size_t seq_len);
const CoefficientMatrix& require_coefficients(const AttentionConfig& cfg,
                                              const BlockPartition& partition);
[[noreturn]] void throw_degenerate_normalizer(const char* op, std::size_t row, double value);

}  // namespace detail

}  // namespace mhla
