#include "mhla/attention.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace mhla {

namespace detail {

void row_softmax_inplace(Matrix& m, double scale);  // matrix.cpp

void check_qkv(const Matrix& q, const Matrix& k, const Matrix& v) {
    if (!q.same_shape(k) || !q.same_shape(v)) {
        throw std::invalid_argument("attention: q " + q.shape_string() + ", k " +
                                    k.shape_string() + ", v " + v.shape_string() +
                                    " must all be N x d");
    }
    if (q.rows() == 0 || q.cols() == 0) {
        throw std::invalid_argument("attention: empty input");
    }
}

void check_normalize_map(const AttentionConfig& cfg) {
    if (cfg.normalize && !is_nonnegative_map(cfg.feature_map)) {
        throw std::invalid_argument(
            "attention: normalize=true requires a nonnegative feature map "
            "(relu or elu-plus-one), got identity");
    }
}

const BlockPartition& require_partition(const AttentionConfig& cfg, std::size_t seq_len) {
    if (!cfg.partition) {
        throw std::invalid_argument("attention: config carries no partition");
    }
    if (cfg.partition->seq_len() != seq_len) {
        throw std::invalid_argument("attention: partition covers " +
                                    std::to_string(cfg.partition->seq_len()) +
                                    " tokens but inputs have " + std::to_string(seq_len));
    }
    return *cfg.partition;
}

const CoefficientMatrix& require_coefficients(const AttentionConfig& cfg,
                                              const BlockPartition& partition) {
    if (!cfg.coefficients) {
        throw std::invalid_argument("attention: config carries no coefficient matrix");
    }
    if (cfg.coefficients->size() != partition.num_blocks()) {
        throw std::invalid_argument(
            "attention: coefficient matrix of size " + std::to_string(cfg.coefficients->size()) +
            " does not match partition with " + std::to_string(partition.num_blocks()) +
            " blocks");
    }
    return *cfg.coefficients;
}

[[noreturn]] void throw_degenerate_normalizer(const char* op, std::size_t row, double value) {
    throw std::runtime_error(std::string(op) + ": degenerate normalizer at row " +
                             std::to_string(row) + " (|value| = " + std::to_string(value) +
                             " < 1e-30); check the feature map / normalize combination");
}

}  // namespace detail

Matrix softmax_attention(const Matrix& q, const Matrix& k, const Matrix& v) {
    detail::check_qkv(q, k, v);
    Matrix scores = gemm(q, k, false, true);
    detail::row_softmax_inplace(scores, 1.0 / std::sqrt(static_cast<double>(q.cols())));
    return gemm(scores, v);
}

Matrix linear_attention(const Matrix& q, const Matrix& k, const Matrix& v,
                        const AttentionConfig& cfg) {
    detail::check_qkv(q, k, v);
    detail::check_normalize_map(cfg);
    const Matrix q_feat = apply_feature_map(q, cfg.feature_map);
    const Matrix k_feat = apply_feature_map(k, cfg.feature_map);
    const Matrix summary = gemm(k_feat, v, /*transpose_a=*/true);  // d x d
    Matrix out = gemm(q_feat, summary);
    if (cfg.normalize) {
        const std::size_t d = q.cols();
        std::vector<double> z(d, 0.0);
        for (std::size_t t = 0; t < k_feat.rows(); ++t) {
            const double* kt = k_feat.row(t);
            for (std::size_t a = 0; a < d; ++a) z[a] += kt[a];
        }
        for (std::size_t t = 0; t < out.rows(); ++t) {
            const double* qt = q_feat.row(t);
            double den = 0.0;
            for (std::size_t a = 0; a < d; ++a) den += qt[a] * z[a];
            if (std::abs(den) < kNormalizerFloor) {
                detail::throw_degenerate_normalizer("linear_attention", t, std::abs(den));
            }
            double* yt = out.row(t);
            const double inv = 1.0 / den;
            for (std::size_t c = 0; c < d; ++c) yt[c] *= inv;
        }
    }
    return out;
}

Matrix mhla_forward(const Matrix& q, const Matrix& k, const Matrix& v,
                    const AttentionConfig& cfg) {
    detail::check_qkv(q, k, v);
    detail::check_normalize_map(cfg);
    const BlockPartition& partition = detail::require_partition(cfg, q.rows());
    const CoefficientMatrix& coeffs = detail::require_coefficients(cfg, partition);
    if (coeffs.causal()) {
        throw std::invalid_argument(
            "mhla_forward: coefficient matrix is causal; use chunkwise_causal_forward");
    }
    const std::size_t d = q.cols();
    const Matrix q_feat = apply_feature_map(q, cfg.feature_map);
    const Matrix k_feat = apply_feature_map(k, cfg.feature_map);
    const SummaryStack mixed = mix_summaries(coeffs, compute_local_summaries(k_feat, v, partition));

    Matrix out(q.rows(), d);
    for (std::size_t b = 0; b < partition.num_blocks(); ++b) {
        const auto& tokens = partition.tokens_of(b);
        // One GEMM per query block against its mixed summary.
        Matrix q_block(tokens.size(), d);
        for (std::size_t r = 0; r < tokens.size(); ++r) {
            std::copy(q_feat.row(tokens[r]), q_feat.row(tokens[r]) + d, q_block.row(r));
        }
        const Matrix y_block = gemm(q_block, mixed.summaries[b]);
        const double* z = mixed.normalizers.row(b);
        for (std::size_t r = 0; r < tokens.size(); ++r) {
            const std::size_t t = tokens[r];
            double* yt = out.row(t);
            std::copy(y_block.row(r), y_block.row(r) + d, yt);
            if (cfg.normalize) {
                const double* qt = q_feat.row(t);
                double den = 0.0;
                for (std::size_t a = 0; a < d; ++a) den += qt[a] * z[a];
                if (std::abs(den) < kNormalizerFloor) {
                    detail::throw_degenerate_normalizer("mhla_forward", t, std::abs(den));
                }
                const double inv = 1.0 / den;
                for (std::size_t c = 0; c < d; ++c) yt[c] *= inv;
            }
        }
    }
    return out;
}

Matrix mhla_token_expansion(const Matrix& q, const Matrix& k, const Matrix& v,
                            const AttentionConfig& cfg) {
    detail::check_qkv(q, k, v);
    detail::check_normalize_map(cfg);
    const BlockPartition& partition = detail::require_partition(cfg, q.rows());
    const CoefficientMatrix& coeffs = detail::require_coefficients(cfg, partition);
    if (coeffs.causal()) {
        throw std::invalid_argument(
            "mhla_token_expansion: coefficient matrix is causal; use naive_causal_oracle");
    }
    const std::size_t n = q.rows(), d = q.cols();
    if (n > 4096) {
        throw std::invalid_argument(
            "mhla_token_expansion: N = " + std::to_string(n) +
            " exceeds the 4096-token cap of the O(N^2) oracle");
    }
    const Matrix q_feat = apply_feature_map(q, cfg.feature_map);
    const Matrix k_feat = apply_feature_map(k, cfg.feature_map);

    Matrix out(n, d);
    for (std::size_t t = 0; t < n; ++t) {
        const std::size_t i = partition.block_of(t);
        const double* qt = q_feat.row(t);
        double* yt = out.row(t);
        double den = 0.0;
        for (std::size_t s = 0; s < n; ++s) {
            const double* ks = k_feat.row(s);
            double dot = 0.0;
            for (std::size_t a = 0; a < d; ++a) dot += qt[a] * ks[a];
            const double w = coeffs(i, partition.block_of(s)) * dot;
            den += w;
            const double* vs = v.row(s);
            for (std::size_t c = 0; c < d; ++c) yt[c] += w * vs[c];
        }
        if (cfg.normalize) {
            if (std::abs(den) < kNormalizerFloor) {
                detail::throw_degenerate_normalizer("mhla_token_expansion", t, std::abs(den));
            }
            const double inv = 1.0 / den;
            for (std::size_t c = 0; c < d; ++c) yt[c] *= inv;
        }
    }
    return out;
}

}  // namespace mhla
