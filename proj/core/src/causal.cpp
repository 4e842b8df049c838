#include "mhla/causal.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mhla {

namespace {

struct CausalInputs {
    const BlockPartition* partition;
    const CoefficientMatrix* coefficients;
};

CausalInputs check_causal_config(const AttentionConfig& cfg, std::size_t seq_len,
                                 const char* op) {
    detail::check_normalize_map(cfg);
    const BlockPartition& partition = detail::require_partition(cfg, seq_len);
    if (partition.layout() != LayoutKind::Linear1D) {
        throw std::invalid_argument(std::string(op) +
                                    ": causal order is undefined on grid-2d partitions; "
                                    "use a linear-1d partition");
    }
    const CoefficientMatrix& coeffs = detail::require_coefficients(cfg, partition);
    if (!coeffs.causal()) {
        throw std::invalid_argument(std::string(op) +
                                    ": coefficient matrix must be causal (lower-triangular)");
    }
    return {&partition, &coeffs};
}

}  // namespace

Matrix chunkwise_causal_forward(const Matrix& q, const Matrix& k, const Matrix& v,
                                const AttentionConfig& cfg) {
    detail::check_qkv(q, k, v);
    const auto [partition, coeffs] = check_causal_config(cfg, q.rows(), "chunkwise_causal_forward");
    const std::size_t d = q.cols();
    const std::size_t m = partition->num_blocks();
    const Matrix q_feat = apply_feature_map(q, cfg.feature_map);
    const Matrix k_feat = apply_feature_map(k, cfg.feature_map);
    const SummaryStack stack = compute_local_summaries(k_feat, v, *partition);

    Matrix out(q.rows(), d);
    Matrix q_block, k_block, v_block;
    for (std::size_t i = 0; i < m; ++i) {
        const auto& tokens = partition->tokens_of(i);
        const std::size_t nb = tokens.size();
        const std::size_t first = tokens.front();

        // Mixed prefix over completed blocks, row-i coefficients.
        Matrix prefix(d, d);
        std::vector<double> prefix_z(d, 0.0);
        for (std::size_t b = 0; b < i; ++b) {
            const double w = (*coeffs)(i, b);
            const Matrix& s = stack.summaries[b];
            for (std::size_t e = 0; e < d * d; ++e) prefix.data()[e] += w * s.data()[e];
            const double* z = stack.normalizers.row(b);
            for (std::size_t a = 0; a < d; ++a) prefix_z[a] += w * z[a];
        }

        q_block = Matrix(nb, d);
        k_block = Matrix(nb, d);
        v_block = Matrix(nb, d);
        for (std::size_t r = 0; r < nb; ++r) {
            std::copy(q_feat.row(first + r), q_feat.row(first + r) + d, q_block.row(r));
            std::copy(k_feat.row(first + r), k_feat.row(first + r) + d, k_block.row(r));
            std::copy(v.row(first + r), v.row(first + r) + d, v_block.row(r));
        }

        // Intra-block scores, masked so a token attends to itself and earlier
        // tokens of its block only.
        Matrix intra = gemm(q_block, k_block, false, true);
        for (std::size_t r = 0; r < nb; ++r) {
            double* row = intra.row(r);
            for (std::size_t c = r + 1; c < nb; ++c) row[c] = 0.0;
        }
        const Matrix intra_out = gemm(intra, v_block);
        const Matrix prefix_out = gemm(q_block, prefix);

        const double self_w = (*coeffs)(i, i);
        for (std::size_t r = 0; r < nb; ++r) {
            const std::size_t t = first + r;
            double* yt = out.row(t);
            const double* po = prefix_out.row(r);
            const double* io = intra_out.row(r);
            for (std::size_t c = 0; c < d; ++c) yt[c] = po[c] + self_w * io[c];
            if (cfg.normalize) {
                const double* qt = q_block.row(r);
                double den = 0.0;
                for (std::size_t a = 0; a < d; ++a) den += qt[a] * prefix_z[a];
                double intra_den = 0.0;
                const double* srow = intra.row(r);
                for (std::size_t c = 0; c <= r; ++c) intra_den += srow[c];
                den += self_w * intra_den;
                if (std::abs(den) < kNormalizerFloor) {
                    detail::throw_degenerate_normalizer("chunkwise_causal_forward", t,
                                                        std::abs(den));
                }
                const double inv = 1.0 / den;
                for (std::size_t c = 0; c < d; ++c) yt[c] *= inv;
            }
        }
    }
    return out;
}

Matrix naive_causal_oracle(const Matrix& q, const Matrix& k, const Matrix& v,
                           const AttentionConfig& cfg) {
    detail::check_qkv(q, k, v);
    const auto [partition, coeffs] = check_causal_config(cfg, q.rows(), "naive_causal_oracle");
    const std::size_t n = q.rows(), d = q.cols();
    if (n > 4096) {
        throw std::invalid_argument("naive_causal_oracle: N = " + std::to_string(n) +
                                    " exceeds the 4096-token cap of the O(N^2) oracle");
    }
    const Matrix q_feat = apply_feature_map(q, cfg.feature_map);
    const Matrix k_feat = apply_feature_map(k, cfg.feature_map);

    Matrix out(n, d);
    for (std::size_t t = 0; t < n; ++t) {
        const std::size_t i = partition->block_of(t);
        const double* qt = q_feat.row(t);
        double* yt = out.row(t);
        double den = 0.0;
        for (std::size_t j = 0; j <= t; ++j) {
            const double* kj = k_feat.row(j);
            double dot = 0.0;
            for (std::size_t a = 0; a < d; ++a) dot += qt[a] * kj[a];
            const double w = (*coeffs)(i, partition->block_of(j)) * dot;
            den += w;
            const double* vj = v.row(j);
            for (std::size_t c = 0; c < d; ++c) yt[c] += w * vj[c];
        }
        if (cfg.normalize) {
            if (std::abs(den) < kNormalizerFloor) {
                detail::throw_degenerate_normalizer("naive_causal_oracle", t, std::abs(den));
            }
            const double inv = 1.0 / den;
            for (std::size_t c = 0; c < d; ++c) yt[c] *= inv;
        }
    }
    return out;
}

StreamState stream_init(const AttentionConfig& cfg) {
    if (!cfg.partition) {
        throw std::invalid_argument("stream_init: config carries no partition");
    }
    const auto [partition, coeffs] =
        check_causal_config(cfg, cfg.partition->seq_len(), "stream_init");
    StreamState state;
    state.cfg_ = cfg;
    state.block_size_ = partition->block_size(0);
    (void)coeffs;
    return state;
}

void StreamState::refresh_prefix() {
    const CoefficientMatrix& coeffs = *cfg_.coefficients;
    prefix_summary_ = Matrix(dim_, dim_);
    prefix_normalizer_.assign(dim_, 0.0);
    for (std::size_t b = 0; b < completed_summaries_.size(); ++b) {
        const double w = coeffs(block_index_, b);
        const Matrix& s = completed_summaries_[b];
        for (std::size_t e = 0; e < dim_ * dim_; ++e) prefix_summary_.data()[e] += w * s.data()[e];
        const std::vector<double>& z = completed_normalizers_[b];
        for (std::size_t a = 0; a < dim_; ++a) prefix_normalizer_[a] += w * z[a];
    }
}

std::vector<double> stream_step(StreamState& state, std::span<const double> q_t,
                                std::span<const double> k_t, std::span<const double> v_t) {
    const std::size_t m = state.cfg_.coefficients->size();
    if (state.block_index_ >= m) {
        throw std::invalid_argument(
            "stream_step: sequence exceeds the " + std::to_string(m) +
            " blocks the coefficient matrix supports");
    }
    if (q_t.size() != k_t.size() || q_t.size() != v_t.size() || q_t.empty()) {
        throw std::invalid_argument("stream_step: q, k, v must be nonempty length-d vectors");
    }
    if (state.dim_ == 0) {
        state.dim_ = q_t.size();
        state.current_summary_ = Matrix(state.dim_, state.dim_);
        state.current_normalizer_.assign(state.dim_, 0.0);
        state.prefix_summary_ = Matrix(state.dim_, state.dim_);
        state.prefix_normalizer_.assign(state.dim_, 0.0);
    } else if (q_t.size() != state.dim_) {
        throw std::invalid_argument("stream_step: dimension changed from " +
                                    std::to_string(state.dim_) + " to " +
                                    std::to_string(q_t.size()));
    }
    const std::size_t d = state.dim_;

    // Entering a block: mix the completed summaries once with row-i weights.
    if (state.tokens_in_block_ == 0) state.refresh_prefix();

    auto phi = [&](double x) {
        switch (state.cfg_.feature_map) {
            case FeatureMap::Identity: return x;
            case FeatureMap::Relu: return x > 0.0 ? x : 0.0;
            case FeatureMap::EluPlusOne: return x > 0.0 ? x + 1.0 : std::exp(x);
        }
        return x;
    };

    std::vector<double> q_feat(d), k_feat(d);
    for (std::size_t a = 0; a < d; ++a) {
        q_feat[a] = phi(q_t[a]);
        k_feat[a] = phi(k_t[a]);
    }

    for (std::size_t a = 0; a < d; ++a) {
        const double ka = k_feat[a];
        double* srow = state.current_summary_.row(a);
        for (std::size_t c = 0; c < d; ++c) srow[c] += ka * v_t[c];
        state.current_normalizer_[a] += ka;
    }

    const double self_w = (*state.cfg_.coefficients)(state.block_index_, state.block_index_);
    std::vector<double> out(d, 0.0);
    double den = 0.0;
    for (std::size_t a = 0; a < d; ++a) {
        const double qa = q_feat[a];
        const double* pr = state.prefix_summary_.row(a);
        const double* cu = state.current_summary_.row(a);
        for (std::size_t c = 0; c < d; ++c) out[c] += qa * (pr[c] + self_w * cu[c]);
        den += qa * (state.prefix_normalizer_[a] + self_w * state.current_normalizer_[a]);
    }
    if (state.cfg_.normalize) {
        if (std::abs(den) < kNormalizerFloor) {
            const std::size_t t = state.block_index_ * state.block_size_ + state.tokens_in_block_;
            detail::throw_degenerate_normalizer("stream_step", t, std::abs(den));
        }
        const double inv = 1.0 / den;
        for (double& x : out) x *= inv;
    }

    // Eager seal: a full block moves to the completed set immediately, so
    // tokens_in_current_block stays strictly below the block size.
    ++state.tokens_in_block_;
    if (state.tokens_in_block_ == state.block_size_) {
        state.completed_summaries_.push_back(state.current_summary_);
        state.completed_normalizers_.push_back(state.current_normalizer_);
        state.current_summary_ = Matrix(d, d);
        state.current_normalizer_.assign(d, 0.0);
        state.tokens_in_block_ = 0;
        ++state.block_index_;
    }
    return out;
}

std::map<std::string, Matrix> StreamState::to_tensors() const {
    std::map<std::string, Matrix> out;
    const std::size_t k = completed_summaries_.size();
    Matrix completed_s(k * dim_, dim_ == 0 ? 1 : dim_);
    Matrix completed_z(k, dim_ == 0 ? 1 : dim_);
    for (std::size_t b = 0; b < k; ++b) {
        for (std::size_t a = 0; a < dim_; ++a) {
            std::copy(completed_summaries_[b].row(a), completed_summaries_[b].row(a) + dim_,
                      completed_s.row(b * dim_ + a));
        }
        std::copy(completed_normalizers_[b].begin(), completed_normalizers_[b].end(),
                  completed_z.row(b));
    }
    out.emplace("completed_summaries", std::move(completed_s));
    out.emplace("completed_normalizers", std::move(completed_z));
    out.emplace("current_summary", dim_ ? current_summary_ : Matrix(0, 1));
    Matrix cz(dim_ ? 1 : 0, dim_ ? dim_ : 1);
    if (dim_) std::copy(current_normalizer_.begin(), current_normalizer_.end(), cz.row(0));
    out.emplace("current_normalizer", std::move(cz));
    Matrix progress(1, 3);
    progress(0, 0) = static_cast<double>(block_index_);
    progress(0, 1) = static_cast<double>(tokens_in_block_);
    progress(0, 2) = static_cast<double>(dim_);
    out.emplace("progress", std::move(progress));
    return out;
}

StreamState stream_restore(const AttentionConfig& cfg,
                           const std::map<std::string, Matrix>& tensors) {
    StreamState state = stream_init(cfg);
    const auto get = [&](const char* name) -> const Matrix& {
        const auto it = tensors.find(name);
        if (it == tensors.end()) {
            throw std::invalid_argument("stream_restore: checkpoint is missing tensor '" +
                                        std::string(name) + "'");
        }
        return it->second;
    };
    const Matrix& progress = get("progress");
    state.block_index_ = static_cast<std::size_t>(progress(0, 0));
    state.tokens_in_block_ = static_cast<std::size_t>(progress(0, 1));
    state.dim_ = static_cast<std::size_t>(progress(0, 2));
    if (state.dim_ == 0) return state;

    const std::size_t d = state.dim_;
    const Matrix& completed_s = get("completed_summaries");
    const Matrix& completed_z = get("completed_normalizers");
    const std::size_t k = completed_z.rows();
    if (completed_s.rows() != k * d || completed_s.cols() != d || completed_z.cols() != d) {
        throw std::invalid_argument("stream_restore: inconsistent checkpoint shapes");
    }
    for (std::size_t b = 0; b < k; ++b) {
        Matrix s(d, d);
        for (std::size_t a = 0; a < d; ++a) {
            std::copy(completed_s.row(b * d + a), completed_s.row(b * d + a) + d, s.row(a));
        }
        state.completed_summaries_.push_back(std::move(s));
        state.completed_normalizers_.emplace_back(completed_z.row(b), completed_z.row(b) + d);
    }
    if (state.completed_summaries_.size() != state.block_index_) {
        throw std::invalid_argument("stream_restore: completed block count does not match index");
    }
    state.current_summary_ = get("current_summary");
    if (!state.current_summary_.same_shape(Matrix(d, d))) {
        throw std::invalid_argument("stream_restore: current summary has wrong shape");
    }
    const Matrix& cz = get("current_normalizer");
    state.current_normalizer_.assign(cz.row(0), cz.row(0) + d);
    // Rebuild the cached mixed prefix for the in-progress block; the ascending
    // accumulation order matches the live path, so resumed outputs are
    // bit-identical.
    state.refresh_prefix();
    return state;
}

}  // namespace mhla
