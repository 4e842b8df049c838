#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "mhla/attention.hpp"

namespace mhla {

/// Chunkwise-parallel causal forward: token t in block i sees the mixed
/// prefix sum_{b<i} m(i,b) S_b plus the m(i,i)-weighted causally masked
/// intra-block term. Requires a causal coefficient matrix and a linear-1d
/// partition. Token t's output depends only on tokens <= t.
Matrix chunkwise_causal_forward(const Matrix& q, const Matrix& k, const Matrix& v,
                                const AttentionConfig& cfg);

/// Per-prefix oracle: y_t = sum_{j<=t} m(i(t), b(j)) (q_t . k_j) v_j,
/// normalized if configured. O(N^2); capped at N <= 4096.
Matrix naive_causal_oracle(const Matrix& q, const Matrix& k, const Matrix& v,
                           const AttentionConfig& cfg);

/// Streaming causal inference state: cached completed-block summaries plus
/// the in-progress block summary. Feeding one token costs O(d^2), with an
/// extra O(M d^2) mixed-prefix refresh at each block entry. Single-owner
/// mutable state: never share one instance across threads.
class StreamState {
public:
    std::size_t block_index() const noexcept { return block_index_; }
    std::size_t tokens_in_current_block() const noexcept { return tokens_in_block_; }
    std::size_t completed_blocks() const noexcept { return completed_summaries_.size(); }
    std::size_t dim() const noexcept { return dim_; }
    const Matrix& current_summary() const noexcept { return current_summary_; }
    const Matrix& mixed_prefix_summary() const noexcept { return prefix_summary_; }
    const AttentionConfig& config() const noexcept { return cfg_; }

    /// Checkpoint payload in the fixture tensor format (configuration is the
    /// caller's responsibility and is re-supplied at restore).
    std::map<std::string, Matrix> to_tensors() const;

    friend StreamState stream_init(const AttentionConfig& cfg);
    friend StreamState stream_restore(const AttentionConfig& cfg,
                                      const std::map<std::string, Matrix>& tensors);
    friend std::vector<double> stream_step(StreamState& state, std::span<const double> q_t,
                                           std::span<const double> k_t,
                                           std::span<const double> v_t);

private:
    StreamState() = default;
    void refresh_prefix();

    AttentionConfig cfg_;
    std::size_t block_size_ = 0;
    std::size_t dim_ = 0;  // 0 until the first step fixes it
    std::vector<Matrix> completed_summaries_;
    std::vector<std::vector<double>> completed_normalizers_;
    Matrix current_summary_;
    std::vector<double> current_normalizer_;
    Matrix prefix_summary_;
    std::vector<double> prefix_normalizer_;
    std::size_t block_index_ = 0;
    std::size_t tokens_in_block_ = 0;
};

/// Empty state for a causal config (causal coefficients, linear-1d partition).
StreamState stream_init(const AttentionConfig& cfg);

/// Rebuild a state from a checkpoint produced by StreamState::to_tensors.
StreamState stream_restore(const AttentionConfig& cfg,
                           const std::map<std::string, Matrix>& tensors);

/// Feed one token; returns its output row. Equals the matching row of
/// chunkwise_causal_forward on the sequence so far. Throws once the sequence
/// exceeds the M blocks the coefficient matrix supports.
std::vector<double> stream_step(StreamState& state, std::span<const double> q_t,
                                std::span<const double> k_t, std::span<const double> v_t);

}  // namespace mhla
