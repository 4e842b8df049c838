#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mhla/attention.hpp"

namespace mhla {

enum class Mechanism { Softmax, Linear, Mhla };

const char* to_string(Mechanism mechanism);
Mechanism mechanism_from_string(const std::string& name);

/// Collapse metrics for one mechanism on one input: numerical rank against
/// the structural rank bound, and mean row entropy in nats.
struct DiagnosticsReport {
    Mechanism mechanism = Mechanism::Softmax;
    std::size_t n = 0, d = 0, m = 0;
    std::size_t numerical_rank = 0;
    std::size_t rank_bound = 0;
    double mean_row_entropy = 0.0;
    double normalized_entropy = 0.0;  // mean entropy / ln N
};

/// The implied N x N attention matrix of a mechanism. Applying it to V
/// reproduces the corresponding forward output. O(N^2); capped at N <= 8192.
Matrix materialize_attention(const Matrix& q, const Matrix& k, const AttentionConfig& cfg,
                             Mechanism mechanism);

/// Count of singular values above tau. The auto policy uses
/// max(rows, cols) * machine-epsilon * sigma_max.
std::size_t numerical_rank(const Matrix& a);
std::size_t numerical_rank(const Matrix& a, double tau);

/// Mean over rows of -sum_j p_j ln p_j with 0 ln 0 = 0. Rows must sum to 1
/// within 1e-6 and entries must be >= -1e-12 (tiny negatives are clamped);
/// violations are rejected naming the row.
double mean_row_entropy(const Matrix& a);

/// Structural rank bound: N for softmax, d for global linear attention,
/// min(N, sum_b min(n_b, d)) for MHLA.
std::size_t rank_bound(Mechanism mechanism, std::size_t n, std::size_t d,
                       const BlockPartition* partition);

/// Partition shape used by collapse_report and the diagnose CLI: grid-2d when
/// N and M are compatible perfect squares, linear-1d otherwise.
BlockPartition default_diagnostics_partition(std::size_t n, std::size_t m);

/// Rank/entropy reports for softmax, linear, and MHLA on identical Gaussian
/// inputs drawn from the seed (elu-plus-one feature map, normalized rows,
/// locality-initialized coefficients).
std::vector<DiagnosticsReport> collapse_report(std::uint64_t seed, std::size_t n, std::size_t d,
                                               std::size_t m, double init_floor = 0.0);

}  // namespace mhla
