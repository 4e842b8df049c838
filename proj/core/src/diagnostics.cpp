#include "mhla/diagnostics.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "mhla/random.hpp"

namespace mhla {

const char* to_string(Mechanism mechanism) {
    switch (mechanism) {
        case Mechanism::Softmax: return "softmax";
        case Mechanism::Linear: return "linear";
        case Mechanism::Mhla: return "mhla";
    }
    return "?";
}

Mechanism mechanism_from_string(const std::string& name) {
    if (name == "softmax") return Mechanism::Softmax;
    if (name == "linear") return Mechanism::Linear;
    if (name == "mhla") return Mechanism::Mhla;
    throw std::invalid_argument("unknown mechanism '" + name +
                                "' (expected softmax, linear, or mhla)");
}

Matrix materialize_attention(const Matrix& q, const Matrix& k, const AttentionConfig& cfg,
                             Mechanism mechanism) {
    if (!q.same_shape(k)) {
        throw std::invalid_argument("materialize_attention: q " + q.shape_string() + " and k " +
                                    k.shape_string() + " must have the same shape");
    }
    const std::size_t n = q.rows(), d = q.cols();
    if (n > 8192) {
        throw std::invalid_argument("materialize_attention: N = " + std::to_string(n) +
                                    " exceeds the 8192 materialization cap");
    }
    if (mechanism == Mechanism::Softmax) {
        return row_softmax(gemm(q, k, false, true), 1.0 / std::sqrt(static_cast<double>(d)));
    }

    detail::check_normalize_map(cfg);
    const Matrix q_feat = apply_feature_map(q, cfg.feature_map);
    const Matrix k_feat = apply_feature_map(k, cfg.feature_map);
    Matrix a = gemm(q_feat, k_feat, false, true);

    if (mechanism == Mechanism::Mhla) {
        const BlockPartition& partition = detail::require_partition(cfg, n);
        const CoefficientMatrix& coeffs = detail::require_coefficients(cfg, partition);
        if (coeffs.causal()) {
            throw std::invalid_argument(
                "materialize_attention: causal coefficients are not materializable here");
        }
        for (std::size_t t = 0; t < n; ++t) {
            const std::size_t i = partition.block_of(t);
            double* row = a.row(t);
            for (std::size_t s = 0; s < n; ++s) row[s] *= coeffs(i, partition.block_of(s));
        }
    }

    if (cfg.normalize) {
        for (std::size_t t = 0; t < n; ++t) {
            double* row = a.row(t);
            double den = 0.0;
            for (std::size_t s = 0; s < n; ++s) den += row[s];
            if (std::abs(den) < kNormalizerFloor) {
                detail::throw_degenerate_normalizer("materialize_attention", t, std::abs(den));
            }
            const double inv = 1.0 / den;
            for (std::size_t s = 0; s < n; ++s) row[s] *= inv;
        }
    }
    return a;
}

std::size_t numerical_rank(const Matrix& a) {
    const std::vector<double> sigma = singular_values(a);
    if (sigma.empty()) return 0;
    const double tau = static_cast<double>(std::max(a.rows(), a.cols())) *
                       std::numeric_limits<double>::epsilon() * sigma.front();
    std::size_t rank = 0;
    for (const double s : sigma) rank += s > tau ? 1 : 0;
    return rank;
}

std::size_t numerical_rank(const Matrix& a, double tau) {
    if (tau < 0.0) throw std::invalid_argument("numerical_rank: tau must be nonnegative");
    std::size_t rank = 0;
    for (const double s : singular_values(a)) rank += s > tau ? 1 : 0;
    return rank;
}

double mean_row_entropy(const Matrix& a) {
    if (a.rows() == 0) throw std::invalid_argument("mean_row_entropy: empty matrix");
    double total = 0.0;
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const double* row = a.row(i);
        double sum = 0.0;
        for (std::size_t j = 0; j < a.cols(); ++j) {
            if (row[j] < -1e-12) {
                throw std::invalid_argument("mean_row_entropy: row " + std::to_string(i) +
                                            " has negative entry " + std::to_string(row[j]));
            }
            sum += row[j];
        }
        if (std::abs(sum - 1.0) > 1e-6) {
            throw std::invalid_argument("mean_row_entropy: row " + std::to_string(i) +
                                        " sums to " + std::to_string(sum) + ", not 1");
        }
        double h = 0.0;
        for (std::size_t j = 0; j < a.cols(); ++j) {
            const double p = row[j] > 0.0 ? row[j] : 0.0;
            if (p > 0.0) h -= p * std::log(p);
        }
        total += h;
    }
    return total / static_cast<double>(a.rows());
}

std::size_t rank_bound(Mechanism mechanism, std::size_t n, std::size_t d,
                       const BlockPartition* partition) {
    switch (mechanism) {
        case Mechanism::Softmax:
            return n;
        case Mechanism::Linear:
            return std::min(n, d);
        case Mechanism::Mhla: {
            if (partition == nullptr) {
                throw std::invalid_argument("rank_bound: MHLA bound needs a partition");
            }
            std::size_t sum = 0;
            for (std::size_t b = 0; b < partition->num_blocks(); ++b) {
                sum += std::min(partition->block_size(b), d);
            }
            return std::min(n, sum);
        }
    }
    return n;
}

BlockPartition default_diagnostics_partition(std::size_t n, std::size_t m) {
    const auto exact_sqrt = [](std::size_t x) -> std::size_t {
        const auto r = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(x))));
        return r * r == x ? r : 0;
    };
    const std::size_t side = exact_sqrt(n);
    const std::size_t block_side = exact_sqrt(m);
    if (side != 0 && block_side != 0 && side % block_side == 0) {
        return make_grid_partition(side, side, block_side, block_side);
    }
    return make_partition(n, m);
}

std::vector<DiagnosticsReport> collapse_report(std::uint64_t seed, std::size_t n, std::size_t d,
                                               std::size_t m, double init_floor) {
    const BlockPartition partition = default_diagnostics_partition(n, m);
    AttentionConfig cfg;
    cfg.feature_map = FeatureMap::EluPlusOne;
    cfg.normalize = true;
    cfg.partition = partition;
    cfg.coefficients = locality_init(partition, init_floor);

    const auto [q, k, v] = gaussian_qkv(seed, n, d);
    (void)v;  // drawn so the seed's input triple is fixed; metrics use Q and K

    std::vector<DiagnosticsReport> reports;
    for (const Mechanism mech : {Mechanism::Softmax, Mechanism::Linear, Mechanism::Mhla}) {
        const Matrix a = materialize_attention(q, k, cfg, mech);
        DiagnosticsReport r;
        r.mechanism = mech;
        r.n = n;
        r.d = d;
        r.m = m;
        r.numerical_rank = numerical_rank(a);
        r.rank_bound = rank_bound(mech, n, d, &partition);
        r.mean_row_entropy = mean_row_entropy(a);
        r.normalized_entropy =
            n > 1 ? r.mean_row_entropy / std::log(static_cast<double>(n)) : 0.0;
        reports.push_back(r);
    }
    return reports;
}

}  // namespace mhla
