#include "mhla/mixing.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mhla {

CoefficientMatrix::CoefficientMatrix(Matrix weights, bool causal)
    : weights_(std::move(weights)), causal_(causal) {
    if (weights_.rows() != weights_.cols()) {
        throw std::invalid_argument("CoefficientMatrix: weights must be square, got " +
                                    weights_.shape_string());
    }
    for (std::size_t i = 0; i < weights_.rows(); ++i) {
        for (std::size_t j = 0; j < weights_.cols(); ++j) {
            const double x = weights_(i, j);
            if (!std::isfinite(x)) {
                throw std::invalid_argument(
                    "CoefficientMatrix: entry (" + std::to_string(i) + "," + std::to_string(j) +
                    ") is not finite");
            }
            if (causal_ && j > i && x != 0.0) {
                throw std::invalid_argument(
                    "CoefficientMatrix: causal matrix has nonzero entry above the diagonal at (" +
                    std::to_string(i) + "," + std::to_string(j) + ")");
            }
        }
    }
}

std::map<std::string, Matrix> CoefficientMatrix::to_tensors() const {
    std::map<std::string, Matrix> out;
    out.emplace("coefficients", weights_);
    Matrix flag(1, 1);
    flag(0, 0) = causal_ ? 1.0 : 0.0;
    out.emplace("coefficients_causal", flag);
    return out;
}

CoefficientMatrix CoefficientMatrix::from_tensors(const std::map<std::string, Matrix>& tensors) {
    const auto w = tensors.find("coefficients");
    const auto f = tensors.find("coefficients_causal");
    if (w == tensors.end() || f == tensors.end()) {
        throw std::invalid_argument(
            "CoefficientMatrix::from_tensors: missing 'coefficients' or 'coefficients_causal'");
    }
    return CoefficientMatrix(w->second, f->second(0, 0) != 0.0);
}

CoefficientMatrix locality_init(const BlockPartition& partition, double init_floor) {
    const std::size_t m = partition.num_blocks();
    if (m == 0) throw std::invalid_argument("locality_init: partition has no blocks");
    if (init_floor < 0.0) throw std::invalid_argument("locality_init: init_floor must be >= 0");
    Matrix w(m, m);
    if (m == 1) {
        w(0, 0) = 1.0;
        return CoefficientMatrix(std::move(w));
    }
    for (std::size_t i = 0; i < m; ++i) {
        const auto ci = partition.block_coord(i);
        double max_dist = 0.0;
        std::vector<double> dist(m);
        for (std::size_t j = 0; j < m; ++j) {
            const auto cj = partition.block_coord(j);
            dist[j] = std::hypot(ci[0] - cj[0], ci[1] - cj[1]);
            max_dist = std::max(max_dist, dist[j]);
        }
        double sum = 0.0;
        for (std::size_t j = 0; j < m; ++j) {
            const double u = (1.0 - dist[j] / max_dist) + init_floor;
            w(i, j) = u;
            sum += u;
        }
        const double inv = 1.0 / sum;
        for (std::size_t j = 0; j < m; ++j) w(i, j) *= inv;
    }
    return CoefficientMatrix(std::move(w));
}

CoefficientMatrix clip_coefficients(const CoefficientMatrix& c) {
    Matrix w = c.weights();
    for (std::size_t i = 0; i < w.rows(); ++i) {
        for (std::size_t j = 0; j < w.cols(); ++j) {
            if (c.causal() && j > i) continue;
            w(i, j) = std::clamp(w(i, j), kClipEpsilon, 1.0 - kClipEpsilon);
        }
    }
    return CoefficientMatrix(std::move(w), c.causal());
}

CoefficientMatrix causal_mask(const CoefficientMatrix& c) {
    Matrix w = c.weights();
    for (std::size_t i = 0; i < w.rows(); ++i) {
        for (std::size_t j = i + 1; j < w.cols(); ++j) w(i, j) = 0.0;
    }
    return CoefficientMatrix(std::move(w), true);
}

SummaryStack compute_local_summaries(const Matrix& k_feat, const Matrix& v,
                                     const BlockPartition& partition) {
    if (!k_feat.same_shape(v)) {
        throw std::invalid_argument("compute_local_summaries: k_feat " + k_feat.shape_string() +
                                    " and v " + v.shape_string() + " must have the same shape");
    }
    if (k_feat.rows() != partition.seq_len()) {
        throw std::invalid_argument(
            "compute_local_summaries: " + std::to_string(k_feat.rows()) +
            " tokens do not match partition over " + std::to_string(partition.seq_len()));
    }
    const std::size_t d = k_feat.cols();
    const std::size_t m = partition.num_blocks();
    SummaryStack stack;
    stack.summaries.assign(m, Matrix(d, d));
    stack.normalizers = Matrix(m, d);
    for (std::size_t b = 0; b < m; ++b) {
        Matrix& s = stack.summaries[b];
        double* z = stack.normalizers.row(b);
        for (const std::size_t t : partition.tokens_of(b)) {
            const double* kt = k_feat.row(t);
            const double* vt = v.row(t);
            for (std::size_t a = 0; a < d; ++a) {
                const double ka = kt[a];
                double* srow = s.row(a);
                for (std::size_t c = 0; c < d; ++c) srow[c] += ka * vt[c];
                z[a] += ka;
            }
        }
    }
    return stack;
}

SummaryStack mix_summaries(const CoefficientMatrix& c, const SummaryStack& stack) {
    const std::size_t m = stack.size();
    if (c.size() != m) {
        throw std::invalid_argument("mix_summaries: coefficient matrix of size " +
                                    std::to_string(c.size()) + " does not match stack of size " +
                                    std::to_string(m));
    }
    const std::size_t d = stack.dim();
    // Flatten each (S_b, z_b) pair into one row so the mix is a single GEMM.
    Matrix flat(m, d * d + d);
    for (std::size_t b = 0; b < m; ++b) {
        double* row = flat.row(b);
        std::copy(stack.summaries[b].data().begin(), stack.summaries[b].data().end(), row);
        std::copy(stack.normalizers.row(b), stack.normalizers.row(b) + d, row + d * d);
    }
    const Matrix mixed_flat = gemm(c.weights(), flat);
    SummaryStack mixed;
    mixed.summaries.assign(m, Matrix(d, d));
    mixed.normalizers = Matrix(m, d);
    for (std::size_t b = 0; b < m; ++b) {
        const double* row = mixed_flat.row(b);
        std::copy(row, row + d * d, mixed.summaries[b].data().begin());
        std::copy(row + d * d, row + d * d + d, mixed.normalizers.row(b));
    }
    return mixed;
}

}  // namespace mhla
