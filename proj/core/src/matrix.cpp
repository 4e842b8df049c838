#include "mhla/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace mhla {

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    Matrix m(rows.size(), rows.size() ? rows.begin()->size() : 0);
    std::size_t r = 0;
    for (const auto& row : rows) {
        if (row.size() != m.cols_) {
            throw std::invalid_argument("Matrix::from_rows: ragged row lengths");
        }
        std::copy(row.begin(), row.end(), m.row(r));
        ++r;
    }
    return m;
}

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

std::string Matrix::shape_string() const {
    return std::to_string(rows_) + "x" + std::to_string(cols_);
}

const char* to_string(FeatureMap map) {
    switch (map) {
        case FeatureMap::Identity: return "identity";
        case FeatureMap::Relu: return "relu";
        case FeatureMap::EluPlusOne: return "elu-plus-one";
    }
    return "?";
}

FeatureMap feature_map_from_string(const std::string& name) {
    if (name == "identity") return FeatureMap::Identity;
    if (name == "relu") return FeatureMap::Relu;
    if (name == "elu-plus-one") return FeatureMap::EluPlusOne;
    throw std::invalid_argument("unknown feature map '" + name +
                                "' (expected identity, relu, or elu-plus-one)");
}

bool is_nonnegative_map(FeatureMap map) noexcept {
    return map != FeatureMap::Identity;
}

Matrix transposed(const Matrix& m) {
    Matrix t(m.cols(), m.rows());
    for (std::size_t i = 0; i < m.rows(); ++i) {
        const double* src = m.row(i);
        for (std::size_t j = 0; j < m.cols(); ++j) t(j, i) = src[j];
    }
    return t;
}

namespace {

// Blocked ikj kernel: C += A*B with A (m x k), B (k x n), all row-major.
// The j-contiguous inner loop keeps B/C streaming and vectorizable.
void gemm_accumulate(const Matrix& a, const Matrix& b, Matrix& c) {
    constexpr std::size_t kTileK = 128;
    constexpr std::size_t kTileJ = 512;
    const std::size_t m = a.rows(), kdim = a.cols(), n = b.cols();
    for (std::size_t jj = 0; jj < n; jj += kTileJ) {
        const std::size_t jend = std::min(jj + kTileJ, n);
        for (std::size_t kk = 0; kk < kdim; kk += kTileK) {
            const std::size_t kend = std::min(kk + kTileK, kdim);
            for (std::size_t i = 0; i < m; ++i) {
                const double* arow = a.row(i);
                double* crow = c.row(i);
                for (std::size_t k = kk; k < kend; ++k) {
                    const double av = arow[k];
                    const double* brow = b.row(k);
                    for (std::size_t j = jj; j < jend; ++j) {
                        crow[j] += av * brow[j];
                    }
                }
            }
        }
    }
}

}  // namespace

Matrix gemm(const Matrix& a, const Matrix& b, bool transpose_a, bool transpose_b) {
    const std::size_t am = transpose_a ? a.cols() : a.rows();
    const std::size_t ak = transpose_a ? a.rows() : a.cols();
    const std::size_t bk = transpose_b ? b.cols() : b.rows();
    const std::size_t bn = transpose_b ? b.rows() : b.cols();
    if (ak != bk) {
        throw std::invalid_argument(
            "gemm: inner dimensions disagree: lhs " + a.shape_string() +
            (transpose_a ? " (transposed)" : "") + " vs rhs " + b.shape_string() +
            (transpose_b ? " (transposed)" : ""));
    }
    Matrix c(am, bn);
    if (transpose_a && !transpose_b && am * bn * sizeof(double) <= 256 * 1024) {
        // Reduction shape (tall A, small C): accumulate rank-1 updates and
        // stream A and B exactly once, no transposed copy.
        for (std::size_t r = 0; r < a.rows(); ++r) {
            const double* arow = a.row(r);
            const double* brow = b.row(r);
            for (std::size_t i = 0; i < am; ++i) {
                const double av = arow[i];
                double* crow = c.row(i);
                for (std::size_t j = 0; j < bn; ++j) crow[j] += av * brow[j];
            }
        }
        return c;
    }
    Matrix at, bt;
    if (transpose_a) at = transposed(a);
    if (transpose_b) bt = transposed(b);
    const Matrix& lhs = transpose_a ? at : a;
    const Matrix& rhs = transpose_b ? bt : b;
    gemm_accumulate(lhs, rhs, c);
    return c;
}

namespace detail {

void row_softmax_inplace(Matrix& m, double scale) {
    for (std::size_t i = 0; i < m.rows(); ++i) {
        double* row = m.row(i);
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < m.cols(); ++j) mx = std::max(mx, scale * row[j]);
        double sum = 0.0;
        for (std::size_t j = 0; j < m.cols(); ++j) {
            row[j] = std::exp(scale * row[j] - mx);
            sum += row[j];
        }
        const double inv = 1.0 / sum;
        for (std::size_t j = 0; j < m.cols(); ++j) row[j] *= inv;
    }
}

}  // namespace detail

Matrix row_softmax(const Matrix& m, double scale) {
    Matrix out = m;
    detail::row_softmax_inplace(out, scale);
    return out;
}

Matrix apply_feature_map(const Matrix& m, FeatureMap map) {
    Matrix out = m;
    switch (map) {
        case FeatureMap::Identity:
            break;
        case FeatureMap::Relu:
            for (double& x : out.data()) x = x > 0.0 ? x : 0.0;
            break;
        case FeatureMap::EluPlusOne:
            for (double& x : out.data()) x = x > 0.0 ? x + 1.0 : std::exp(x);
            break;
    }
    return out;
}

Matrix feature_map_derivative(const Matrix& m, FeatureMap map) {
    Matrix out(m.rows(), m.cols());
    switch (map) {
        case FeatureMap::Identity:
            std::fill(out.data().begin(), out.data().end(), 1.0);
            break;
        case FeatureMap::Relu:
            for (std::size_t i = 0; i < m.size(); ++i)
                out.data()[i] = m.data()[i] > 0.0 ? 1.0 : 0.0;
            break;
        case FeatureMap::EluPlusOne:
            for (std::size_t i = 0; i < m.size(); ++i) {
                const double x = m.data()[i];
                out.data()[i] = x > 0.0 ? 1.0 : std::exp(x);
            }
            break;
    }
    return out;
}

std::vector<double> singular_values(const Matrix& m) {
    if (m.empty()) return {};
    // One-sided Jacobi orthogonalizes columns; work on the transpose when the
    // input is wide so the working matrix is tall and returns min(rows, cols)
    // values.
    const bool wide = m.cols() > m.rows();
    const std::size_t rows = wide ? m.cols() : m.rows();
    const std::size_t n = wide ? m.rows() : m.cols();

    // Column-major working copy for contiguous column access.
    std::vector<double> col(n * rows);
    for (std::size_t i = 0; i < m.rows(); ++i) {
        for (std::size_t j = 0; j < m.cols(); ++j) {
            const double x = m(i, j);
            if (wide) {
                col[i * rows + j] = x;
            } else {
                col[j * rows + i] = x;
            }
        }
    }

    auto sq_norm = [&](std::size_t j) {
        const double* p = col.data() + j * rows;
        double s = 0.0;
        for (std::size_t i = 0; i < rows; ++i) s += p[i] * p[i];
        return s;
    };

    std::vector<double> alpha(n);
    double fro_sq = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        alpha[j] = sq_norm(j);
        fro_sq += alpha[j];
    }
    if (fro_sq == 0.0) return std::vector<double>(n, 0.0);

    constexpr double kRelTol = 1e-12;
    constexpr int kMaxSweeps = 100;
    const double abs_floor = std::numeric_limits<double>::epsilon() * fro_sq;

    double residual = 0.0;
    bool converged = false;
    for (int sweep = 0; sweep < kMaxSweeps && !converged; ++sweep) {
        // Refresh cached norms once per sweep; in-sweep updates are incremental.
        for (std::size_t j = 0; j < n; ++j) alpha[j] = sq_norm(j);
        converged = true;
        residual = 0.0;
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double a = alpha[p], b = alpha[q];
                if (a == 0.0 || b == 0.0) continue;
                double* cp = col.data() + p * rows;
                double* cq = col.data() + q * rows;
                double gamma = 0.0;
                for (std::size_t i = 0; i < rows; ++i) gamma += cp[i] * cq[i];
                const double denom = std::sqrt(a * b);
                residual = std::max(residual, std::abs(gamma) / denom);
                if (std::abs(gamma) <= kRelTol * denom || std::abs(gamma) <= abs_floor) {
                    continue;
                }
                converged = false;
                const double zeta = (b - a) / (2.0 * gamma);
                const double t = (zeta >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = c * t;
                for (std::size_t i = 0; i < rows; ++i) {
                    const double xp = cp[i], xq = cq[i];
                    cp[i] = c * xp - s * xq;
                    cq[i] = s * xp + c * xq;
                }
                alpha[p] = a - t * gamma;
                alpha[q] = b + t * gamma;
            }
        }
    }
    if (!converged) {
        throw std::runtime_error(
            "singular_values: Jacobi iteration did not converge within 100 sweeps"
            " (off-diagonal residual " + std::to_string(residual) + ")");
    }

    std::vector<double> sigma(n);
    for (std::size_t j = 0; j < n; ++j) sigma[j] = std::sqrt(sq_norm(j));
    std::sort(sigma.begin(), sigma.end(), std::greater<double>());
    return sigma;
}

double frobenius_norm(const Matrix& m) {
    double s = 0.0;
    for (double x : m.data()) s += x * x;
    return std::sqrt(s);
}

double max_abs(const Matrix& m) {
    double s = 0.0;
    for (double x : m.data()) s = std::max(s, std::abs(x));
    return s;
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) {
        throw std::invalid_argument("max_abs_diff: shapes differ: " + a.shape_string() +
                                    " vs " + b.shape_string());
    }
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        s = std::max(s, std::abs(a.data()[i] - b.data()[i]));
    }
    return s;
}

}  // namespace mhla
