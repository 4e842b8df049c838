#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace mhla {

/// Row-major dense matrix of doubles — the carrier type for queries, keys,
/// values, key-value summaries, and materialized attention maps.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);

    static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);
    static Matrix identity(std::size_t n);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

    double* row(std::size_t r) noexcept { return data_.data() + r * cols_; }
    const double* row(std::size_t r) const noexcept { return data_.data() + r * cols_; }
    std::span<double> row_span(std::size_t r) noexcept { return {row(r), cols_}; }
    std::span<const double> row_span(std::size_t r) const noexcept { return {row(r), cols_}; }

    std::vector<double>& data() noexcept { return data_; }
    const std::vector<double>& data() const noexcept { return data_; }

    bool same_shape(const Matrix& other) const noexcept {
        return rows_ == other.rows_ && cols_ == other.cols_;
    }

    /// "RxC" string for error reporting.
    std::string shape_string() const;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

/// Elementwise kernel feature map applied to queries and keys. relu and
/// elu-plus-one are nonnegative, which the normalized attention paths require.
enum class FeatureMap { Identity, Relu, EluPlusOne };

const char* to_string(FeatureMap map);
FeatureMap feature_map_from_string(const std::string& name);
bool is_nonnegative_map(FeatureMap map) noexcept;

/// C = op(a) * op(b) in double precision. Rejects mismatched inner dimensions
/// with a shape report.
Matrix gemm(const Matrix& a, const Matrix& b, bool transpose_a = false, bool transpose_b = false);

/// Row-wise softmax of scale*m, stabilized by row-max subtraction.
/// Every output row is nonnegative and sums to 1.
Matrix row_softmax(const Matrix& m, double scale);

Matrix apply_feature_map(const Matrix& m, FeatureMap map);

/// Elementwise derivative of the feature map (relu subgradient at 0 is 0).
Matrix feature_map_derivative(const Matrix& m, FeatureMap map);

/// Singular values in descending order via one-sided Jacobi iteration.
/// Throws if the sweep cap (100) is reached before convergence.
std::vector<double> singular_values(const Matrix& m);

Matrix transposed(const Matrix& m);
double frobenius_norm(const Matrix& m);
double max_abs(const Matrix& m);
double max_abs_diff(const Matrix& a, const Matrix& b);

}  // namespace mhla
