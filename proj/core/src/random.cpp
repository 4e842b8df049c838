#include "mhla/random.hpp"

#include <bit>

namespace mhla {

namespace {

void fill_gaussian(std::mt19937_64& engine, Matrix& m) {
    std::normal_distribution<double> normal(0.0, 1.0);
    for (double& x : m.data()) x = normal(engine);
}

}  // namespace

Matrix gaussian_matrix(std::uint64_t seed, std::size_t rows, std::size_t cols) {
    std::mt19937_64 engine(seed);
    Matrix m(rows, cols);
    fill_gaussian(engine, m);
    return m;
}

std::array<Matrix, 3> gaussian_qkv(std::uint64_t seed, std::size_t n, std::size_t d) {
    std::mt19937_64 engine(seed);
    std::array<Matrix, 3> qkv{Matrix(n, d), Matrix(n, d), Matrix(n, d)};
    for (Matrix& m : qkv) fill_gaussian(engine, m);
    return qkv;
}

std::uint64_t fnv1a_hash(const Matrix& m) {
    std::uint64_t h = 1469598103934665603ull;
    for (double x : m.data()) {
        const auto bits = std::bit_cast<std::uint64_t>(x);
        for (int shift = 0; shift < 64; shift += 8) {
            h ^= (bits >> shift) & 0xffu;
            h *= 1099511628211ull;
        }
    }
    return h;
}

}  // namespace mhla
