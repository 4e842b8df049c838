#pragma once

#include <array>
#include <cstdint>
#include <random>

#include "mhla/matrix.hpp"

namespace mhla {

/// Standard-normal matrix from a fixed seed. Deterministic for a given build.
Matrix gaussian_matrix(std::uint64_t seed, std::size_t rows, std::size_t cols);

/// Q, K, V drawn sequentially from one engine so every consumer of a seed
/// sees identical inputs.
std::array<Matrix, 3> gaussian_qkv(std::uint64_t seed, std::size_t n, std::size_t d);

/// FNV-1a over the raw little-endian bytes of the payload. Used to log that
/// benchmark mechanisms consumed identical inputs.
std::uint64_t fnv1a_hash(const Matrix& m);

}  // namespace mhla
