#pragma once

#include <map>
#include <stdexcept>
#include <string>

#include "mhla/matrix.hpp"

namespace mhla {

/// Distinct failure classes for fixture IO, so callers can tell a corrupt
/// file from a version skew from a short read.
enum class FixtureErrorKind { Io, BadMagic, BadVersion, Truncated, Malformed };

class FixtureError : public std::runtime_error {
public:
    FixtureError(FixtureErrorKind kind, const std::string& message)
        : std::runtime_error(message), kind_(kind) {}
    FixtureErrorKind kind() const noexcept { return kind_; }

private:
    FixtureErrorKind kind_;
};

using TensorMap = std::map<std::string, Matrix>;

/// Binary tensor container: magic "MHLA", u32 version (=1), u32 entry count;
/// per entry a u16 name length, the UTF-8 name, u32 rows, u32 cols, then
/// row-major little-endian 64-bit floats. Round trips are bit-exact.
void save_fixture(const std::string& path, const TensorMap& tensors);
TensorMap load_fixture(const std::string& path);

inline constexpr std::uint32_t kFixtureVersion = 1;

}  // namespace mhla
