#include "mhla/fixture.hpp"

#include <bit>
#include <cstdint>
#include <fstream>
#include <limits>
#include <vector>

namespace mhla {

namespace {

constexpr char kMagic[4] = {'M', 'H', 'L', 'A'};

void put_u16(std::string& out, std::uint16_t x) {
    out.push_back(static_cast<char>(x & 0xff));
    out.push_back(static_cast<char>((x >> 8) & 0xff));
}

void put_u32(std::string& out, std::uint32_t x) {
    for (int shift = 0; shift < 32; shift += 8) {
        out.push_back(static_cast<char>((x >> shift) & 0xff));
    }
}

void put_f64(std::string& out, double x) {
    const auto bits = std::bit_cast<std::uint64_t>(x);
    for (int shift = 0; shift < 64; shift += 8) {
        out.push_back(static_cast<char>((bits >> shift) & 0xff));
    }
}

class Reader {
public:
    explicit Reader(std::string bytes) : bytes_(std::move(bytes)) {}

    std::uint16_t u16() { return static_cast<std::uint16_t>(consume(2, "u16")); }
    std::uint32_t u32() { return static_cast<std::uint32_t>(consume(4, "u32")); }
    double f64() { return std::bit_cast<double>(consume(8, "f64")); }

    std::string bytes(std::size_t count, const char* what) {
        require(count, what);
        std::string out = bytes_.substr(pos_, count);
        pos_ += count;
        return out;
    }

    bool at_end() const { return pos_ == bytes_.size(); }

private:
    void require(std::size_t count, const char* what) {
        if (bytes_.size() - pos_ < count) {
            throw FixtureError(FixtureErrorKind::Truncated,
                               std::string("fixture: truncated while reading ") + what +
                                   " at offset " + std::to_string(pos_));
        }
    }

    std::uint64_t consume(std::size_t count, const char* what) {
        require(count, what);
        std::uint64_t x = 0;
        for (std::size_t i = 0; i < count; ++i) {
            x |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
        }
        pos_ += count;
        return x;
    }

    std::string bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

void save_fixture(const std::string& path, const TensorMap& tensors) {
    std::string out;
    out.append(kMagic, 4);
    put_u32(out, kFixtureVersion);
    if (tensors.size() > std::numeric_limits<std::uint32_t>::max()) {
        throw FixtureError(FixtureErrorKind::Malformed, "fixture: too many tensors");
    }
    put_u32(out, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, tensor] : tensors) {
        if (name.size() > std::numeric_limits<std::uint16_t>::max()) {
            throw FixtureError(FixtureErrorKind::Malformed,
                               "fixture: tensor name '" + name.substr(0, 32) + "...' too long");
        }
        if (tensor.rows() > std::numeric_limits<std::uint32_t>::max() ||
            tensor.cols() > std::numeric_limits<std::uint32_t>::max()) {
            throw FixtureError(FixtureErrorKind::Malformed,
                               "fixture: tensor '" + name + "' too large for the format");
        }
        put_u16(out, static_cast<std::uint16_t>(name.size()));
        out.append(name);
        put_u32(out, static_cast<std::uint32_t>(tensor.rows()));
        put_u32(out, static_cast<std::uint32_t>(tensor.cols()));
        for (const double x : tensor.data()) put_f64(out, x);
    }

    std::ofstream file(path, std::ios::binary | std::ios::trunc);
    if (!file) {
        throw FixtureError(FixtureErrorKind::Io, "fixture: cannot open '" + path + "' for writing");
    }
    file.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!file) {
        throw FixtureError(FixtureErrorKind::Io, "fixture: short write to '" + path + "'");
    }
}

TensorMap load_fixture(const std::string& path) {
    std::ifstream file(path, std::ios::binary);
    if (!file) {
        throw FixtureError(FixtureErrorKind::Io, "fixture: cannot open '" + path + "' for reading");
    }
    std::string bytes((std::istreambuf_iterator<char>(file)), std::istreambuf_iterator<char>());
    Reader reader(std::move(bytes));

    const std::string magic = reader.bytes(4, "magic");
    if (magic != std::string(kMagic, 4)) {
        throw FixtureError(FixtureErrorKind::BadMagic,
                           "fixture: '" + path + "' does not start with the MHLA magic");
    }
    const std::uint32_t version = reader.u32();
    if (version != kFixtureVersion) {
        throw FixtureError(FixtureErrorKind::BadVersion,
                           "fixture: '" + path + "' has version " + std::to_string(version) +
                               ", expected " + std::to_string(kFixtureVersion));
    }
    const std::uint32_t count = reader.u32();
    TensorMap tensors;
    for (std::uint32_t e = 0; e < count; ++e) {
        const std::uint16_t name_len = reader.u16();
        const std::string name = reader.bytes(name_len, "tensor name");
        const std::uint32_t rows = reader.u32();
        const std::uint32_t cols = reader.u32();
        Matrix tensor(rows, cols);
        for (double& x : tensor.data()) x = reader.f64();
        if (!tensors.emplace(name, std::move(tensor)).second) {
            throw FixtureError(FixtureErrorKind::Malformed,
                               "fixture: duplicate tensor name '" + name + "'");
        }
    }
    if (!reader.at_end()) {
        throw FixtureError(FixtureErrorKind::Malformed,
                           "fixture: trailing bytes after the last tensor in '" + path + "'");
    }
    return tensors;
}

}  // namespace mhla
