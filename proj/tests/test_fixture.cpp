#include <bit>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>

#include "doctest.h"
#include "mhla/fixture.hpp"
#include "mhla/random.hpp"

using namespace mhla;

namespace {

std::string temp_path(const char* tag) {
    return (std::filesystem::temp_directory_path() /
            (std::string("mhla_fixture_test_") + tag + ".bin"))
        .string();
}

struct PathGuard {
    std::string path;
    ~PathGuard() { std::remove(path.c_str()); }
};

}  // namespace

TEST_SUITE("fixture") {

TEST_CASE("fixtures round trip bitwise") {
    const std::string path = temp_path("roundtrip");
    PathGuard guard{path};
    TensorMap tensors;
    tensors.emplace("q", gaussian_matrix(1, 7, 3));
    tensors.emplace("weights", gaussian_matrix(2, 4, 4));
    Matrix special(2, 3);
    special(0, 0) = -0.0;
    special(0, 1) = 1e-308;          // subnormal territory
    special(0, 2) = 1.7976931348623157e308;
    special(1, 0) = std::numeric_limits<double>::quiet_NaN();
    special(1, 1) = std::numeric_limits<double>::infinity();
    special(1, 2) = -std::numeric_limits<double>::infinity();
    tensors.emplace("special", special);

    save_fixture(path, tensors);
    const TensorMap loaded = load_fixture(path);
    REQUIRE(loaded.size() == tensors.size());
    for (const auto& [name, tensor] : tensors) {
        const auto it = loaded.find(name);
        REQUIRE(it != loaded.end());
        REQUIRE(it->second.rows() == tensor.rows());
        REQUIRE(it->second.cols() == tensor.cols());
        for (std::size_t e = 0; e < tensor.size(); ++e) {
            const auto a = std::bit_cast<std::uint64_t>(tensor.data()[e]);
            const auto b = std::bit_cast<std::uint64_t>(it->second.data()[e]);
            CHECK(a == b);
        }
    }
}

TEST_CASE("an empty tensor set is a valid file") {
    const std::string path = temp_path("empty");
    PathGuard guard{path};
    save_fixture(path, {});
    CHECK(load_fixture(path).empty());
}

TEST_CASE("corrupted magic bytes raise the magic error, not a crash") {
    const std::string path = temp_path("magic");
    PathGuard guard{path};
    save_fixture(path, {{"a", Matrix(2, 2)}});
    {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(0);
        f.write("XXXX", 4);
    }
    try {
        (void)load_fixture(path);
        FAIL("expected FixtureError");
    } catch (const FixtureError& e) {
        CHECK(e.kind() == FixtureErrorKind::BadMagic);
    }
}

TEST_CASE("version skew is its own error") {
    const std::string path = temp_path("version");
    PathGuard guard{path};
    save_fixture(path, {{"a", Matrix(1, 1)}});
    {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(4);
        const char v2[4] = {2, 0, 0, 0};
        f.write(v2, 4);
    }
    try {
        (void)load_fixture(path);
        FAIL("expected FixtureError");
    } catch (const FixtureError& e) {
        CHECK(e.kind() == FixtureErrorKind::BadVersion);
    }
}

TEST_CASE("truncation is detected") {
    const std::string path = temp_path("truncated");
    PathGuard guard{path};
    save_fixture(path, {{"payload", gaussian_matrix(3, 8, 8)}});
    const auto full_size = std::filesystem::file_size(path);
    std::filesystem::resize_file(path, full_size - 11);
    try {
        (void)load_fixture(path);
        FAIL("expected FixtureError");
    } catch (const FixtureError& e) {
        CHECK(e.kind() == FixtureErrorKind::Truncated);
    }
}

TEST_CASE("truncation at any byte offset is rejected cleanly") {
    const std::string path = temp_path("cut");
    PathGuard guard{path};
    save_fixture(path, {{"a", gaussian_matrix(1, 2, 3)}, {"b", gaussian_matrix(2, 1, 4)}});
    std::ifstream in(path, std::ios::binary);
    const std::string full((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();
    for (std::size_t cut = 0; cut < full.size(); ++cut) {
        {
            std::ofstream out(path, std::ios::binary | std::ios::trunc);
            out.write(full.data(), static_cast<std::streamsize>(cut));
        }
        CHECK_THROWS_AS((void)load_fixture(path), FixtureError);
    }
}

TEST_CASE("missing file is an io error") {
    try {
        (void)load_fixture("/nonexistent/dir/f.bin");
        FAIL("expected FixtureError");
    } catch (const FixtureError& e) {
        CHECK(e.kind() == FixtureErrorKind::Io);
    }
}

TEST_CASE("random tensors survive save and load byte for byte") {
    const std::string path = temp_path("many");
    PathGuard guard{path};
    std::mt19937_64 engine(55);
    for (int round = 0; round < 20; ++round) {
        TensorMap tensors;
        const int count = 1 + static_cast<int>(engine() % 5);
        for (int i = 0; i < count; ++i) {
            tensors.emplace("t" + std::to_string(i),
                            gaussian_matrix(engine(), 1 + engine() % 12, 1 + engine() % 12));
        }
        save_fixture(path, tensors);
        const TensorMap loaded = load_fixture(path);
        REQUIRE(loaded.size() == tensors.size());
        for (const auto& [name, tensor] : tensors) {
            const Matrix& back = loaded.at(name);
            REQUIRE(back.same_shape(tensor));
            for (std::size_t e = 0; e < tensor.size(); ++e) {
                CHECK(std::bit_cast<std::uint64_t>(tensor.data()[e]) ==
                      std::bit_cast<std::uint64_t>(back.data()[e]));
            }
        }
    }
}

}  // TEST_SUITE
