#include <algorithm>
#include <filesystem>
#include <chrono>
#include <cmath>
#include <random>
#include <stdexcept>

#include "doctest.h"
#include "mhla/causal.hpp"
#include "mhla/fixture.hpp"
#include "mhla/random.hpp"
#include "test_support.hpp"

using namespace mhla;

namespace {

AttentionConfig causal_config(std::size_t n, std::size_t m, FeatureMap map = FeatureMap::EluPlusOne,
                              bool normalize = true, std::uint64_t coeff_seed = 0) {
    AttentionConfig cfg;
    cfg.feature_map = map;
    cfg.normalize = normalize;
    cfg.partition = make_partition(n, m);
    if (coeff_seed == 0) {
        cfg.coefficients = causal_mask(locality_init(*cfg.partition));
    } else {
        std::mt19937_64 engine(coeff_seed);
        cfg.coefficients = causal_mask(CoefficientMatrix(oracle::random_row_stochastic(engine, m)));
    }
    return cfg;
}

Matrix stream_whole(const Matrix& q, const Matrix& k, const Matrix& v,
                    const AttentionConfig& cfg) {
    StreamState state = stream_init(cfg);
    Matrix out(q.rows(), q.cols());
    for (std::size_t t = 0; t < q.rows(); ++t) {
        const auto row = stream_step(state, q.row_span(t), k.row_span(t), v.row_span(t));
        std::copy(row.begin(), row.end(), out.row(t));
    }
    return out;
}

}  // namespace

TEST_SUITE("causal") {

TEST_CASE("first token's normalized output is its value row") {
    const auto [q, k, v] = gaussian_qkv(9, 2, 3);
    const AttentionConfig cfg = causal_config(2, 2);
    const Matrix chunk = chunkwise_causal_forward(q, k, v, cfg);
    const Matrix naive = naive_causal_oracle(q, k, v, cfg);
    for (std::size_t c = 0; c < 3; ++c) {
        CHECK(chunk(0, c) == doctest::Approx(v(0, c)).epsilon(1e-14));
        CHECK(naive(0, c) == doctest::Approx(v(0, c)).epsilon(1e-14));
    }
}

TEST_CASE("single chunk reduces to the causal linear-attention recurrence") {
    const std::size_t n = 16, d = 3;
    const auto [q, k, v] = gaussian_qkv(10, n, d);
    AttentionConfig cfg;
    cfg.partition = make_partition(n, 1);
    cfg.coefficients = CoefficientMatrix(Matrix(1, 1, 1.0), /*causal=*/true);
    const Matrix out = chunkwise_causal_forward(q, k, v, cfg);

    // reference: per-token state recurrence S += k v^T, z += k, o = qS / qz
    const Matrix qf = apply_feature_map(q, FeatureMap::EluPlusOne);
    const Matrix kf = apply_feature_map(k, FeatureMap::EluPlusOne);
    Matrix state(d, d);
    std::vector<double> z(d, 0.0);
    for (std::size_t t = 0; t < n; ++t) {
        for (std::size_t a = 0; a < d; ++a) {
            for (std::size_t c = 0; c < d; ++c) state(a, c) += kf(t, a) * v(t, c);
            z[a] += kf(t, a);
        }
        double den = 0.0;
        std::vector<double> num(d, 0.0);
        for (std::size_t a = 0; a < d; ++a) {
            for (std::size_t c = 0; c < d; ++c) num[c] += qf(t, a) * state(a, c);
            den += qf(t, a) * z[a];
        }
        for (std::size_t c = 0; c < d; ++c) {
            CHECK(out(t, c) == doctest::Approx(num[c] / den).epsilon(1e-12));
        }
    }
}

TEST_CASE("chunkwise matches the naive per-prefix oracle") {
    const auto [q, k, v] = gaussian_qkv(5, 32, 4);
    const AttentionConfig cfg = causal_config(32, 4);
    const Matrix chunk = chunkwise_causal_forward(q, k, v, cfg);
    const Matrix naive = naive_causal_oracle(q, k, v, cfg);
    CHECK(oracle::rel_max_diff(chunk, naive) <= 1e-11);
}

TEST_CASE("naive oracle with identity map and one block is masked (QK^T)V") {
    const std::size_t n = 8, d = 3;
    const auto [q, k, v] = gaussian_qkv(11, n, d);
    AttentionConfig cfg;
    cfg.feature_map = FeatureMap::Identity;
    cfg.normalize = false;
    cfg.partition = make_partition(n, 1);
    cfg.coefficients = CoefficientMatrix(Matrix(1, 1, 1.0), true);
    Matrix masked = gemm(q, k, false, true);
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = r + 1; c < n; ++c) masked(r, c) = 0.0;
    }
    const Matrix expected = gemm(masked, v);
    const Matrix out = naive_causal_oracle(q, k, v, cfg);
    CHECK(max_abs_diff(out, expected) <= 1e-12 * std::max(1.0, max_abs(expected)));
}

TEST_CASE("triple equivalence holds across seeds and normalize settings") {
    for (std::uint64_t seed = 0; seed < 12; ++seed) {
        const std::size_t m = 1 + seed % 5;
        const std::size_t n = m * (2 + seed % 4);
        const std::size_t d = 2 + seed % 5;
        const auto [q, k, v] = gaussian_qkv(500 + seed, n, d);
        const bool normalize = seed % 2 == 0;
        const AttentionConfig cfg =
            causal_config(n, m, FeatureMap::EluPlusOne, normalize, 77 + seed);
        const Matrix naive = naive_causal_oracle(q, k, v, cfg);
        const Matrix chunk = chunkwise_causal_forward(q, k, v, cfg);
        const Matrix streamed = stream_whole(q, k, v, cfg);
        CHECK(oracle::rel_max_diff(naive, chunk) <= 1e-10);
        CHECK(oracle::rel_max_diff(chunk, streamed) <= 1e-10);
        // independent route: the per-token loop with the causal cutoff
        const Matrix ref = oracle::mhla_attention(q, k, v, *cfg.partition,
                                                  cfg.coefficients->weights(),
                                                  FeatureMap::EluPlusOne, normalize,
                                                  /*causal=*/true);
        CHECK(oracle::rel_max_diff(naive, ref) <= 1e-11);
    }
}

TEST_CASE("zeroing future tokens never changes past outputs, bit for bit") {
    const std::size_t n = 64, d = 4, m = 8;
    const auto [q, k, v] = gaussian_qkv(6, n, d);
    const AttentionConfig cfg = causal_config(n, m, FeatureMap::EluPlusOne, true, 13);
    const Matrix base_chunk = chunkwise_causal_forward(q, k, v, cfg);
    const Matrix base_stream = stream_whole(q, k, v, cfg);
    for (std::size_t t = 0; t < n; ++t) {
        Matrix k2 = k, v2 = v;
        for (std::size_t j = t + 1; j < n; ++j) {
            for (std::size_t c = 0; c < d; ++c) {
                k2(j, c) = 0.0;
                v2(j, c) = 0.0;
            }
        }
        const Matrix chunk = chunkwise_causal_forward(q, k2, v2, cfg);
        const Matrix streamed = stream_whole(q, k2, v2, cfg);
        for (std::size_t r = 0; r <= t; ++r) {
            for (std::size_t c = 0; c < d; ++c) {
                CHECK(chunk(r, c) == base_chunk(r, c));
                CHECK(streamed(r, c) == base_stream(r, c));
            }
        }
    }
}

TEST_CASE("streaming reproduces the chunkwise rows step by step") {
    const std::size_t n = 32, d = 4, m = 4;
    const auto [q, k, v] = gaussian_qkv(12, n, d);
    for (const bool normalize : {true, false}) {
        const AttentionConfig cfg = causal_config(n, m, FeatureMap::EluPlusOne, normalize, 21);
        const Matrix chunk = chunkwise_causal_forward(q, k, v, cfg);
        const Matrix streamed = stream_whole(q, k, v, cfg);
        CHECK(oracle::rel_max_diff(chunk, streamed) <= 1e-10);
    }
}

TEST_CASE("stream state machine") {
    const std::size_t n = 12, d = 2, m = 3;
    const auto [q, k, v] = gaussian_qkv(13, n, d);
    const AttentionConfig cfg = causal_config(n, m);
    StreamState state = stream_init(cfg);
    CHECK(state.block_index() == 0);
    CHECK(state.tokens_in_current_block() == 0);
    CHECK(state.completed_blocks() == 0);
    CHECK(max_abs(state.current_summary()) == 0.0);

    SUBCASE("first normalized output is the first value row") {
        const auto out = stream_step(state, q.row_span(0), k.row_span(0), v.row_span(0));
        for (std::size_t c = 0; c < d; ++c) {
            CHECK(out[c] == doctest::Approx(v(0, c)).epsilon(1e-14));
        }
    }

    SUBCASE("filling a block seals it immediately") {
        for (std::size_t t = 0; t < 4; ++t) {
            (void)stream_step(state, q.row_span(t), k.row_span(t), v.row_span(t));
        }
        CHECK(state.completed_blocks() == 1);
        CHECK(state.block_index() == 1);
        CHECK(state.tokens_in_current_block() == 0);
        CHECK(max_abs(state.current_summary()) == 0.0);
    }

    SUBCASE("two inits from the same config agree") {
        StreamState a = stream_init(cfg);
        StreamState b = stream_init(cfg);
        const auto ra = stream_step(a, q.row_span(0), k.row_span(0), v.row_span(0));
        const auto rb = stream_step(b, q.row_span(0), k.row_span(0), v.row_span(0));
        CHECK(ra == rb);
    }

    SUBCASE("feeding past the coefficient capacity is rejected") {
        for (std::size_t t = 0; t < n; ++t) {
            (void)stream_step(state, q.row_span(t), k.row_span(t), v.row_span(t));
        }
        CHECK(state.block_index() == m);
        CHECK_THROWS_AS((void)stream_step(state, q.row_span(0), k.row_span(0), v.row_span(0)),
                        std::invalid_argument);
    }
}

TEST_CASE("all-ones coefficients give the running prefix-sum recurrence") {
    const std::size_t n = 32, d = 3, m = 8;
    const auto [q, k, v] = gaussian_qkv(14, n, d);
    AttentionConfig cfg;
    cfg.partition = make_partition(n, m);
    cfg.coefficients = causal_mask(CoefficientMatrix(Matrix(m, m, 1.0)));
    StreamState state = stream_init(cfg);
    const SummaryStack stack =
        compute_local_summaries(apply_feature_map(k, cfg.feature_map), v, *cfg.partition);
    Matrix prev_prefix;
    for (std::size_t t = 0; t < n; ++t) {
        const bool entering = state.tokens_in_current_block() == 0;
        const std::size_t sealed_before = state.completed_blocks();
        (void)stream_step(state, q.row_span(t), k.row_span(t), v.row_span(t));
        if (entering) {
            const Matrix& prefix = state.mixed_prefix_summary();
            if (sealed_before > 0) {
                // prefix_i == prefix_{i-1} + S_{i-1}, exactly
                Matrix expected = prev_prefix;
                for (std::size_t e = 0; e < expected.size(); ++e) {
                    expected.data()[e] += stack.summaries[sealed_before - 1].data()[e];
                }
                CHECK(max_abs_diff(prefix, expected) == 0.0);
            }
            prev_prefix = prefix;
        }
    }
}

TEST_CASE("checkpoint and resume reproduce the uninterrupted stream bitwise") {
    const std::size_t n = 32, d = 4, m = 4;
    const auto [q, k, v] = gaussian_qkv(15, n, d);
    const AttentionConfig cfg = causal_config(n, m, FeatureMap::EluPlusOne, true, 33);
    const Matrix whole = stream_whole(q, k, v, cfg);

    const auto path =
        (std::filesystem::temp_directory_path() / "mhla_stream_checkpoint.bin").string();
    for (const std::size_t cut : {std::size_t{8}, std::size_t{13}}) {  // boundary and mid-block
        StreamState state = stream_init(cfg);
        for (std::size_t t = 0; t < cut; ++t) {
            (void)stream_step(state, q.row_span(t), k.row_span(t), v.row_span(t));
        }
        save_fixture(path, state.to_tensors());  // checkpoint through the wire format
        const auto checkpoint = load_fixture(path);
        std::filesystem::remove(path);
        StreamState resumed = stream_restore(cfg, checkpoint);
        CHECK(resumed.block_index() == state.block_index());
        CHECK(resumed.tokens_in_current_block() == state.tokens_in_current_block());
        for (std::size_t t = cut; t < n; ++t) {
            const auto row = stream_step(resumed, q.row_span(t), k.row_span(t), v.row_span(t));
            for (std::size_t c = 0; c < d; ++c) CHECK(row[c] == whole(t, c));
        }
    }
}

TEST_CASE("per-step stream cost is flat across block indices") {
    // O(d^2) per token: the median in-block step near the end of a long
    // stream must stay within noise of the median near the start. Boundary
    // steps (which pay the O(M d^2) prefix mix) are excluded.
    const std::size_t d = 64, m = 64, block = 64, n = m * block;
    const auto [q, k, v] = gaussian_qkv(99, n, d);
    AttentionConfig cfg;
    cfg.partition = make_partition(n, m);
    cfg.coefficients = causal_mask(locality_init(*cfg.partition));
    StreamState state = stream_init(cfg);

    const auto median_block_step = [&](std::size_t block_index) {
        std::vector<double> samples;
        for (std::size_t r = 0; r < block; ++r) {
            const std::size_t t = block_index * block + r;
            const auto start = std::chrono::steady_clock::now();
            (void)stream_step(state, q.row_span(t), k.row_span(t), v.row_span(t));
            const auto stop = std::chrono::steady_clock::now();
            if (r > 0) {  // skip the boundary step
                samples.push_back(std::chrono::duration<double>(stop - start).count());
            }
        }
        std::sort(samples.begin(), samples.end());
        return samples[samples.size() / 2];
    };

    double early = 0.0, late = 0.0;
    for (std::size_t b = 0; b < m; ++b) {
        const double med = median_block_step(b);
        if (b == 1) early = med;
        if (b == m - 1) late = med;
    }
    CHECK(late <= 2.0 * early);
    CHECK(early <= 2.0 * late);
}

TEST_CASE("causal preconditions are enforced") {
    const auto [q, k, v] = gaussian_qkv(16, 16, 2);
    SUBCASE("non-causal coefficients are rejected") {
        AttentionConfig cfg;
        cfg.partition = make_partition(16, 4);
        cfg.coefficients = locality_init(*cfg.partition);
        CHECK_THROWS_AS((void)chunkwise_causal_forward(q, k, v, cfg), std::invalid_argument);
        CHECK_THROWS_AS((void)naive_causal_oracle(q, k, v, cfg), std::invalid_argument);
        CHECK_THROWS_AS((void)stream_init(cfg), std::invalid_argument);
    }
    SUBCASE("grid-2d partitions are rejected") {
        AttentionConfig cfg;
        cfg.partition = make_grid_partition(4, 4, 2, 2);
        cfg.coefficients = causal_mask(locality_init(*cfg.partition));
        CHECK_THROWS_WITH_AS((void)chunkwise_causal_forward(q, k, v, cfg),
                             doctest::Contains("grid-2d"), std::invalid_argument);
    }
}

}  // TEST_SUITE
