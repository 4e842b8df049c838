#include "verify.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <future>
#include <random>

#include "mhla/bench.hpp"
#include "mhla/causal.hpp"
#include "mhla/fixture.hpp"
#include "mhla/random.hpp"

namespace mhla::cli {

namespace {

std::string fmt_err(double x) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.3e", x);
    return buf;
}

double rel_diff(const Matrix& a, const Matrix& b) {
    const double scale = std::max({max_abs(a), max_abs(b), 1e-12});
    return max_abs_diff(a, b) / scale;
}

Matrix row_stochastic(std::mt19937_64& engine, std::size_t m, double cap = 1.0) {
    std::uniform_real_distribution<double> uniform(0.05, 1.0);
    Matrix w(m, m);
    for (std::size_t i = 0; i < m; ++i) {
        double sum = 0.0;
        for (std::size_t j = 0; j < m; ++j) {
            w(i, j) = uniform(engine);
            sum += w(i, j);
        }
        for (std::size_t j = 0; j < m; ++j) w(i, j) *= cap / sum;
    }
    return w;
}

VerifyCheck check_tensor_basics(std::uint64_t) {
    const Matrix prod = gemm(Matrix::from_rows({{1, 2}, {3, 4}}), Matrix::from_rows({{5, 6}, {7, 8}}));
    const double gemm_err = max_abs_diff(prod, Matrix::from_rows({{19, 22}, {43, 50}}));

    double softmax_err = 0.0;
    const Matrix sm = row_softmax(gaussian_matrix(1, 16, 8), 1.0);
    for (std::size_t i = 0; i < sm.rows(); ++i) {
        double sum = 0.0;
        for (std::size_t j = 0; j < sm.cols(); ++j) sum += sm(i, j);
        softmax_err = std::max(softmax_err, std::abs(sum - 1.0));
    }

    const auto sigma = singular_values(Matrix::from_rows({{3, 0}, {0, 4}}));
    const double svd_err = std::max(std::abs(sigma[0] - 4.0), std::abs(sigma[1] - 3.0));

    const double worst = std::max({gemm_err, softmax_err, svd_err});
    return {"tensor-basics", worst <= 1e-12, "max err " + fmt_err(worst)};
}

VerifyCheck check_forward_vs_expansion(std::uint64_t seed) {
    std::mt19937_64 engine(seed + 101);
    double worst = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t m = 1 + engine() % 8;
        const std::size_t n = m * (1 + engine() % 8);
        const std::size_t d = 1 + engine() % 16;
        const auto [q, k, v] = gaussian_qkv(seed * 1000 + trial, n, d);
        AttentionConfig cfg;
        cfg.feature_map = trial % 2 ? FeatureMap::EluPlusOne : FeatureMap::Relu;
        cfg.normalize = trial % 3 != 0;
        cfg.partition = make_partition(n, m);
        cfg.coefficients = CoefficientMatrix(row_stochastic(engine, m));
        try {
            worst = std::max(
                worst, rel_diff(mhla_forward(q, k, v, cfg), mhla_token_expansion(q, k, v, cfg)));
        } catch (const std::runtime_error&) {
            continue;  // relu degenerate normalizer; both routes reject alike
        }
    }
    return {"forward-vs-token-expansion", worst <= 1e-11, "max rel err " + fmt_err(worst)};
}

VerifyCheck check_reduction_identities(std::uint64_t seed) {
    double worst = 0.0;
    for (std::uint64_t s = 0; s < 10; ++s) {
        const std::size_t n = 16, d = 4, m = 4;
        const auto [q, k, v] = gaussian_qkv(seed + s, n, d);
        AttentionConfig lin;
        const Matrix global = linear_attention(q, k, v, lin);

        AttentionConfig single;
        single.partition = make_partition(n, 1);
        single.coefficients = CoefficientMatrix(Matrix(1, 1, 1.0));
        worst = std::max(worst, rel_diff(mhla_forward(q, k, v, single), global));

        AttentionConfig uniform;
        uniform.partition = make_partition(n, m);
        uniform.coefficients = CoefficientMatrix(Matrix(m, m, 1.0 / m));
        worst = std::max(worst, rel_diff(mhla_forward(q, k, v, uniform), global));
    }
    return {"reduction-identities", worst <= 1e-12, "max rel err " + fmt_err(worst)};
}

VerifyCheck check_causal_triple(std::uint64_t seed) {
    std::mt19937_64 engine(seed + 55);
    double worst = 0.0;
    bool causality_ok = true;
    for (std::uint64_t s = 0; s < 10; ++s) {
        const std::size_t m = 1 + s % 4;
        const std::size_t n = m * (2 + s % 3);
        const std::size_t d = 2 + s % 4;
        const auto [q, k, v] = gaussian_qkv(seed * 77 + s, n, d);
        AttentionConfig cfg;
        cfg.normalize = s % 2 == 0;
        cfg.partition = make_partition(n, m);
        cfg.coefficients = causal_mask(CoefficientMatrix(row_stochastic(engine, m)));
        const Matrix naive = naive_causal_oracle(q, k, v, cfg);
        const Matrix chunk = chunkwise_causal_forward(q, k, v, cfg);
        StreamState state = stream_init(cfg);
        Matrix streamed(n, d);
        for (std::size_t t = 0; t < n; ++t) {
            const auto row = stream_step(state, q.row_span(t), k.row_span(t), v.row_span(t));
            std::copy(row.begin(), row.end(), streamed.row(t));
        }
        worst = std::max({worst, rel_diff(naive, chunk), rel_diff(chunk, streamed)});

        if (s == 0 && n >= 4) {
            Matrix k2 = k, v2 = v;
            const std::size_t cut = n / 2;
            for (std::size_t j = cut; j < n; ++j) {
                for (std::size_t c = 0; c < d; ++c) {
                    k2(j, c) = 0.0;
                    v2(j, c) = 0.0;
                }
            }
            const Matrix zeroed = chunkwise_causal_forward(q, k2, v2, cfg);
            for (std::size_t t = 0; t < cut; ++t) {
                for (std::size_t c = 0; c < d; ++c) {
                    causality_ok = causality_ok && zeroed(t, c) == chunk(t, c);
                }
            }
        }
    }
    return {"causal-triple-equivalence", worst <= 1e-10 && causality_ok,
            "max rel err " + fmt_err(worst) + (causality_ok ? ", causality bit-exact" : ", causality VIOLATED")};
}

VerifyCheck check_gradients(std::uint64_t seed) {
    std::mt19937_64 engine(seed + 7);
    double worst = 0.0;
    for (int trial = 0; trial < 8; ++trial) {
        const std::size_t m = 1 + engine() % 3;
        const std::size_t n = m * (2 + engine() % 3);
        const std::size_t d = 2 + engine() % 3;
        const auto [q, k, v] = gaussian_qkv(seed * 31 + trial, n, d);
        const Matrix upstream = gaussian_matrix(seed * 31 + trial + 9000, n, d);
        AttentionConfig cfg;
        cfg.normalize = trial % 2 == 0;
        cfg.partition = make_partition(n, m);
        cfg.coefficients = CoefficientMatrix(row_stochastic(engine, m, 0.9));
        const GradientBundle g = mhla_backward(q, k, v, cfg, upstream);

        const auto loss_at = [&](const Matrix& qq, const Matrix& kk, const Matrix& vv,
                                 const CoefficientMatrix& cc) {
            AttentionConfig probe = cfg;
            probe.coefficients = cc;
            const Matrix y = mhla_forward(qq, kk, vv, probe);
            double acc = 0.0;
            for (std::size_t e = 0; e < y.size(); ++e) acc += upstream.data()[e] * y.data()[e];
            return acc;
        };
        const auto fd_vs = [&](const Matrix& analytic, const Matrix& base, int which) {
            const auto fn = [&](std::span<const double> flat) {
                Matrix probe = base;
                std::copy(flat.begin(), flat.end(), probe.data().begin());
                if (which == 0) return loss_at(probe, k, v, *cfg.coefficients);
                if (which == 1) return loss_at(q, probe, v, *cfg.coefficients);
                return loss_at(q, k, probe, *cfg.coefficients);
            };
            const auto fd = finite_diff_grad(fn, base.data(), 1e-5);
            for (std::size_t e = 0; e < analytic.size(); ++e) {
                const double err = std::abs(analytic.data()[e] - fd[e]);
                const double bound =
                    std::max(1e-4 * std::max(std::abs(analytic.data()[e]), std::abs(fd[e])), 1e-7);
                worst = std::max(worst, err / bound);
            }
        };
        fd_vs(g.d_q, q, 0);
        fd_vs(g.d_k, k, 1);
        fd_vs(g.d_v, v, 2);
    }
    return {"gradient-finite-difference", worst <= 1.0,
            "worst err/bound ratio " + fmt_err(worst)};
}

VerifyCheck check_fixture_roundtrip(std::uint64_t seed) {
    namespace fs = std::filesystem;
    const fs::path path = fs::temp_directory_path() / "mhla_verify_fixture.bin";
    bool ok = true;
    for (int round = 0; round < 20 && ok; ++round) {
        TensorMap tensors;
        std::mt19937_64 engine(seed + round);
        const int count = 1 + static_cast<int>(engine() % 4);
        for (int i = 0; i < count; ++i) {
            tensors.emplace("t" + std::to_string(i),
                            gaussian_matrix(engine(), 1 + engine() % 9, 1 + engine() % 9));
        }
        save_fixture(path.string(), tensors);
        const TensorMap loaded = load_fixture(path.string());
        ok = loaded.size() == tensors.size();
        for (const auto& [name, tensor] : tensors) {
            const auto it = loaded.find(name);
            if (it == loaded.end() || !it->second.same_shape(tensor)) {
                ok = false;
                break;
            }
            for (std::size_t e = 0; e < tensor.size(); ++e) {
                if (std::memcmp(&tensor.data()[e], &it->second.data()[e], sizeof(double)) != 0) {
                    ok = false;
                }
            }
        }
    }
    std::error_code ec;
    fs::remove(path, ec);
    return {"fixture-roundtrip", ok, ok ? "20 tensor sets bitwise identical" : "mismatch"};
}

}  // namespace

std::vector<VerifyCheck> run_verify_checks(std::uint64_t seed, bool parallel) {
    using CheckFn = VerifyCheck (*)(std::uint64_t);
    const CheckFn checks[] = {
        check_tensor_basics,     check_forward_vs_expansion, check_reduction_identities,
        check_causal_triple,     check_gradients,            check_fixture_roundtrip,
    };
    std::vector<VerifyCheck> results;
    if (parallel) {
        std::vector<std::future<VerifyCheck>> futures;
        futures.reserve(std::size(checks));
        for (const CheckFn fn : checks) {
            futures.push_back(std::async(std::launch::async, fn, seed));
        }
        for (auto& f : futures) results.push_back(f.get());  // fixed order
    } else {
        for (const CheckFn fn : checks) results.push_back(fn(seed));
    }
    return results;
}

}  // namespace mhla::cli
