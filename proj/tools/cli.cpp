#include "cli.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "mhla/bench.hpp"
#include "mhla/causal.hpp"
#include "mhla/fixture.hpp"
#include "mhla/random.hpp"
#include "verify.hpp"

namespace mhla::cli {

namespace {

constexpr int kExitOk = 0;
constexpr int kExitCheckFailure = 1;
constexpr int kExitUsage = 2;
constexpr int kExitIo = 3;

std::vector<std::string> split_list(const std::string& csv) {
    std::vector<std::string> items;
    std::string item;
    std::istringstream in(csv);
    while (std::getline(in, item, ',')) {
        if (!item.empty()) items.push_back(item);
    }
    return items;
}

std::vector<std::size_t> parse_sizes(const std::string& csv) {
    std::vector<std::size_t> out;
    for (const std::string& item : split_list(csv)) out.push_back(std::stoull(item));
    return out;
}

// Writes to the path when set, stdout otherwise; `append` keeps an existing
// benchmark CSV growing instead of truncating it.
class OutputTarget {
public:
    OutputTarget(const std::string& path, bool append) {
        if (path.empty()) return;
        existed_ = std::filesystem::exists(path) && std::filesystem::file_size(path) > 0;
        file_.open(path, append ? std::ios::app : std::ios::trunc);
        if (!file_) {
            throw FixtureError(FixtureErrorKind::Io, "cannot open '" + path + "' for writing");
        }
    }
    std::ostream& stream() { return file_.is_open() ? file_ : std::cout; }
    bool fresh() const { return !existed_; }

private:
    std::ofstream file_;
    bool existed_ = false;
};

RunConfig bench_config_from_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw FixtureError(FixtureErrorKind::Io, "cannot open config '" + path + "'");
    }
    nlohmann::json j;
    in >> j;
    RunConfig cfg;
    if (j.contains("mechanisms")) {
        cfg.mechanisms.clear();
        for (const auto& name : j["mechanisms"]) {
            cfg.mechanisms.push_back(mechanism_from_string(name.get<std::string>()));
        }
    }
    if (j.contains("n")) cfg.n_sweep = j["n"].get<std::vector<std::size_t>>();
    if (j.contains("d")) cfg.d = j["d"].get<std::size_t>();
    if (j.contains("m_rule")) {
        const std::string rule = j["m_rule"].get<std::string>();
        if (rule == "fixed") {
            cfg.m_rule = MRule::Fixed;
        } else if (rule == "floor-sqrt-n") {
            cfg.m_rule = MRule::FloorSqrtN;
        } else {
            throw std::invalid_argument("config: unknown m_rule '" + rule + "'");
        }
    }
    if (j.contains("m")) cfg.fixed_m = j["m"].get<std::size_t>();
    if (j.contains("feature_map")) {
        cfg.feature_map = feature_map_from_string(j["feature_map"].get<std::string>());
    }
    if (j.contains("normalize")) cfg.normalize = j["normalize"].get<bool>();
    if (j.contains("seed")) cfg.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("precision")) {
        const std::string prec = j["precision"].get<std::string>();
        if (prec == "double") {
            cfg.precision = BenchPrecision::Double;
        } else if (prec == "single") {
            cfg.precision = BenchPrecision::Single;
        } else {
            throw std::invalid_argument("config: unknown precision '" + prec + "'");
        }
    }
    if (j.contains("reps")) cfg.repetitions = j["reps"].get<std::size_t>();
    if (j.contains("out")) cfg.out_path = j["out"].get<std::string>();
    return cfg;
}

int run_verify(std::uint64_t seed, bool parallel) {
    const auto results = run_verify_checks(seed, parallel);
    bool all_passed = true;
    for (const VerifyCheck& check : results) {
        std::cout << (check.passed ? "PASS" : "FAIL") << "  " << check.name << " ("
                  << check.detail << ")\n";
        all_passed = all_passed && check.passed;
    }
    std::cout << (all_passed ? "verify: all checks passed\n" : "verify: CHECKS FAILED\n");
    return all_passed ? kExitOk : kExitCheckFailure;
}

int run_diagnose(std::size_t n, std::size_t d, std::size_t m, std::size_t seeds,
                 std::uint64_t seed0, double init_floor, const std::string& out_path) {
    std::vector<SeededReport> rows;
    rows.reserve(seeds * 3);
    for (std::uint64_t s = 0; s < seeds; ++s) {
        for (const DiagnosticsReport& report : collapse_report(seed0 + s, n, d, m, init_floor)) {
            rows.push_back({seed0 + s, report});
        }
    }
    OutputTarget target(out_path, /*append=*/false);
    write_diagnostics_csv(target.stream(), rows);
    return kExitOk;
}

int run_bench(RunConfig cfg) {
    std::ostringstream comments;
    const auto records = run_benchmark(cfg, &comments);

    std::ostringstream slopes;
    for (const Mechanism mech : cfg.mechanisms) {
        slopes << "# slope mechanism=" << to_string(mech) << " ";
        try {
            slopes << "exponent=" << format_double(fit_scaling_exponent(records, mech)) << "\n";
        } catch (const std::invalid_argument&) {
            slopes << "status=insufficient-points (need >=3 spanning >=8x in N)\n";
        }
    }

    OutputTarget target(cfg.out_path, /*append=*/true);
    write_bench_csv(target.stream(), records, comments.str(), target.fresh());
    target.stream() << slopes.str();
    target.stream().flush();
    if (!cfg.out_path.empty()) {
        std::cout << slopes.str();  // slope summary still lands on stdout
    }
    return kExitOk;
}

int run_distill(std::size_t n, std::size_t d, std::size_t m, std::size_t steps, double lr,
                std::uint64_t seed, double init_floor, const std::string& out_path,
                const std::string& save_path) {
    auto [q, k, v] = gaussian_qkv(seed, n, d);
    // The kernel similarity carries no 1/sqrt(d); scaling Q and K by d^(-1/4)
    // puts its raw dot products at the softmax target's logit magnitude.
    const double scale = std::pow(static_cast<double>(d), -0.25);
    for (double& x : q.data()) x *= scale;
    for (double& x : k.data()) x *= scale;
    const Matrix target = softmax_attention(q, k, v);
    AttentionConfig cfg;
    cfg.partition = make_partition(n, m);
    cfg.coefficients = locality_init(*cfg.partition, init_floor);
    const DistillResult result = distill_coefficients(q, k, v, target, cfg, steps, lr);

    OutputTarget out(out_path, /*append=*/false);
    write_distill_csv(out.stream(), result.trace);
    if (!save_path.empty()) {
        save_fixture(save_path, result.coefficients.to_tensors());
    }
    if (!result.trace.empty()) {
        const Matrix y = mhla_forward(q, k, v,
                                      [&] {
                                          AttentionConfig final_cfg = cfg;
                                          final_cfg.coefficients = result.coefficients;
                                          return final_cfg;
                                      }());
        double final_mse = 0.0;
        for (std::size_t e = 0; e < y.size(); ++e) {
            const double r = y.data()[e] - target.data()[e];
            final_mse += r * r;
        }
        final_mse /= static_cast<double>(y.size());
        std::cerr << "distill: initial_mse=" << format_double(result.trace.front().loss)
                  << " final_mse=" << format_double(final_mse) << "\n";
    }
    return kExitOk;
}

}  // namespace

int run(int argc, char** argv) {
    CLI::App app{
        "Multi-head linear attention workbench: oracle verification, collapse diagnostics, "
        "scaling benchmarks, and coefficient distillation"};
    app.require_subcommand(1);

    std::uint64_t seed = 0;
    app.add_option("--seed", seed, "Base seed for all generated inputs")->capture_default_str();
    app.fallthrough();  // lets --seed appear after the subcommand name

    auto* verify = app.add_subcommand("verify", "Run the oracle-equivalence suites");
    bool parallel = false;
    verify->add_flag("--parallel", parallel,
                     "Run independent checks across cores (output order is unchanged)");

    auto* diagnose =
        app.add_subcommand("diagnose", "Emit rank/entropy collapse reports as CSV");
    std::size_t diag_n = 256, diag_d = 16, diag_m = 16, diag_seeds = 1;
    double init_floor = 0.0;
    std::string diag_out;
    diagnose->add_option("--n", diag_n, "Sequence length (a compatible square gives a 2D grid)")
        ->capture_default_str();
    diagnose->add_option("--d", diag_d, "Head dimension")->capture_default_str();
    diagnose->add_option("--m", diag_m, "Number of token blocks")->capture_default_str();
    diagnose->add_option("--seeds", diag_seeds, "Number of seeds, starting at --seed")
        ->capture_default_str();
    diagnose->add_option("--init-floor", init_floor,
                         "Added to every locality weight before normalization");
    diagnose->add_option("--out", diag_out, "CSV path (stdout when omitted)");

    auto* bench = app.add_subcommand("bench", "Time mechanisms over an N sweep and fit slopes");
    std::string mechanisms_csv = "softmax,linear,mhla";
    std::string n_csv = "1024,4096,16384";
    std::size_t bench_d = 64, bench_m = 16, reps = 5;
    std::string m_rule = "floor-sqrt-n";
    std::string feature_map = "elu-plus-one";
    std::string precision = "double";
    bool normalize = true;
    std::string bench_out, config_path;
    bench->add_option("--mechanisms", mechanisms_csv, "Comma list: softmax,linear,mhla")
        ->capture_default_str();
    bench->add_option("--n", n_csv, "Comma list of sequence lengths")->capture_default_str();
    bench->add_option("--d", bench_d, "Head dimension")->capture_default_str();
    bench->add_option("--m-rule", m_rule, "fixed | floor-sqrt-n")->capture_default_str();
    bench->add_option("--m", bench_m, "Block count when --m-rule=fixed")->capture_default_str();
    bench->add_option("--feature-map", feature_map, "identity | relu | elu-plus-one")
        ->capture_default_str();
    bench->add_option("--normalize", normalize, "Apply the kernel normalizer")
        ->capture_default_str();
    bench->add_option("--precision", precision, "double | single")->capture_default_str();
    bench->add_option("--reps", reps, "Timed repetitions per cell (>=5 enforced)")
        ->capture_default_str();
    bench->add_option("--out", bench_out, "CSV path, appended atomically (stdout when omitted)");
    bench->add_option("--config", config_path, "JSON RunConfig; explicit flags override it");

    auto* distill = app.add_subcommand(
        "distill", "Gradient-descend the mixing coefficients against a softmax target");
    std::size_t dis_n = 64, dis_d = 8, dis_m = 8, steps = 500;
    double lr = 0.1, dis_floor = 0.0;
    std::string dis_out, save_coefficients;
    distill->add_option("--n", dis_n, "Sequence length")->capture_default_str();
    distill->add_option("--d", dis_d, "Head dimension")->capture_default_str();
    distill->add_option("--m", dis_m, "Number of token blocks")->capture_default_str();
    distill->add_option("--steps", steps, "Gradient steps")->capture_default_str();
    distill->add_option("--lr", lr, "Learning rate")->capture_default_str();
    distill->add_option("--init-floor", dis_floor,
                        "Added to every locality weight before normalization");
    distill->add_option("--out", dis_out, "Loss-trace CSV path (stdout when omitted)");
    distill->add_option("--save-coefficients", save_coefficients,
                        "Write the trained coefficient matrix as a fixture");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        std::cout << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp& e) {
        std::cout << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n" << app.help();
        return kExitUsage;
    }

    try {
        if (verify->parsed()) {
            return run_verify(seed, parallel);
        }
        if (diagnose->parsed()) {
            return run_diagnose(diag_n, diag_d, diag_m, diag_seeds, seed, init_floor, diag_out);
        }
        if (bench->parsed()) {
            RunConfig cfg;
            if (!config_path.empty()) cfg = bench_config_from_json(config_path);
            if (bench->count("--mechanisms") || config_path.empty()) {
                cfg.mechanisms.clear();
                for (const std::string& name : split_list(mechanisms_csv)) {
                    cfg.mechanisms.push_back(mechanism_from_string(name));
                }
            }
            if (bench->count("--n") || config_path.empty()) cfg.n_sweep = parse_sizes(n_csv);
            if (bench->count("--d") || config_path.empty()) cfg.d = bench_d;
            if (bench->count("--m-rule") || config_path.empty()) {
                if (m_rule == "fixed") {
                    cfg.m_rule = MRule::Fixed;
                } else if (m_rule == "floor-sqrt-n") {
                    cfg.m_rule = MRule::FloorSqrtN;
                } else {
                    throw std::invalid_argument("--m-rule must be fixed or floor-sqrt-n");
                }
            }
            if (bench->count("--m")) cfg.fixed_m = bench_m;
            if (bench->count("--feature-map") || config_path.empty()) {
                cfg.feature_map = feature_map_from_string(feature_map);
            }
            if (bench->count("--normalize")) cfg.normalize = normalize;
            if (bench->count("--precision") || config_path.empty()) {
                if (precision == "double") {
                    cfg.precision = BenchPrecision::Double;
                } else if (precision == "single") {
                    cfg.precision = BenchPrecision::Single;
                } else {
                    throw std::invalid_argument("--precision must be double or single");
                }
            }
            if (bench->count("--reps")) cfg.repetitions = reps;
            if (app.count("--seed") || config_path.empty()) cfg.seed = seed;
            if (bench->count("--out")) cfg.out_path = bench_out;
            return run_bench(std::move(cfg));
        }
        if (distill->parsed()) {
            return run_distill(dis_n, dis_d, dis_m, steps, lr, seed, dis_floor, dis_out,
                               save_coefficients);
        }
    } catch (const FixtureError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return kExitIo;
    } catch (const std::invalid_argument& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitCheckFailure;
    }
    return kExitUsage;
}

}  // namespace mhla::cli
