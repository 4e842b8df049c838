#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "mhla/diagnostics.hpp"
#include "mhla/gradients.hpp"

namespace mhla {

/// One timed (mechanism, N) cell. Skipped records mark sweeps the memory
/// budget rejected, so mechanism sweeps stay comparable.
struct BenchRecord {
    Mechanism mechanism = Mechanism::Mhla;
    std::size_t n = 0;
    std::size_t d = 0;
    std::size_t m = 1;
    std::size_t repetitions = 0;
    double median_seconds = 0.0;
    double tokens_per_second = 0.0;
    bool skipped = false;
};

enum class MRule { Fixed, FloorSqrtN };
enum class BenchPrecision { Double, Single };

struct RunConfig {
    std::vector<Mechanism> mechanisms{Mechanism::Softmax, Mechanism::Linear, Mechanism::Mhla};
    std::vector<std::size_t> n_sweep{1024, 4096, 16384};
    std::size_t d = 64;
    MRule m_rule = MRule::FloorSqrtN;
    std::size_t fixed_m = 16;
    FeatureMap feature_map = FeatureMap::EluPlusOne;
    bool normalize = true;
    std::uint64_t seed = 0;
    BenchPrecision precision = BenchPrecision::Double;
    std::size_t repetitions = 5;
    std::size_t mem_budget_bytes = 0;  // 0 = default_mem_budget()
    std::string out_path;              // empty = stdout (CLI concern)
};

/// 4 GiB unless MHLA_MEM_BUDGET_BYTES overrides it.
std::size_t default_mem_budget();

/// Largest divisor m of n with m*m <= n (the "floor-sqrt-n" head rule, kept
/// divisible so the partition is exact).
std::size_t floor_sqrt_blocks(std::size_t n);

/// Timed sweep: per (mechanism, N) one discarded warm-up plus >= 5 timed
/// repetitions on byte-identical seeded inputs; the median is reported.
/// Input hashes and skip decisions are written to `log` as CSV comments.
std::vector<BenchRecord> run_benchmark(const RunConfig& cfg, std::ostream* log = nullptr);

/// Least-squares slope of log(median_seconds) vs log(N) over the mechanism's
/// non-skipped records. Needs >= 3 points spanning >= 8x in N.
double fit_scaling_exponent(const std::vector<BenchRecord>& records, Mechanism mechanism);

// CSV emission (schemas are part of the external interface and stable).
inline constexpr const char* kBenchCsvHeader =
    "mechanism,n,d,m,reps,median_seconds,tokens_per_second";
inline constexpr const char* kDiagnosticsCsvHeader =
    "mechanism,N,d,M,rank,rank_bound,entropy,normalized_entropy,seed";
inline constexpr const char* kDistillCsvHeader = "step,loss";

struct SeededReport {
    std::uint64_t seed = 0;
    DiagnosticsReport report;
};

void write_bench_csv(std::ostream& out, const std::vector<BenchRecord>& records,
                     const std::string& comments = {}, bool include_header = true);
std::vector<BenchRecord> parse_bench_csv(std::istream& in);

void write_diagnostics_csv(std::ostream& out, const std::vector<SeededReport>& rows);
std::vector<SeededReport> parse_diagnostics_csv(std::istream& in);

void write_distill_csv(std::ostream& out, const std::vector<TrainRecord>& trace);

/// Shortest round-trip decimal form of a double (%.17g).
std::string format_double(double x);

}  // namespace mhla
