#include "mhla/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "mhla/random.hpp"

namespace mhla {

std::size_t default_mem_budget() {
    if (const char* env = std::getenv("MHLA_MEM_BUDGET_BYTES")) {
        char* end = nullptr;
        const unsigned long long parsed = std::strtoull(env, &end, 10);
        if (end != env && *end == '\0' && parsed > 0) {
            return static_cast<std::size_t>(parsed);
        }
        throw std::invalid_argument("MHLA_MEM_BUDGET_BYTES must be a positive integer, got '" +
                                    std::string(env) + "'");
    }
    return std::size_t{4} * 1024 * 1024 * 1024;
}

std::size_t floor_sqrt_blocks(std::size_t n) {
    if (n == 0) throw std::invalid_argument("floor_sqrt_blocks: n must be positive");
    std::size_t best = 1;
    for (std::size_t m = 1; m * m <= n; ++m) {
        if (n % m == 0) best = m;
    }
    return best;
}

namespace {

// ---- Single-precision mirrors, local to the benchmark module. The double
// path times the real library kernels; these exist only so throughput can be
// measured at fp32. Same algorithms: two-pass linear, blockwise MHLA,
// materialized softmax.

struct FloatMatrix {
    std::size_t rows = 0, cols = 0;
    std::vector<float> data;
    FloatMatrix() = default;
    FloatMatrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0f) {}
    float* row(std::size_t r) { return data.data() + r * cols; }
    const float* row(std::size_t r) const { return data.data() + r * cols; }
};

FloatMatrix to_float(const Matrix& m) {
    FloatMatrix f(m.rows(), m.cols());
    for (std::size_t i = 0; i < m.size(); ++i) f.data[i] = static_cast<float>(m.data()[i]);
    return f;
}

FloatMatrix fgemm_nt(const FloatMatrix& a, const FloatMatrix& b) {  // a * b^T
    FloatMatrix c(a.rows, b.rows);
    for (std::size_t i = 0; i < a.rows; ++i) {
        const float* arow = a.row(i);
        float* crow = c.row(i);
        for (std::size_t j = 0; j < b.rows; ++j) {
            const float* brow = b.row(j);
            float acc = 0.0f;
            for (std::size_t k = 0; k < a.cols; ++k) acc += arow[k] * brow[k];
            crow[j] = acc;
        }
    }
    return c;
}

FloatMatrix fgemm_nn(const FloatMatrix& a, const FloatMatrix& b) {
    FloatMatrix c(a.rows, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i) {
        const float* arow = a.row(i);
        float* crow = c.row(i);
        for (std::size_t k = 0; k < a.cols; ++k) {
            const float av = arow[k];
            const float* brow = b.row(k);
            for (std::size_t j = 0; j < b.cols; ++j) crow[j] += av * brow[j];
        }
    }
    return c;
}

float fphi(float x, FeatureMap map) {
    switch (map) {
        case FeatureMap::Identity: return x;
        case FeatureMap::Relu: return x > 0.0f ? x : 0.0f;
        case FeatureMap::EluPlusOne: return x > 0.0f ? x + 1.0f : std::exp(x);
    }
    return x;
}

FloatMatrix fmap(const FloatMatrix& m, FeatureMap map) {
    FloatMatrix out = m;
    for (float& x : out.data) x = fphi(x, map);
    return out;
}

void fsoftmax_forward(const FloatMatrix& q, const FloatMatrix& k, const FloatMatrix& v,
                      FloatMatrix& out) {
    FloatMatrix scores = fgemm_nt(q, k);
    const float scale = 1.0f / std::sqrt(static_cast<float>(q.cols));
    for (std::size_t i = 0; i < scores.rows; ++i) {
        float* row = scores.row(i);
        float mx = row[0] * scale;
        for (std::size_t j = 0; j < scores.cols; ++j) mx = std::max(mx, row[j] * scale);
        float sum = 0.0f;
        for (std::size_t j = 0; j < scores.cols; ++j) {
            row[j] = std::exp(row[j] * scale - mx);
            sum += row[j];
        }
        const float inv = 1.0f / sum;
        for (std::size_t j = 0; j < scores.cols; ++j) row[j] *= inv;
    }
    out = fgemm_nn(scores, v);
}

void flinear_forward(const FloatMatrix& q_feat, const FloatMatrix& k_feat, const FloatMatrix& v,
                     bool normalize, FloatMatrix& out) {
    const std::size_t d = q_feat.cols;
    FloatMatrix summary(d, d);
    std::vector<float> z(d, 0.0f);
    for (std::size_t t = 0; t < k_feat.rows; ++t) {
        const float* kt = k_feat.row(t);
        const float* vt = v.row(t);
        for (std::size_t a = 0; a < d; ++a) {
            const float ka = kt[a];
            float* srow = summary.row(a);
            for (std::size_t c = 0; c < d; ++c) srow[c] += ka * vt[c];
            z[a] += ka;
        }
    }
    out = fgemm_nn(q_feat, summary);
    if (normalize) {
        for (std::size_t t = 0; t < out.rows; ++t) {
            const float* qt = q_feat.row(t);
            float den = 0.0f;
            for (std::size_t a = 0; a < d; ++a) den += qt[a] * z[a];
            const float inv = 1.0f / den;
            float* yt = out.row(t);
            for (std::size_t c = 0; c < d; ++c) yt[c] *= inv;
        }
    }
}

void fmhla_forward(const FloatMatrix& q_feat, const FloatMatrix& k_feat, const FloatMatrix& v,
                   const BlockPartition& partition, const FloatMatrix& coeffs, bool normalize,
                   FloatMatrix& out) {
    const std::size_t d = q_feat.cols;
    const std::size_t m = partition.num_blocks();
    std::vector<FloatMatrix> local(m, FloatMatrix(d, d));
    FloatMatrix local_z(m, d);
    for (std::size_t b = 0; b < m; ++b) {
        FloatMatrix& s = local[b];
        float* z = local_z.row(b);
        for (const std::size_t t : partition.tokens_of(b)) {
            const float* kt = k_feat.row(t);
            const float* vt = v.row(t);
            for (std::size_t a = 0; a < d; ++a) {
                const float ka = kt[a];
                float* srow = s.row(a);
                for (std::size_t c = 0; c < d; ++c) srow[c] += ka * vt[c];
                z[a] += ka;
            }
        }
    }
    for (std::size_t i = 0; i < m; ++i) {
        FloatMatrix mixed(d, d);
        std::vector<float> mixed_z(d, 0.0f);
        const float* w = coeffs.row(i);
        for (std::size_t b = 0; b < m; ++b) {
            for (std::size_t e = 0; e < d * d; ++e) mixed.data[e] += w[b] * local[b].data[e];
            const float* z = local_z.row(b);
            for (std::size_t a = 0; a < d; ++a) mixed_z[a] += w[b] * z[a];
        }
        for (const std::size_t t : partition.tokens_of(i)) {
            const float* qt = q_feat.row(t);
            float* yt = out.row(t);
            for (std::size_t a = 0; a < d; ++a) {
                const float qa = qt[a];
                const float* srow = mixed.row(a);
                for (std::size_t c = 0; c < d; ++c) yt[c] += qa * srow[c];
            }
            if (normalize) {
                float den = 0.0f;
                for (std::size_t a = 0; a < d; ++a) den += qt[a] * mixed_z[a];
                const float inv = 1.0f / den;
                for (std::size_t c = 0; c < d; ++c) yt[c] *= inv;
            }
        }
    }
}

double median_of(std::vector<double> samples) {
    std::sort(samples.begin(), samples.end());
    const std::size_t mid = samples.size() / 2;
    return samples.size() % 2 ? samples[mid] : 0.5 * (samples[mid - 1] + samples[mid]);
}

template <typename Fn>
double time_median(Fn&& fn, std::size_t reps) {
    // Warm-up (discarded) doubles as calibration: fast cells batch enough
    // calls per repetition to push scheduler noise below ~1%.
    const auto warm_start = std::chrono::steady_clock::now();
    fn();
    const auto warm_stop = std::chrono::steady_clock::now();
    const double warm = std::chrono::duration<double>(warm_stop - warm_start).count();
    constexpr double kMinRepSeconds = 0.025;
    const std::size_t batch =
        warm >= kMinRepSeconds
            ? 1
            : std::min<std::size_t>(10000, static_cast<std::size_t>(kMinRepSeconds /
                                                                    std::max(warm, 1e-9)) +
                                               1);
    std::vector<double> samples;
    samples.reserve(reps);
    for (std::size_t r = 0; r < reps; ++r) {
        const auto start = std::chrono::steady_clock::now();
        for (std::size_t b = 0; b < batch; ++b) fn();
        const auto stop = std::chrono::steady_clock::now();
        samples.push_back(std::chrono::duration<double>(stop - start).count() /
                          static_cast<double>(batch));
    }
    return median_of(std::move(samples));
}

char hex_digit(std::uint64_t x) { return "0123456789abcdef"[x & 0xf]; }

std::string hex64(std::uint64_t x) {
    std::string s = "0x";
    for (int shift = 60; shift >= 0; shift -= 4) s.push_back(hex_digit(x >> shift));
    return s;
}

}  // namespace

std::vector<BenchRecord> run_benchmark(const RunConfig& cfg, std::ostream* log) {
    if (cfg.n_sweep.empty() || cfg.mechanisms.empty()) {
        throw std::invalid_argument("run_benchmark: empty N sweep or mechanism list");
    }
    const std::size_t reps = std::max<std::size_t>(cfg.repetitions, 5);
    const std::size_t budget = cfg.mem_budget_bytes ? cfg.mem_budget_bytes : default_mem_budget();

    std::vector<BenchRecord> records;
    for (const std::size_t n : cfg.n_sweep) {
        const std::uint64_t input_seed = cfg.seed ^ (0x9e3779b97f4a7c15ull * (n + 1));
        const auto [q, k, v] = gaussian_qkv(input_seed, n, cfg.d);
        if (log) {
            *log << "# inputs n=" << n << " seed=" << input_seed
                 << " hash_q=" << hex64(fnv1a_hash(q)) << " hash_k=" << hex64(fnv1a_hash(k))
                 << " hash_v=" << hex64(fnv1a_hash(v)) << "\n";
        }

        const std::size_t blocks =
            cfg.m_rule == MRule::FloorSqrtN ? floor_sqrt_blocks(n) : cfg.fixed_m;
        if (n % blocks != 0) {
            throw std::invalid_argument("run_benchmark: fixed m=" + std::to_string(blocks) +
                                        " does not divide n=" + std::to_string(n));
        }
        const BlockPartition partition = make_partition(n, blocks);
        const CoefficientMatrix coeffs = locality_init(partition);

        AttentionConfig attn;
        attn.feature_map = cfg.feature_map;
        attn.normalize = cfg.normalize;
        attn.partition = partition;
        attn.coefficients = coeffs;

        for (const Mechanism mech : cfg.mechanisms) {
            BenchRecord rec;
            rec.mechanism = mech;
            rec.n = n;
            rec.d = cfg.d;
            rec.m = mech == Mechanism::Mhla ? blocks : 1;
            if (mech == Mechanism::Softmax && n * n * sizeof(double) > budget) {
                rec.skipped = true;
                records.push_back(rec);
                if (log) {
                    *log << "# skipped softmax n=" << n << ": score matrix exceeds budget of "
                         << budget << " bytes\n";
                }
                continue;
            }
            rec.repetitions = reps;

            if (cfg.precision == BenchPrecision::Double) {
                switch (mech) {
                    case Mechanism::Softmax:
                        rec.median_seconds =
                            time_median([&] { (void)softmax_attention(q, k, v); }, reps);
                        break;
                    case Mechanism::Linear:
                        rec.median_seconds =
                            time_median([&] { (void)linear_attention(q, k, v, attn); }, reps);
                        break;
                    case Mechanism::Mhla:
                        rec.median_seconds =
                            time_median([&] { (void)mhla_forward(q, k, v, attn); }, reps);
                        break;
                }
            } else {
                const FloatMatrix fq = to_float(q), fk = to_float(k), fv = to_float(v);
                const FloatMatrix fq_feat = fmap(fq, cfg.feature_map);
                const FloatMatrix fk_feat = fmap(fk, cfg.feature_map);
                const FloatMatrix fcoeffs = to_float(coeffs.weights());
                FloatMatrix out(n, cfg.d);
                switch (mech) {
                    case Mechanism::Softmax:
                        rec.median_seconds =
                            time_median([&] { fsoftmax_forward(fq, fk, fv, out); }, reps);
                        break;
                    case Mechanism::Linear:
                        rec.median_seconds = time_median(
                            [&] { flinear_forward(fq_feat, fk_feat, fv, cfg.normalize, out); },
                            reps);
                        break;
                    case Mechanism::Mhla:
                        rec.median_seconds = time_median(
                            [&] {
                                std::fill(out.data.begin(), out.data.end(), 0.0f);
                                fmhla_forward(fq_feat, fk_feat, fv, partition, fcoeffs,
                                              cfg.normalize, out);
                            },
                            reps);
                        break;
                }
            }
            rec.tokens_per_second = static_cast<double>(n) / rec.median_seconds;
            records.push_back(rec);
        }
    }
    return records;
}

double fit_scaling_exponent(const std::vector<BenchRecord>& records, Mechanism mechanism) {
    std::vector<double> xs, ys;
    std::size_t n_min = 0, n_max = 0;
    for (const BenchRecord& rec : records) {
        if (rec.mechanism != mechanism || rec.skipped) continue;
        if (rec.median_seconds <= 0.0) {
            throw std::invalid_argument("fit_scaling_exponent: non-positive median");
        }
        xs.push_back(std::log(static_cast<double>(rec.n)));
        ys.push_back(std::log(rec.median_seconds));
        n_min = n_min == 0 ? rec.n : std::min(n_min, rec.n);
        n_max = std::max(n_max, rec.n);
    }
    if (xs.size() < 3 || n_max < 8 * n_min) {
        throw std::invalid_argument(
            std::string("fit_scaling_exponent: need >= 3 records spanning >= 8x in N for ") +
            to_string(mechanism) + ", have " + std::to_string(xs.size()));
    }
    double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
    const double count = static_cast<double>(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) {
        sx += xs[i];
        sy += ys[i];
        sxx += xs[i] * xs[i];
        sxy += xs[i] * ys[i];
    }
    return (count * sxy - sx * sy) / (count * sxx - sx * sx);
}

std::string format_double(double x) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

void write_bench_csv(std::ostream& out, const std::vector<BenchRecord>& records,
                     const std::string& comments, bool include_header) {
    std::string text;
    if (include_header) {
        text +=
            "# protocol: 1 discarded warm-up, median of the timed repetitions (each batched to "
            ">=25 ms), monotonic wall clock, single-threaded timed region\n";
        text += comments;
        text += kBenchCsvHeader;
        text += "\n";
    } else {
        text += comments;
    }
    for (const BenchRecord& r : records) {
        text += to_string(r.mechanism);
        text += "," + std::to_string(r.n) + "," + std::to_string(r.d) + "," + std::to_string(r.m);
        if (r.skipped) {
            text += ",0,nan,nan\n";
        } else {
            text += "," + std::to_string(r.repetitions) + "," + format_double(r.median_seconds) +
                    "," + format_double(r.tokens_per_second) + "\n";
        }
    }
    out << text;  // single buffered write per call
    out.flush();
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string field;
    std::istringstream in(line);
    while (std::getline(in, field, ',')) fields.push_back(field);
    return fields;
}

}  // namespace

std::vector<BenchRecord> parse_bench_csv(std::istream& in) {
    std::vector<BenchRecord> records;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        if (line == kBenchCsvHeader) continue;
        const auto fields = split_csv_line(line);
        if (fields.size() != 7) {
            throw std::invalid_argument("parse_bench_csv: malformed line '" + line + "'");
        }
        BenchRecord r;
        r.mechanism = mechanism_from_string(fields[0]);
        r.n = std::stoull(fields[1]);
        r.d = std::stoull(fields[2]);
        r.m = std::stoull(fields[3]);
        r.repetitions = std::stoull(fields[4]);
        r.median_seconds = std::strtod(fields[5].c_str(), nullptr);
        r.tokens_per_second = std::strtod(fields[6].c_str(), nullptr);
        r.skipped = r.repetitions == 0;
        records.push_back(r);
    }
    return records;
}

void write_diagnostics_csv(std::ostream& out, const std::vector<SeededReport>& rows) {
    std::string text;
    text +=
        "# protocol: Gaussian Q,K,V per seed, elu-plus-one feature map, normalized rows, "
        "locality-initialized coefficients\n";
    text +=
        "# rank tolerance: max(rows,cols) * machine-epsilon * sigma_max; entropy in nats, "
        "mean over query rows\n";
    text += kDiagnosticsCsvHeader;
    text += "\n";
    for (const SeededReport& row : rows) {
        const DiagnosticsReport& r = row.report;
        text += to_string(r.mechanism);
        text += "," + std::to_string(r.n) + "," + std::to_string(r.d) + "," + std::to_string(r.m);
        text += "," + std::to_string(r.numerical_rank) + "," + std::to_string(r.rank_bound);
        text += "," + format_double(r.mean_row_entropy) + "," + format_double(r.normalized_entropy);
        text += "," + std::to_string(row.seed) + "\n";
    }
    out << text;
    out.flush();
}

std::vector<SeededReport> parse_diagnostics_csv(std::istream& in) {
    std::vector<SeededReport> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        if (line == kDiagnosticsCsvHeader) continue;
        const auto fields = split_csv_line(line);
        if (fields.size() != 9) {
            throw std::invalid_argument("parse_diagnostics_csv: malformed line '" + line + "'");
        }
        SeededReport row;
        row.report.mechanism = mechanism_from_string(fields[0]);
        row.report.n = std::stoull(fields[1]);
        row.report.d = std::stoull(fields[2]);
        row.report.m = std::stoull(fields[3]);
        row.report.numerical_rank = std::stoull(fields[4]);
        row.report.rank_bound = std::stoull(fields[5]);
        row.report.mean_row_entropy = std::strtod(fields[6].c_str(), nullptr);
        row.report.normalized_entropy = std::strtod(fields[7].c_str(), nullptr);
        row.seed = std::stoull(fields[8]);
        rows.push_back(row);
    }
    return rows;
}

void write_distill_csv(std::ostream& out, const std::vector<TrainRecord>& trace) {
    std::string text = std::string(kDistillCsvHeader) + "\n";
    for (const TrainRecord& r : trace) {
        text += std::to_string(r.step) + "," + format_double(r.loss) + "\n";
    }
    out << text;
    out.flush();
}

}  // namespace mhla
