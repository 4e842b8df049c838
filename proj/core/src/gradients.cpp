#include "mhla/gradients.hpp"

#include <cmath>
#include <stdexcept>

#include "mhla/causal.hpp"

namespace mhla {

namespace {

void check_upstream(const Matrix& q, const Matrix& upstream) {
    if (!q.same_shape(upstream)) {
        throw std::invalid_argument("mhla_backward: upstream " + upstream.shape_string() +
                                    " must match q " + q.shape_string());
    }
}

void apply_feature_chain(const Matrix& pre_activation, FeatureMap map, Matrix& grad) {
    const Matrix deriv = feature_map_derivative(pre_activation, map);
    for (std::size_t e = 0; e < grad.size(); ++e) grad.data()[e] *= deriv.data()[e];
}

// Rows of upstream scaled into the numerator/denominator cotangents:
// gn_t = u_t / den_t and gd_t = -<u_t, y_t> / den_t when normalizing,
// gn_t = u_t and gd_t = 0 otherwise.
struct OutputCotangents {
    Matrix gn;               // N x d
    std::vector<double> gd;  // N
};

GradientBundle backward_bidirectional(const Matrix& q, const Matrix& k, const Matrix& v,
                                      const AttentionConfig& cfg, const Matrix& upstream) {
    const BlockPartition& partition = detail::require_partition(cfg, q.rows());
    const CoefficientMatrix& coeffs = detail::require_coefficients(cfg, partition);
    const std::size_t n = q.rows(), d = q.cols(), m = partition.num_blocks();

    const Matrix q_feat = apply_feature_map(q, cfg.feature_map);
    const Matrix k_feat = apply_feature_map(k, cfg.feature_map);
    const SummaryStack stack = compute_local_summaries(k_feat, v, partition);
    const SummaryStack mixed = mix_summaries(coeffs, stack);

    OutputCotangents cot{Matrix(n, d), std::vector<double>(n, 0.0)};
    for (std::size_t t = 0; t < n; ++t) {
        const std::size_t i = partition.block_of(t);
        const double* qt = q_feat.row(t);
        const double* ut = upstream.row(t);
        double* gn = cot.gn.row(t);
        if (!cfg.normalize) {
            std::copy(ut, ut + d, gn);
            continue;
        }
        const double* z = mixed.normalizers.row(i);
        double den = 0.0;
        for (std::size_t a = 0; a < d; ++a) den += qt[a] * z[a];
        if (std::abs(den) < kNormalizerFloor) {
            detail::throw_degenerate_normalizer("mhla_backward", t, std::abs(den));
        }
        const Matrix& s = mixed.summaries[i];
        double u_dot_num = 0.0;
        for (std::size_t a = 0; a < d; ++a) {
            const double qa = qt[a];
            const double* srow = s.row(a);
            for (std::size_t c = 0; c < d; ++c) u_dot_num += qa * srow[c] * ut[c];
        }
        const double inv = 1.0 / den;
        for (std::size_t c = 0; c < d; ++c) gn[c] = ut[c] * inv;
        cot.gd[t] = -u_dot_num * inv * inv;
    }

    // Per-block aggregates: G_i = sum_t q_t gn_t^T, h_i = sum_t gd_t q_t,
    // flattened next to each other so the coefficient and stack gradients are
    // single GEMMs against the flattened stack.
    Matrix g_flat(m, d * d + d);
    Matrix s_flat(m, d * d + d);
    for (std::size_t b = 0; b < m; ++b) {
        double* grow = g_flat.row(b);
        for (const std::size_t t : partition.tokens_of(b)) {
            const double* qt = q_feat.row(t);
            const double* gn = cot.gn.row(t);
            const double gd = cot.gd[t];
            for (std::size_t a = 0; a < d; ++a) {
                const double qa = qt[a];
                double* dst = grow + a * d;
                for (std::size_t c = 0; c < d; ++c) dst[c] += qa * gn[c];
                grow[d * d + a] += gd * qa;
            }
        }
        double* srow = s_flat.row(b);
        std::copy(stack.summaries[b].data().begin(), stack.summaries[b].data().end(), srow);
        std::copy(stack.normalizers.row(b), stack.normalizers.row(b) + d, srow + d * d);
    }

    GradientBundle out;
    out.d_coefficients = gemm(g_flat, s_flat, false, true);
    const Matrix d_stack_flat = gemm(coeffs.weights(), g_flat, /*transpose_a=*/true);

    // d q_feat per token: mixed.summaries[i] gn_t + gd_t * mixed normalizer.
    out.d_q = Matrix(n, d);
    for (std::size_t t = 0; t < n; ++t) {
        const std::size_t i = partition.block_of(t);
        const Matrix& s = mixed.summaries[i];
        const double* z = mixed.normalizers.row(i);
        const double* gn = cot.gn.row(t);
        const double gd = cot.gd[t];
        double* dq = out.d_q.row(t);
        for (std::size_t a = 0; a < d; ++a) {
            const double* srow = s.row(a);
            double acc = gd * z[a];
            for (std::size_t c = 0; c < d; ++c) acc += srow[c] * gn[c];
            dq[a] = acc;
        }
    }

    // d k_feat / d v per token through the local summaries.
    out.d_k = Matrix(n, d);
    out.d_v = Matrix(n, d);
    for (std::size_t b = 0; b < m; ++b) {
        const double* ds = d_stack_flat.row(b);
        const double* dz = ds + d * d;
        for (const std::size_t t : partition.tokens_of(b)) {
            const double* kt = k_feat.row(t);
            const double* vt = v.row(t);
            double* dk = out.d_k.row(t);
            double* dv = out.d_v.row(t);
            for (std::size_t a = 0; a < d; ++a) {
                const double* dsrow = ds + a * d;
                double acc = dz[a];
                for (std::size_t c = 0; c < d; ++c) {
                    acc += dsrow[c] * vt[c];
                    dv[c] += dsrow[c] * kt[a];
                }
                dk[a] = acc;
            }
        }
    }

    apply_feature_chain(q, cfg.feature_map, out.d_q);
    apply_feature_chain(k, cfg.feature_map, out.d_k);
    return out;
}

GradientBundle backward_causal(const Matrix& q, const Matrix& k, const Matrix& v,
                               const AttentionConfig& cfg, const Matrix& upstream) {
    const BlockPartition& partition = detail::require_partition(cfg, q.rows());
    const CoefficientMatrix& coeffs = detail::require_coefficients(cfg, partition);
    if (partition.layout() != LayoutKind::Linear1D) {
        throw std::invalid_argument("mhla_backward: causal gradients need a linear-1d partition");
    }
    const std::size_t n = q.rows(), d = q.cols(), m = partition.num_blocks();

    const Matrix q_feat = apply_feature_map(q, cfg.feature_map);
    const Matrix k_feat = apply_feature_map(k, cfg.feature_map);
    const SummaryStack stack = compute_local_summaries(k_feat, v, partition);

    GradientBundle out;
    out.d_q = Matrix(n, d);
    out.d_k = Matrix(n, d);
    out.d_v = Matrix(n, d);
    out.d_coefficients = Matrix(m, m);

    std::vector<Matrix> block_g(m);          // gradient w.r.t. the mixed prefix
    std::vector<std::vector<double>> block_h(m);

    for (std::size_t i = 0; i < m; ++i) {
        const auto& tokens = partition.tokens_of(i);
        const std::size_t nb = tokens.size();
        const std::size_t first = tokens.front();
        const double self_w = coeffs(i, i);

        Matrix prefix(d, d);
        std::vector<double> prefix_z(d, 0.0);
        for (std::size_t b = 0; b < i; ++b) {
            const double w = coeffs(i, b);
            for (std::size_t e = 0; e < d * d; ++e)
                prefix.data()[e] += w * stack.summaries[b].data()[e];
            const double* z = stack.normalizers.row(b);
            for (std::size_t a = 0; a < d; ++a) prefix_z[a] += w * z[a];
        }

        Matrix q_block(nb, d), k_block(nb, d), v_block(nb, d), u_block(nb, d);
        for (std::size_t r = 0; r < nb; ++r) {
            std::copy(q_feat.row(first + r), q_feat.row(first + r) + d, q_block.row(r));
            std::copy(k_feat.row(first + r), k_feat.row(first + r) + d, k_block.row(r));
            std::copy(v.row(first + r), v.row(first + r) + d, v_block.row(r));
            std::copy(upstream.row(first + r), upstream.row(first + r) + d, u_block.row(r));
        }

        Matrix scores = gemm(q_block, k_block, false, true);  // masked below
        for (std::size_t r = 0; r < nb; ++r) {
            double* row = scores.row(r);
            for (std::size_t c = r + 1; c < nb; ++c) row[c] = 0.0;
        }
        const Matrix intra_out = gemm(scores, v_block);
        const Matrix prefix_out = gemm(q_block, prefix);

        Matrix gn(nb, d);
        std::vector<double> gd(nb, 0.0);
        for (std::size_t r = 0; r < nb; ++r) {
            const double* ur = u_block.row(r);
            if (!cfg.normalize) {
                std::copy(ur, ur + d, gn.row(r));
                continue;
            }
            const double* qt = q_block.row(r);
            double den = 0.0;
            for (std::size_t a = 0; a < d; ++a) den += qt[a] * prefix_z[a];
            const double* srow = scores.row(r);
            double intra_den = 0.0;
            for (std::size_t c = 0; c <= r; ++c) intra_den += srow[c];
            den += self_w * intra_den;
            if (std::abs(den) < kNormalizerFloor) {
                detail::throw_degenerate_normalizer("mhla_backward", first + r, std::abs(den));
            }
            double u_dot_num = 0.0;
            for (std::size_t c = 0; c < d; ++c) {
                u_dot_num += ur[c] * (prefix_out(r, c) + self_w * intra_out(r, c));
            }
            const double inv = 1.0 / den;
            double* gnr = gn.row(r);
            for (std::size_t c = 0; c < d; ++c) gnr[c] = ur[c] * inv;
            gd[r] = -u_dot_num * inv * inv;
        }

        // Prefix-route aggregates for this query block.
        Matrix g(d, d);
        std::vector<double> h(d, 0.0);
        for (std::size_t r = 0; r < nb; ++r) {
            const double* qt = q_block.row(r);
            const double* gnr = gn.row(r);
            for (std::size_t a = 0; a < d; ++a) {
                const double qa = qt[a];
                double* grow = g.row(a);
                for (std::size_t c = 0; c < d; ++c) grow[c] += qa * gnr[c];
                h[a] += gd[r] * qa;
            }
        }
        for (std::size_t b = 0; b < i; ++b) {
            double acc = 0.0;
            for (std::size_t e = 0; e < d * d; ++e)
                acc += g.data()[e] * stack.summaries[b].data()[e];
            const double* z = stack.normalizers.row(b);
            for (std::size_t a = 0; a < d; ++a) acc += h[a] * z[a];
            out.d_coefficients(i, b) = acc;
        }
        block_g[i] = std::move(g);
        block_h[i] = std::move(h);

        // Intra-block route. dscore(r, j) = self_w * (gn_r . v_j + gd_r) for
        // j <= r; the self coefficient gradient also collects the raw scores.
        Matrix dscore = gemm(gn, v_block, false, true);
        double d_self = 0.0;
        for (std::size_t r = 0; r < nb; ++r) {
            double* row = dscore.row(r);
            for (std::size_t c = 0; c <= r; ++c) {
                row[c] += gd[r];
                d_self += scores(r, c) * row[c];
                row[c] *= self_w;
            }
            for (std::size_t c = r + 1; c < nb; ++c) row[c] = 0.0;
        }
        out.d_coefficients(i, i) = d_self;

        const Matrix dq_intra = gemm(dscore, k_block);
        const Matrix dk_intra = gemm(dscore, q_block, /*transpose_a=*/true);
        Matrix dv_intra = gemm(scores, gn, /*transpose_a=*/true);
        for (double& x : dv_intra.data()) x *= self_w;

        for (std::size_t r = 0; r < nb; ++r) {
            const std::size_t t = first + r;
            double* dq = out.d_q.row(t);
            double* dk = out.d_k.row(t);
            double* dv = out.d_v.row(t);
            const double* gnr = gn.row(r);
            for (std::size_t a = 0; a < d; ++a) {
                const double* prow = prefix.row(a);
                double acc = gd[r] * prefix_z[a];
                for (std::size_t c = 0; c < d; ++c) acc += prow[c] * gnr[c];
                dq[a] = acc + dq_intra(r, a);
                dk[a] = dk_intra(r, a);
                dv[a] = dv_intra(r, a);
            }
        }
    }

    // Prefix route back into each block's keys and values:
    // dS_b = sum_{i>b} m(i,b) G_i, dz_b likewise.
    for (std::size_t b = 0; b < m; ++b) {
        Matrix ds(d, d);
        std::vector<double> dz(d, 0.0);
        for (std::size_t i = b + 1; i < m; ++i) {
            const double w = coeffs(i, b);
            if (w == 0.0) continue;
            for (std::size_t e = 0; e < d * d; ++e) ds.data()[e] += w * block_g[i].data()[e];
            for (std::size_t a = 0; a < d; ++a) dz[a] += w * block_h[i][a];
        }
        for (const std::size_t t : partition.tokens_of(b)) {
            const double* kt = k_feat.row(t);
            const double* vt = v.row(t);
            double* dk = out.d_k.row(t);
            double* dv = out.d_v.row(t);
            for (std::size_t a = 0; a < d; ++a) {
                const double* dsrow = ds.row(a);
                double acc = dz[a];
                for (std::size_t c = 0; c < d; ++c) {
                    acc += dsrow[c] * vt[c];
                    dv[c] += dsrow[c] * kt[a];
                }
                dk[a] += acc;
            }
        }
    }

    apply_feature_chain(q, cfg.feature_map, out.d_q);
    apply_feature_chain(k, cfg.feature_map, out.d_k);
    return out;
}

}  // namespace

GradientBundle mhla_backward(const Matrix& q, const Matrix& k, const Matrix& v,
                             const AttentionConfig& cfg, const Matrix& upstream) {
    detail::check_qkv(q, k, v);
    detail::check_normalize_map(cfg);
    check_upstream(q, upstream);
    const BlockPartition& partition = detail::require_partition(cfg, q.rows());
    const CoefficientMatrix& coeffs = detail::require_coefficients(cfg, partition);
    return coeffs.causal() ? backward_causal(q, k, v, cfg, upstream)
                           : backward_bidirectional(q, k, v, cfg, upstream);
}

Matrix mhla_forward_any(const Matrix& q, const Matrix& k, const Matrix& v,
                        const AttentionConfig& cfg) {
    if (cfg.coefficients && cfg.coefficients->causal()) {
        return chunkwise_causal_forward(q, k, v, cfg);
    }
    return mhla_forward(q, k, v, cfg);
}

std::vector<double> finite_diff_grad(const std::function<double(std::span<const double>)>& fn,
                                     std::span<const double> x, double h) {
    if (h <= 0.0) throw std::invalid_argument("finite_diff_grad: h must be positive");
    std::vector<double> point(x.begin(), x.end());
    std::vector<double> grad(x.size());
    for (std::size_t i = 0; i < point.size(); ++i) {
        const double saved = point[i];
        point[i] = saved + h;
        const double up = fn(point);
        point[i] = saved - h;
        const double down = fn(point);
        point[i] = saved;
        grad[i] = (up - down) / (2.0 * h);
    }
    return grad;
}

namespace {

Matrix clip_raw(Matrix w, bool causal) {
    for (std::size_t i = 0; i < w.rows(); ++i) {
        for (std::size_t j = 0; j < w.cols(); ++j) {
            if (causal && j > i) {
                w(i, j) = 0.0;
                continue;
            }
            w(i, j) = std::clamp(w(i, j), kClipEpsilon, 1.0 - kClipEpsilon);
        }
    }
    return w;
}

}  // namespace

DistillResult distill_coefficients(const Matrix& q, const Matrix& k, const Matrix& v,
                                   const Matrix& target, const AttentionConfig& cfg,
                                   std::size_t steps, double lr) {
    detail::check_qkv(q, k, v);
    if (!q.same_shape(target)) {
        throw std::invalid_argument("distill_coefficients: target " + target.shape_string() +
                                    " must match q " + q.shape_string());
    }
    const BlockPartition& partition = detail::require_partition(cfg, q.rows());
    const CoefficientMatrix& init = detail::require_coefficients(cfg, partition);
    const bool causal = init.causal();
    const double inv_count = 1.0 / static_cast<double>(q.rows() * q.cols());

    AttentionConfig work = cfg;
    std::vector<TrainRecord> trace;
    trace.reserve(steps);
    for (std::size_t s = 0; s < steps; ++s) {
        const Matrix y = mhla_forward_any(q, k, v, work);
        Matrix residual(y.rows(), y.cols());
        double loss = 0.0;
        for (std::size_t e = 0; e < y.size(); ++e) {
            const double r = y.data()[e] - target.data()[e];
            residual.data()[e] = 2.0 * r * inv_count;
            loss += r * r;
        }
        loss *= inv_count;
        if (!std::isfinite(loss)) {
            throw std::runtime_error("distill_coefficients: non-finite loss at step " +
                                     std::to_string(s));
        }
        trace.push_back({s, loss, frobenius_norm(work.coefficients->weights())});

        if (lr != 0.0) {
            const GradientBundle grads = mhla_backward(q, k, v, work, residual);
            Matrix w = work.coefficients->weights();
            for (std::size_t e = 0; e < w.size(); ++e) {
                w.data()[e] -= lr * grads.d_coefficients.data()[e];
            }
            work.coefficients = CoefficientMatrix(clip_raw(std::move(w), causal), causal);
        }
    }
    return {*work.coefficients, std::move(trace)};
}

}  // namespace mhla
