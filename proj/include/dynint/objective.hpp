#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "dynint/error.hpp"
#include "dynint/matrix.hpp"

namespace dynint {

struct LossValue {
    double data_loss = 0.0;
    double orth_penalty = 0.0;
    double lambda = 0.0;
    double total() const { return data_loss + lambda * orth_penalty; }
};

struct MetricReport {
    double auc = 0.0;
    double logloss = 0.0;
    std::size_t n = 0;
};

constexpr double kProbClamp = 1e-7;

inline double clamp_prob(double p) {
    return std::min(1.0 - kProbClamp, std::max(kProbClamp, p));
}

// Negative mean log-likelihood with probability clamping.
inline double log_loss(const std::vector<double>& y_hat, const std::vector<double>& y) {
    if (y_hat.size() != y.size() || y_hat.empty())
        throw ShapeError("log_loss: prediction/label length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        const double p = clamp_prob(y_hat[i]);
        s += y[i] * std::log(p) + (1.0 - y[i]) * std::log(1.0 - p);
    }
    return -s / static_cast<double>(y.size());
}

// d(log_loss)/d(logit_i) for sigmoid outputs: (y_hat - y) / N.
inline double log_loss_dlogit(double y_hat, double y, std::size_t n) {
    return (y_hat - y) / static_cast<double>(n);
}

// ---------------------------------------------------------------------------
// Orthogonal penalties: sum of |cos| over distinct column/vector pairs.

namespace detail {
constexpr double kNormEps = 1e-12;

inline double vec_norm(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}
}  // namespace detail

// |cos| of one pair plus its gradient contributions (added into d_a, d_b).
inline double abs_cosine_with_grad(const std::vector<double>& a, const std::vector<double>& b,
                                   std::vector<double>* d_a, std::vector<double>* d_b) {
    const double na = detail::vec_norm(a) + detail::kNormEps;
    const double nb = detail::vec_norm(b) + detail::kNormEps;
    double dot = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) dot += a[i] * b[i];
    const double c = dot / (na * nb);
    if (d_a && d_b) {
        const double sgn = c >= 0.0 ? 1.0 : -1.0;
        for (std::size_t i = 0; i < a.size(); ++i) {
            (*d_a)[i] += sgn * (b[i] / (na * nb) - c * a[i] / (na * na));
            (*d_b)[i] += sgn * (a[i] / (na * nb) - c * b[i] / (nb * nb));
        }
    }
    return std::abs(c);
}

inline std::vector<double> column(const DenseMatrix& m, std::size_t j) {
    std::vector<double> out(m.rows());
    for (std::size_t i = 0; i < m.rows(); ++i) out[i] = m(i, j);
    return out;
}

// Penalty over the columns of one factor matrix (U or V of one DGP layer):
// sum over p > q of |cos(col_p, col_q)|. Gradient accumulates into d_m.
inline double orth_penalty_columns(const DenseMatrix& m, DenseMatrix* d_m) {
    const std::size_t k = m.cols();
    double total = 0.0;
    for (std::size_t p = 1; p < k; ++p) {
        for (std::size_t q = 0; q < p; ++q) {
            auto cp = column(m, p), cq = column(m, q);
            if (d_m) {
                std::vector<double> dp(m.rows(), 0.0), dq(m.rows(), 0.0);
                total += abs_cosine_with_grad(cp, cq, &dp, &dq);
                for (std::size_t i = 0; i < m.rows(); ++i) {
                    (*d_m)(i, p) += dp[i];
                    (*d_m)(i, q) += dq[i];
                }
            } else {
                total += abs_cosine_with_grad(cp, cq, nullptr, nullptr);
            }
        }
    }
    return total;
}

// DGP penalty across layers: U-column pairs plus V-column pairs.
inline double orth_penalty_dgp(const std::vector<DenseMatrix>& u, const std::vector<DenseMatrix>& v,
                               std::vector<DenseMatrix>* d_u = nullptr,
                               std::vector<DenseMatrix>* d_v = nullptr) {
    double total = 0.0;
    for (std::size_t l = 0; l < u.size(); ++l) {
        total += orth_penalty_columns(u[l], d_u ? &(*d_u)[l] : nullptr);
        total += orth_penalty_columns(v[l], d_v ? &(*d_v)[l] : nullptr);
    }
    return total;
}

// DWP penalty for one instance and one layer, over the K generated (u, v)
// pairs packed as [u_0, v_0, u_1, v_1, ...] each of length S. Gradient
// accumulates into d_uv (same packing) when given.
inline double orth_penalty_dwp_instance(const std::vector<double>& uv, std::size_t rank,
                                        std::size_t S, std::vector<double>* d_uv = nullptr) {
    double total = 0.0;
    auto seg = [&](std::size_t idx) {
        return std::vector<double>(uv.begin() + idx * S, uv.begin() + (idx + 1) * S);
    };
    for (std::size_t p = 1; p < rank; ++p) {
        for (std::size_t q = 0; q < p; ++q) {
            for (int fam = 0; fam < 2; ++fam) {  // 0: u family, 1: v family
                auto a = seg(2 * p + fam), b = seg(2 * q + fam);
                if (d_uv) {
                    std::vector<double> da(S, 0.0), db(S, 0.0);
                    total += abs_cosine_with_grad(a, b, &da, &db);
                    for (std::size_t i = 0; i < S; ++i) {
                        (*d_uv)[(2 * p + fam) * S + i] += da[i];
                        (*d_uv)[(2 * q + fam) * S + i] += db[i];
                    }
                } else {
                    total += abs_cosine_with_grad(a, b, nullptr, nullptr);
                }
            }
        }
    }
    return total;
}

// ---------------------------------------------------------------------------
// AUC by sort-and-rank with midranks for ties; equals the Mann-Whitney
// statistic (#concordant + ties/2) / (P*N).

inline double auc(const std::vector<double>& scores, const std::vector<double>& labels) {
    if (scores.size() != labels.size() || scores.empty())
        throw ShapeError("auc: score/label length mismatch");
    std::size_t pos = 0;
    for (double y : labels) pos += (y > 0.5) ? 1 : 0;
    const std::size_t neg = labels.size() - pos;
    if (pos == 0 || neg == 0)
        throw UndefinedMetricError("auc: needs at least one positive and one negative label");

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    double rank_sum_pos = 0.0;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
        const double midrank = 0.5 * static_cast<double>(i + j) + 1.0;  // 1-based
        for (std::size_t t = i; t <= j; ++t)
            if (labels[order[t]] > 0.5) rank_sum_pos += midrank;
        i = j + 1;
    }
    const double p = static_cast<double>(pos), n = static_cast<double>(neg);
    return (rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n);
}

}  // namespace dynint
