#pragma once

#include <cmath>
#include <vector>

#include "dynint/error.hpp"
#include "dynint/matrix.hpp"

namespace dynint {

struct FtrlHyper {
    double alpha = 0.05;
    double beta = 1.0;
    double lambda1 = 0.0;
    double lambda2 = 0.0;
};

// FTRL-Proximal, per coordinate. The L1 proximal term yields exact zeros:
// w = 0 whenever |z| <= lambda1.
struct FtrlState {
    FtrlHyper hyper;
    std::vector<double> z;
    std::vector<double> n;

    static FtrlState init(std::size_t size, FtrlHyper hyper) {
        FtrlState s;
        s.hyper = hyper;
        s.z.assign(size, 0.0);
        s.n.assign(size, 0.0);
        return s;
    }
};

inline void ftrl_step(FtrlState& st, const double* grad, double* w, std::size_t size) {
    const FtrlHyper& h = st.hyper;
    for (std::size_t i = 0; i < size; ++i) {
        const double g = grad[i];
        if (!std::isfinite(g)) throw TrainingError("ftrl_step: non-finite gradient");
        const double sigma = (std::sqrt(st.n[i] + g * g) - std::sqrt(st.n[i])) / h.alpha;
        st.z[i] += g - sigma * w[i];
        st.n[i] += g * g;
        if (std::abs(st.z[i]) <= h.lambda1) {
            w[i] = 0.0;
        } else {
            const double sgn = st.z[i] > 0.0 ? 1.0 : -1.0;
            w[i] = -(st.z[i] - sgn * h.lambda1) / ((h.beta + std::sqrt(st.n[i])) / h.alpha + h.lambda2);
        }
    }
}

// Warm-starts the accumulator so the implicit weight equals the current
// value: with n = 0 the update reconstructs w = -z * alpha / beta, so
// z = -w * beta / alpha round-trips. Without this the first step would
// rebuild w from z = 0 and silently discard the initialization.
inline void ftrl_seed(FtrlState& st, const double* w, std::size_t size) {
    for (std::size_t i = 0; i < size; ++i) st.z[i] = -w[i] * st.hyper.beta / st.hyper.alpha;
}

inline void ftrl_step(FtrlState& st, const DenseMatrix& grad, DenseMatrix& w) {
    if (!grad.same_shape(w) || st.z.size() != w.size())
        throw ShapeError("ftrl_step: shape mismatch");
    ftrl_step(st, grad.data(), w.data(), w.size());
}

// Group-Lasso FTRL over embedding rows: one scalar n per row (accumulating
// the squared row-gradient norm), vector z per row, and a group
// soft-threshold that zeroes the whole row when ||z_row|| <= lambda1.
struct GroupFtrlState {
    FtrlHyper hyper;
    std::size_t row_dim = 0;
    std::vector<double> z;  // rows x row_dim
    std::vector<double> n;  // per row

    static GroupFtrlState init(std::size_t rows, std::size_t row_dim, FtrlHyper hyper) {
        GroupFtrlState s;
        s.hyper = hyper;
        s.row_dim = row_dim;
        s.z.assign(rows * row_dim, 0.0);
        s.n.assign(rows, 0.0);
        return s;
    }
};

// Warm-start analogue of ftrl_seed for the row-wise state.
inline void gftrl_seed(GroupFtrlState& st, const double* w, std::size_t rows) {
    for (std::size_t i = 0; i < rows * st.row_dim; ++i)
        st.z[i] = -w[i] * st.hyper.beta / st.hyper.alpha;
}

// Updates a single row. Rows whose batch gradient is exactly zero must be
// skipped by the caller so their accumulators do not drift.
inline void gftrl_step_row(GroupFtrlState& st, std::size_t row, const double* grad, double* w) {
    const FtrlHyper& h = st.hyper;
    const std::size_t d = st.row_dim;
    double g2 = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
        if (!std::isfinite(grad[i])) throw TrainingError("gftrl_step: non-finite gradient");
        g2 += grad[i] * grad[i];
    }
    const double sigma = (std::sqrt(st.n[row] + g2) - std::sqrt(st.n[row])) / h.alpha;
    double* z = st.z.data() + row * d;
    double znorm2 = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
        z[i] += grad[i] - sigma * w[i];
        znorm2 += z[i] * z[i];
    }
    st.n[row] += g2;
    const double znorm = std::sqrt(znorm2);
    if (znorm <= h.lambda1) {
        for (std::size_t i = 0; i < d; ++i) w[i] = 0.0;
    } else {
        const double shrink =
            (1.0 - h.lambda1 / znorm) / ((h.beta + std::sqrt(st.n[row])) / h.alpha + h.lambda2);
        for (std::size_t i = 0; i < d; ++i) w[i] = -shrink * z[i];
    }
}

struct AdamHyper {
    double alpha = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    AdamHyper hyper;
    std::vector<double> m;
    std::vector<double> v;
    std::size_t t = 0;

    static AdamState init(std::size_t size, AdamHyper hyper) {
        AdamState s;
        s.hyper = hyper;
        s.m.assign(size, 0.0);
        s.v.assign(size, 0.0);
        return s;
    }
};

inline void adam_step(AdamState& st, const double* grad, double* w, std::size_t size) {
    const AdamHyper& h = st.hyper;
    ++st.t;
    const double bc1 = 1.0 - std::pow(h.beta1, static_cast<double>(st.t));
    const double bc2 = 1.0 - std::pow(h.beta2, static_cast<double>(st.t));
    for (std::size_t i = 0; i < size; ++i) {
        const double g = grad[i];
        if (!std::isfinite(g)) throw TrainingError("adam_step: non-finite gradient");
        st.m[i] = h.beta1 * st.m[i] + (1.0 - h.beta1) * g;
        st.v[i] = h.beta2 * st.v[i] + (1.0 - h.beta2) * g * g;
        const double mhat = st.m[i] / bc1;
        const double vhat = st.v[i] / bc2;
        w[i] -= h.alpha * mhat / (std::sqrt(vhat) + h.eps);
    }
}

}  // namespace dynint
