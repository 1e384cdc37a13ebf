#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <vector>

#include "dynint/dataio.hpp"
#include "dynint/error.hpp"
#include "dynint/layers.hpp"
#include "dynint/matrix.hpp"
#include "dynint/objective.hpp"

namespace dynint {

// ---------------------------------------------------------------------------
// Symbolic polynomial expansion of the PIN recursion. Variables are row
// indices of the input map (the column is fixed per expansion since layers
// never mix columns). A monomial is a sorted multiset of row indices.

struct Polynomial {
    std::map<std::vector<std::size_t>, double> terms;

    void add_term(std::vector<std::size_t> mono, double coeff) {
        std::sort(mono.begin(), mono.end());
        auto [it, inserted] = terms.emplace(std::move(mono), coeff);
        if (!inserted) it->second += coeff;
    }

    void normalize() {
        for (auto it = terms.begin(); it != terms.end();)
            it = it->second == 0.0 ? terms.erase(it) : std::next(it);
    }

    std::size_t max_degree() const {
        std::size_t d = 0;
        for (const auto& [mono, coeff] : terms) d = std::max(d, mono.size());
        return d;
    }

    // Evaluate at numeric column values (value of row j at the fixed column).
    double evaluate(const std::vector<double>& row_values) const {
        double sum = 0.0;
        for (const auto& [mono, coeff] : terms) {
            double prod = coeff;
            for (std::size_t var : mono) prod *= row_values[var];
            sum += prod;
        }
        return sum;
    }
};

// x_row^(L) = x_row^(0) * prod_r (sum_j W_r[row, j] x_j^(0) + 1), expanded.
// Combinatorial blowup is guarded: rows <= 8, depth <= 3.
inline Polynomial expand_pin(const std::vector<DenseMatrix>& weights, std::size_t rows,
                             std::size_t depth, std::size_t row) {
    if (rows > 8 || depth > 3)
        throw ConfigError("expand_pin: size guard exceeded (max rows 8, depth 3); got rows=" +
                          std::to_string(rows) + " depth=" + std::to_string(depth));
    Polynomial p;
    p.add_term({row}, 1.0);
    for (std::size_t r = 0; r < depth; ++r) {
        Polynomial next;
        for (const auto& [mono, coeff] : p.terms) {
            next.add_term(mono, coeff);  // the "+1" branch
            for (std::size_t j = 0; j < rows; ++j) {
                const double w = weights[r](row, j);
                if (w == 0.0) continue;
                std::vector<std::size_t> grown = mono;
                grown.push_back(j);
                next.add_term(std::move(grown), coeff * w);
            }
        }
        next.normalize();
        p = std::move(next);
    }
    return p;
}

// ---------------------------------------------------------------------------
// Central finite differences, the project-wide gradient oracle.

inline std::vector<double> finite_diff(const std::function<double()>& fn, double* params,
                                       std::size_t size, double step = 1e-5) {
    std::vector<double> grad(size);
    for (std::size_t i = 0; i < size; ++i) {
        const double saved = params[i];
        params[i] = saved + step;
        const double fp = fn();
        params[i] = saved - step;
        const double fm = fn();
        params[i] = saved;
        if (!std::isfinite(fp) || !std::isfinite(fm))
            throw TrainingError("finite_diff: non-finite function value");
        grad[i] = (fp - fm) / (2.0 * step);
    }
    return grad;
}

// Relative error with the project-wide denominator convention.
inline double rel_err(double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

inline double max_rel_err(const std::vector<double>& a, const std::vector<double>& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, rel_err(a[i], b[i]));
    return m;
}

// ---------------------------------------------------------------------------
// Synthetic CTR generator with known Bayes-optimal scores. Each field level
// carries a latent score z; P(y=1|x) = sigmoid(sum_{i<=j} a_ij z_i z_j + b).
// An optional binary context field switches between two coefficient sets,
// which only instance-aware models can track at bounded depth.

struct SyntheticSpec {
    std::vector<std::uint32_t> cardinalities;
    std::vector<std::vector<double>> level_scores;  // per field, per level
    DenseMatrix coeff;                              // F x F, upper triangle incl. diagonal
    double bias = 0.0;
    long context_field = -1;   // -1: static coefficients
    DenseMatrix coeff_alt;     // used when the context field's level is odd

    static SyntheticSpec make(const std::vector<std::uint32_t>& cardinalities,
                              const DenseMatrix& coeff, double bias, std::uint64_t seed) {
        SyntheticSpec s;
        s.cardinalities = cardinalities;
        s.coeff = coeff;
        s.bias = bias;
        Rng rng(seed);
        for (auto card : cardinalities) {
            std::vector<double> z(card);
            for (auto& v : z) v = rng.normal();
            s.level_scores.push_back(std::move(z));
        }
        return s;
    }

    double true_logit(const std::vector<std::uint32_t>& indices) const {
        const std::size_t F = cardinalities.size();
        const DenseMatrix* a = &coeff;
        if (context_field >= 0 && indices[static_cast<std::size_t>(context_field)] % 2 == 1)
            a = &coeff_alt;
        double logit = bias;
        for (std::size_t i = 0; i < F; ++i) {
            const double zi = level_scores[i][indices[i]];
            for (std::size_t j = i; j < F; ++j) {
                const double aij = (*a)(i, j);
                if (aij != 0.0) logit += aij * zi * level_scores[j][indices[j]];
            }
        }
        return logit;
    }
};

struct SyntheticSample {
    Dataset data;
    std::vector<double> true_probs;  // P(y=1|x) per row
};

inline SyntheticSample sample_synthetic(const SyntheticSpec& spec, std::size_t n,
                                        std::uint64_t seed) {
    SyntheticSample out;
    out.data.num_fields = spec.cardinalities.size();
    out.data.rows.resize(n);
    out.true_probs.resize(n);
    Rng rng(seed);
    for (std::size_t i = 0; i < n; ++i) {
        DatasetRow& row = out.data.rows[i];
        row.indices.resize(spec.cardinalities.size());
        for (std::size_t f = 0; f < spec.cardinalities.size(); ++f)
            row.indices[f] = static_cast<std::uint32_t>(rng.index(spec.cardinalities[f]));
        const double p = sigmoid(spec.true_logit(row.indices));
        out.true_probs[i] = p;
        row.label = static_cast<std::uint8_t>(rng.uniform() < p ? 1 : 0);
    }
    return out;
}

// AUC of the true generating probabilities against the sampled labels: the
// ceiling any model can approach in expectation.
inline double bayes_auc(const SyntheticSample& sample) {
    std::vector<double> labels(sample.data.rows.size());
    for (std::size_t i = 0; i < labels.size(); ++i)
        labels[i] = static_cast<double>(sample.data.rows[i].label);
    return auc(sample.true_probs, labels);
}

}  // namespace dynint
