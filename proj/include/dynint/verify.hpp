#pragma once

// Self-contained verification suites shared by the CLI `verify` command and
// the acceptance test binary. Each suite checks a production code path
// against an independent reference (finite differences, symbolic expansion,
// dense-materialized forward, brute-force pair counting).

#include <cstdio>
#include <string>
#include <vector>

#include "dynint/model.hpp"
#include "dynint/oracle.hpp"
#include "dynint/train.hpp"

namespace dynint {

struct SuiteResult {
    std::string name;
    bool pass = true;
    std::vector<std::string> lines;

    void check(bool ok, const std::string& what) {
        lines.push_back(std::string(ok ? "  ok   " : "  FAIL ") + what);
        pass = pass && ok;
    }
};

namespace verify_detail {

inline std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.3g", v);
    return buf;
}

// Batch gradients without optimizer state: logloss over the batch plus the
// orthogonal penalties, matching the loss used by train_step.
inline ModelGrads batch_gradients(Model& m, const std::vector<std::vector<std::uint32_t>>& batch,
                                  const std::vector<double>& labels, double lambda) {
    const std::size_t B = batch.size();
    ModelGrads grads = ModelGrads::zeros_like(m);
    for (std::size_t i = 0; i < B; ++i) {
        ModelCache cache;
        const double p = model_forward(m, batch[i], cache);
        model_backward(m, batch[i], cache, log_loss_dlogit(p, labels[i], B), grads);
        if (m.stack.variant == Variant::Dwp && lambda > 0.0 && m.stack.rank > 1) {
            const std::size_t S = m.stack.stacked_rows();
            for (std::size_t l = 0; l < m.stack.depth; ++l) {
                const auto& uv = cache.layers.gen[l].out;
                std::vector<double> d_uv(uv.size(), 0.0);
                orth_penalty_dwp_instance(uv, m.stack.rank, S, &d_uv);
                for (double& g : d_uv) g *= lambda / static_cast<double>(B);
                generator_backward(m.stack.gens[l], cache.layers.gen[l], d_uv, grads.layers.gens[l]);
            }
        }
    }
    if (m.stack.variant == Variant::Dgp && lambda > 0.0 && m.stack.rank > 1) {
        std::vector<DenseMatrix> d_u, d_v;
        for (const auto& u : m.stack.u) d_u.emplace_back(u.rows(), u.cols());
        for (const auto& v : m.stack.v) d_v.emplace_back(v.rows(), v.cols());
        orth_penalty_dgp(m.stack.u, m.stack.v, &d_u, &d_v);
        for (std::size_t l = 0; l < d_u.size(); ++l) {
            d_u[l] *= lambda;
            d_v[l] *= lambda;
            grads.layers.u[l] += d_u[l];
            grads.layers.v[l] += d_v[l];
        }
    }
    return grads;
}

inline double batch_loss(const Model& m, const std::vector<std::vector<std::uint32_t>>& batch,
                         const std::vector<double>& labels, double lambda,
                         const std::vector<DenseMatrix>* frozen_gen_inputs) {
    const std::size_t B = batch.size();
    std::vector<double> probs(B);
    double penalty = 0.0;
    for (std::size_t i = 0; i < B; ++i) {
        ModelCache cache;
        const DenseMatrix* gi = frozen_gen_inputs ? &(*frozen_gen_inputs)[i] : nullptr;
        probs[i] = model_forward(m, batch[i], cache, gi);
        if (m.stack.variant == Variant::Dwp && lambda > 0.0 && m.stack.rank > 1)
            for (std::size_t l = 0; l < m.stack.depth; ++l)
                penalty += orth_penalty_dwp_instance(cache.layers.gen[l].out, m.stack.rank,
                                                     m.stack.stacked_rows()) /
                           static_cast<double>(B);
    }
    if (m.stack.variant == Variant::Dgp && lambda > 0.0 && m.stack.rank > 1)
        penalty = orth_penalty_dgp(m.stack.u, m.stack.v);
    return log_loss(probs, labels) + lambda * penalty;
}

// Full-model gradient check for one variant/subspace setting: every tensor
// plus the embedding (= X0 adjoint with the generator input held fixed).
inline void check_variant_gradients(SuiteResult& r, Variant variant, std::size_t subspaces,
                                    std::uint64_t seed) {
    const std::vector<std::uint32_t> cards = {3, 3, 3, 3, 3};  // F = 5
    const std::size_t D = 4, L = 2, K = 2;
    Rng rng(seed);
    Model m = Model::init(variant, cards, D, subspaces, L, K, 4, rng);
    // perturb what zero-init leaves at identity so the dynamic paths are live
    for (auto& g : m.stack.gens)
        for (std::size_t i = 0; i < g.out_w.size(); ++i) g.out_w.raw()[i] = 0.3 * rng.normal();
    for (double& w : m.head.w) w = rng.normal();
    m.head.b = 0.1 * rng.normal();

    std::vector<std::vector<std::uint32_t>> batch;
    std::vector<double> labels;
    for (std::size_t i = 0; i < 3; ++i) {
        std::vector<std::uint32_t> idx(cards.size());
        for (std::size_t f = 0; f < cards.size(); ++f)
            idx[f] = static_cast<std::uint32_t>(rng.index(cards[f]));
        batch.push_back(idx);
        labels.push_back(i % 2 ? 1.0 : 0.0);
    }
    const double lambda = (variant == Variant::Dgp || variant == Variant::Dwp) ? 0.05 : 0.0;

    // generator inputs frozen at the unperturbed X0 of each instance: the
    // analytic backward defines the generator->X0 path as zero
    std::vector<DenseMatrix> frozen;
    for (const auto& idx : batch) frozen.push_back(lookup(m.embedding, idx));

    ModelGrads grads = batch_gradients(m, batch, labels, lambda);
    auto mp = m.params();
    auto gp = grads.params(m);
    const std::string tag =
        std::string(variant_name(variant)) + " h=" + std::to_string(subspaces);
    for (std::size_t t = 0; t < mp.size(); ++t) {
        const bool is_embed = mp[t].group == ParamGroup::Embedding;
        auto fn = [&]() {
            return batch_loss(m, batch, labels, lambda, is_embed ? &frozen : nullptr);
        };
        const std::vector<double> fd = finite_diff(fn, mp[t].data, mp[t].size);
        double worst = 0.0;
        for (std::size_t i = 0; i < mp[t].size; ++i) {
            // entries below 1e-6 are compared absolutely at the same
            // tolerance: central differences on an O(1) loss carry ~1e-11
            // of cancellation noise, which swamps the ratio for tiny entries
            const double a = gp[t].data[i], b = fd[i];
            worst = std::max(worst, std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6}));
        }
        r.check(worst < 1e-4, tag + " " + mp[t].name + " max rel err " + fmt(worst));
    }
}

}  // namespace verify_detail

// ---------------------------------------------------------------------------
// Suite: analytic gradients of every variant vs central finite differences.

inline SuiteResult verify_grad() {
    SuiteResult r{"grad"};
    std::uint64_t seed = 11;
    for (Variant v : {Variant::Pin, Variant::Da, Variant::Dgp, Variant::Dwp})
        for (std::size_t h : {std::size_t(1), std::size_t(2)})
            verify_detail::check_variant_gradients(r, v, h, seed++);
    return r;
}

// ---------------------------------------------------------------------------
// Suite: forward recursion vs symbolic polynomial expansion.

inline SuiteResult verify_poly() {
    SuiteResult r{"poly"};
    Rng rng(977);
    double worst = 0.0;
    std::size_t cases = 0;
    for (std::size_t trial = 0; trial < 100; ++trial) {
        const std::size_t F = 2 + rng.index(3);  // 2..4 rows
        const std::size_t L = 1 + rng.index(3);  // depth 1..3
        LayerStack s;
        s.variant = Variant::Pin;
        s.fields = F;
        s.embed_dim = 1;
        s.subspaces = 1;
        s.depth = L;
        for (std::size_t l = 0; l < L; ++l) s.w.push_back(random_matrix(F, F, rng, 1.0));
        DenseMatrix x0(F, 1);
        std::vector<double> vals(F);
        for (std::size_t i = 0; i < F; ++i) x0(i, 0) = vals[i] = rng.normal();
        LayerCache cache;
        const DenseMatrix xl = layers_forward(s, x0, cache);
        for (std::size_t row = 0; row < F; ++row) {
            const Polynomial p = expand_pin(s.w, F, L, row);
            worst = std::max(worst, rel_err(p.evaluate(vals), xl(row, 0)));
            if (p.max_degree() != L + 1) r.check(false, "degree bound violated");
            ++cases;
        }
    }
    r.check(worst <= 1e-10, "forward == symbolic expansion over " + std::to_string(cases) +
                                " row expansions, max rel err " + verify_detail::fmt(worst));

    // size guard refuses oversized expansions
    bool threw = false;
    try {
        expand_pin({}, 9, 1, 0);
    } catch (const ConfigError&) {
        threw = true;
    }
    r.check(threw, "size guard rejects rows > 8");
    return r;
}

// ---------------------------------------------------------------------------
// Suite: low-rank dynamic paths vs dense-materialized references.

inline SuiteResult verify_lowrank() {
    SuiteResult r{"lowrank"};
    Rng rng(5309);
    for (Variant variant : {Variant::Dgp, Variant::Dwp}) {
        double worst = 0.0;
        bool memory_ok = true;
        for (std::size_t trial = 0; trial < 50; ++trial) {
            const std::size_t F = 2 + rng.index(4);
            const std::size_t D = 2 * (1 + rng.index(2));
            const std::size_t h = 1 + rng.index(2) * (D % 4 == 0 ? 1 : 0);
            const std::size_t K = 1 + rng.index(3);
            LayerStack s = LayerStack::init(variant, F, D, h, 2, K, 2, rng);
            for (auto& g : s.gens)
                for (std::size_t i = 0; i < g.out_w.size(); ++i)
                    g.out_w.raw()[i] = 0.5 * rng.normal();
            DenseMatrix x0 = random_matrix(F, D, rng, 1.0);
            LayerCache fast, dense;
            const DenseMatrix a = layers_forward(s, x0, fast);
            const DenseMatrix b = variant == Variant::Dgp ? dgp_forward_dense(s, x0, dense)
                                                          : dwp_forward_dense(s, x0, dense);
            for (std::size_t i = 0; i < a.size(); ++i)
                worst = std::max(worst, std::abs(a.raw()[i] - b.raw()[i]));
            const std::size_t S = F * h;
            if (variant == Variant::Dgp && K < S && fast.dynamic_param_elems >= dense.dynamic_param_elems)
                memory_ok = false;
        }
        const std::string name = variant_name(variant);
        r.check(worst <= 1e-10,
                name + " low-rank == dense over 50 draws, max abs diff " + verify_detail::fmt(worst));
        r.check(memory_ok, name + " low-rank stores fewer dynamic elements than dense");
    }
    return r;
}

// ---------------------------------------------------------------------------
// Suite: FTRL / group-FTRL sparsity actually reaches exact zeros.

inline SuiteResult verify_sparsity() {
    SuiteResult r{"sparsity"};
    // 2 informative fields + 2 pure-noise fields; L1 should zero out noise.
    const std::vector<std::uint32_t> cards = {8, 8, 16, 16};
    DenseMatrix coeff(4, 4);
    coeff(0, 1) = 2.0;
    SyntheticSpec spec = SyntheticSpec::make(cards, coeff, 0.0, 404);
    SyntheticSample sample = sample_synthetic(spec, 6000, 405);

    TrainConfig cfg;
    cfg.variant = Variant::Pin;
    cfg.depth = 1;
    cfg.embed_dim = 4;
    cfg.batch = 128;
    cfg.max_steps = 400;
    cfg.eval_every = 1000000;  // no early stopping in this short run
    cfg.ftrl = {0.1, 1.0, 0.002, 0.0};
    cfg.gftrl = {0.1, 1.0, 0.02, 0.0};
    Rng rng(406);
    Model m = Model::init(cfg.variant, cards, cfg.embed_dim, 1, cfg.depth, 1, 4, rng);
    train_loop(m, cfg, sample.data, Dataset{});

    std::size_t zero_rows = 0, noise_rows = 0;
    for (std::size_t f = 2; f < 4; ++f) {
        const DenseMatrix& t = m.embedding.tables[f];
        for (std::size_t row = 0; row < t.rows(); ++row) {
            ++noise_rows;
            bool all_zero = true;
            for (std::size_t d = 0; d < t.cols(); ++d) all_zero = all_zero && t(row, d) == 0.0;
            zero_rows += all_zero ? 1 : 0;
        }
    }
    r.check(zero_rows > 0, "group-FTRL zeroed " + std::to_string(zero_rows) + "/" +
                               std::to_string(noise_rows) + " noise-field embedding rows exactly");

    std::size_t zero_w = 0;
    for (double w : m.stack.w[0].raw()) zero_w += (w == 0.0) ? 1 : 0;
    r.check(zero_w > 0, "FTRL zeroed " + std::to_string(zero_w) + "/" +
                            std::to_string(m.stack.w[0].size()) + " interaction weights exactly");

    // informative fields must survive the same regularization
    bool informative_alive = false;
    for (std::size_t f = 0; f < 2; ++f)
        for (double v : m.embedding.tables[f].raw())
            if (v != 0.0) informative_alive = true;
    r.check(informative_alive, "informative-field embeddings stay nonzero");
    return r;
}

// ---------------------------------------------------------------------------
// Suite: AUC and log loss vs brute-force references and hand values.

inline SuiteResult verify_metrics() {
    SuiteResult r{"metrics"};
    r.check(rel_err(auc({0.1, 0.4, 0.35, 0.8}, {0, 0, 1, 1}), 0.75) < 1e-12,
            "AUC hand case = 0.75");
    r.check(rel_err(log_loss({0.5}, {1.0}), 0.6931471805599453) < 1e-12,
            "log loss of p=0.5 = ln 2");
    r.check(rel_err(log_loss({0.9}, {1.0}), 0.10536051565782628) < 1e-12,
            "log loss hand case p=0.9, y=1");

    bool clamp_finite = std::isfinite(log_loss({0.0}, {1.0})) && std::isfinite(log_loss({1.0}, {0.0}));
    r.check(clamp_finite, "probability clamp keeps the loss finite at p in {0, 1}");

    bool threw = false;
    try {
        auc({0.3, 0.7}, {1.0, 1.0});
    } catch (const UndefinedMetricError&) {
        threw = true;
    }
    r.check(threw, "single-class AUC raises an undefined-metric error");

    // sort-based AUC vs brute-force pair enumeration with ties
    Rng rng(607);
    double worst = 0.0;
    for (std::size_t trial = 0; trial < 200; ++trial) {
        const std::size_t n = 2 + rng.index(29);
        std::vector<double> scores(n), labels(n);
        std::size_t pos = 0;
        for (std::size_t i = 0; i < n; ++i) {
            scores[i] = std::floor(rng.uniform() * 8.0) / 8.0;  // quantized: real ties
            labels[i] = rng.uniform() < 0.5 ? 0.0 : 1.0;
            pos += labels[i] > 0.5 ? 1 : 0;
        }
        if (pos == 0 || pos == n) continue;
        double num = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j)
                if (labels[i] > 0.5 && labels[j] < 0.5)
                    num += scores[i] > scores[j] ? 1.0 : (scores[i] == scores[j] ? 0.5 : 0.0);
        const double brute = num / (static_cast<double>(pos) * static_cast<double>(n - pos));
        worst = std::max(worst, std::abs(auc(scores, labels) - brute));
    }
    r.check(worst <= 1e-12, "AUC == brute-force pair count over 200 tied cases, max diff " +
                                verify_detail::fmt(worst));
    return r;
}

inline SuiteResult run_suite(const std::string& name) {
    if (name == "grad") return verify_grad();
    if (name == "poly") return verify_poly();
    if (name == "lowrank") return verify_lowrank();
    if (name == "sparsity") return verify_sparsity();
    if (name == "metrics") return verify_metrics();
    throw ConfigError("unknown verify suite '" + name + "' (grad, poly, lowrank, sparsity, metrics)");
}

}  // namespace dynint
