#pragma once

#include <algorithm>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "dynint/dataio.hpp"
#include "dynint/model.hpp"
#include "dynint/objective.hpp"
#include "dynint/optim.hpp"
#include "dynint/parallel.hpp"

namespace dynint {

struct TrainConfig {
    Variant variant = Variant::Pin;
    std::size_t depth = 2;
    std::size_t subspaces = 1;
    std::size_t embed_dim = 16;
    std::size_t rank = 2;           // dgp kernel size / dwp latent rank
    std::size_t reduction = 4;
    bool da_full_gate = false;
    double lambda_orth = 0.0;
    std::size_t batch = 4096;
    std::size_t eval_every = 2000;
    std::size_t patience = 5;
    std::size_t max_steps = 20000;
    std::uint64_t seed = 1;
    FtrlHyper ftrl{0.05, 1.0, 0.0, 0.0};    // static interaction/head tensors
    FtrlHyper gftrl{0.05, 1.0, 0.0, 0.0};   // embedding rows
    AdamHyper adam{1e-3, 0.9, 0.999, 1e-8};  // generator nets

    void validate() const {
        if (subspaces == 0 || embed_dim % subspaces != 0)
            throw ConfigError("config: subspaces must divide embed_dim");
        if (rank < 1) throw ConfigError("config: rank must be >= 1");
        if (batch < 1) throw ConfigError("config: batch must be >= 1");
    }
};

// Flat key-value config with exhaustive key validation: a misspelled
// hyperparameter is an error, not a silent default.
inline TrainConfig parse_train_config(std::istream& in) {
    std::map<std::string, std::string> kv;
    std::string line;
    while (std::getline(in, line)) {
        std::istringstream ls(line);
        std::string key, value;
        if (!(ls >> key) || key[0] == '#') continue;
        if (!(ls >> value)) throw ConfigError("config: key '" + key + "' has no value");
        if (!kv.emplace(key, value).second)
            throw ConfigError("config: duplicate key '" + key + "'");
    }
    TrainConfig c;
    auto take = [&](const char* key) {
        auto it = kv.find(key);
        if (it == kv.end()) return std::string();
        std::string v = it->second;
        kv.erase(it);
        return v;
    };
    auto as_size = [](const std::string& v, std::size_t dflt) {
        return v.empty() ? dflt : static_cast<std::size_t>(std::stoull(v));
    };
    auto as_double = [](const std::string& v, double dflt) {
        return v.empty() ? dflt : std::stod(v);
    };
    if (std::string v = take("variant"); !v.empty()) {
        if (v == "pin") c.variant = Variant::Pin;
        else if (v == "da") c.variant = Variant::Da;
        else if (v == "dgp") c.variant = Variant::Dgp;
        else if (v == "dwp") c.variant = Variant::Dwp;
        else throw ConfigError("config: unknown variant '" + v + "'");
    }
    c.depth = as_size(take("depth"), c.depth);
    c.subspaces = as_size(take("subspaces"), c.subspaces);
    c.embed_dim = as_size(take("embed_dim"), c.embed_dim);
    c.rank = as_size(take("rank"), c.rank);
    c.reduction = as_size(take("reduction"), c.reduction);
    if (std::string v = take("da_full_gate"); !v.empty()) c.da_full_gate = (v == "1" || v == "true");
    c.lambda_orth = as_double(take("lambda_orth"), c.lambda_orth);
    c.batch = as_size(take("batch"), c.batch);
    c.eval_every = as_size(take("eval_every"), c.eval_every);
    c.patience = as_size(take("patience"), c.patience);
    c.max_steps = as_size(take("max_steps"), c.max_steps);
    c.seed = as_size(take("seed"), c.seed);
    c.ftrl.alpha = as_double(take("ftrl_alpha"), c.ftrl.alpha);
    c.ftrl.beta = as_double(take("ftrl_beta"), c.ftrl.beta);
    c.ftrl.lambda1 = as_double(take("ftrl_lambda1"), c.ftrl.lambda1);
    c.ftrl.lambda2 = as_double(take("ftrl_lambda2"), c.ftrl.lambda2);
    c.gftrl.alpha = as_double(take("gftrl_alpha"), c.gftrl.alpha);
    c.gftrl.beta = as_double(take("gftrl_beta"), c.gftrl.beta);
    c.gftrl.lambda1 = as_double(take("gftrl_lambda1"), c.gftrl.lambda1);
    c.gftrl.lambda2 = as_double(take("gftrl_lambda2"), c.gftrl.lambda2);
    c.adam.alpha = as_double(take("adam_alpha"), c.adam.alpha);
    c.adam.beta1 = as_double(take("adam_beta1"), c.adam.beta1);
    c.adam.beta2 = as_double(take("adam_beta2"), c.adam.beta2);
    c.adam.eps = as_double(take("adam_eps"), c.adam.eps);
    if (!kv.empty()) throw ConfigError("config: unknown key '" + kv.begin()->first + "'");
    c.validate();
    return c;
}

inline TrainConfig parse_train_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    return parse_train_config(in);
}

inline std::string serialize_train_config(const TrainConfig& c) {
    std::ostringstream out;
    out << "variant " << variant_name(c.variant) << "\n"
        << "depth " << c.depth << "\n"
        << "subspaces " << c.subspaces << "\n"
        << "embed_dim " << c.embed_dim << "\n"
        << "rank " << c.rank << "\n"
        << "reduction " << c.reduction << "\n"
        << "da_full_gate " << (c.da_full_gate ? 1 : 0) << "\n"
        << "lambda_orth " << c.lambda_orth << "\n"
        << "batch " << c.batch << "\n"
        << "eval_every " << c.eval_every << "\n"
        << "patience " << c.patience << "\n"
        << "max_steps " << c.max_steps << "\n"
        << "seed " << c.seed << "\n"
        << "ftrl_alpha " << c.ftrl.alpha << "\nftrl_beta " << c.ftrl.beta << "\nftrl_lambda1 "
        << c.ftrl.lambda1 << "\nftrl_lambda2 " << c.ftrl.lambda2 << "\n"
        << "gftrl_alpha " << c.gftrl.alpha << "\ngftrl_beta " << c.gftrl.beta << "\ngftrl_lambda1 "
        << c.gftrl.lambda1 << "\ngftrl_lambda2 " << c.gftrl.lambda2 << "\n"
        << "adam_alpha " << c.adam.alpha << "\nadam_beta1 " << c.adam.beta1 << "\nadam_beta2 "
        << c.adam.beta2 << "\nadam_eps " << c.adam.eps << "\n";
    return out.str();
}

// ---------------------------------------------------------------------------
// Composite optimizer bound to a model's parameter groups.

struct Optimizers {
    std::vector<GroupFtrlState> embedding;            // per field
    std::map<std::string, FtrlState> statics;         // per static tensor
    std::map<std::string, AdamState> generators;      // per generator tensor

    static Optimizers init(Model& m, const TrainConfig& c) {
        Optimizers o;
        // Embedding accumulators start at zero: rows rebuilt from z = 0 on
        // first touch recover through later gradients, and a zero start keeps
        // the group-lasso row norms purely gradient-driven. Static tensors are
        // warm-started instead; the low-rank factors need it (a wiped U and V
        // gate each other's gradients to zero and never recover).
        for (const auto& t : m.embedding.tables)
            o.embedding.push_back(GroupFtrlState::init(t.rows(), t.cols(), c.gftrl));
        for (const auto& p : m.params()) {
            if (p.group == ParamGroup::Static) {
                FtrlState s = FtrlState::init(p.size, c.ftrl);
                ftrl_seed(s, p.data, p.size);
                o.statics.emplace(p.name, std::move(s));
            } else if (p.group == ParamGroup::Generator) {
                o.generators.emplace(p.name, AdamState::init(p.size, c.adam));
            }
        }
        return o;
    }
};

// One full forward + backward + per-group optimizer step on a batch of row
// pointers. Returns the batch loss decomposition.
inline LossValue train_step(Model& m, Optimizers& opt, const TrainConfig& cfg,
                            const std::vector<const DatasetRow*>& batch) {
    const std::size_t B = batch.size();
    ModelGrads grads = ModelGrads::zeros_like(m);
    LossValue loss;
    loss.lambda = cfg.lambda_orth;

    // Per-instance forward fans out; gradient accumulation below is a serial
    // reduction in index order so results are independent of thread count.
    std::vector<double> probs(B), labels(B);
    std::vector<ModelCache> caches(B);
    parallel_for(B, [&](std::size_t i) {
        probs[i] = model_forward(m, batch[i]->indices, caches[i]);
        labels[i] = static_cast<double>(batch[i]->label);
    });
    loss.data_loss = log_loss(probs, labels);

    for (std::size_t i = 0; i < B; ++i) {
        const double d_logit = log_loss_dlogit(probs[i], labels[i], B);
        model_backward(m, batch[i]->indices, caches[i], d_logit, grads);
        if (m.stack.variant == Variant::Dwp && cfg.lambda_orth > 0.0 && m.stack.rank > 1) {
            // per-instance orthogonal penalty on the generated (u, v) pairs,
            // scaled 1/B so lambda is batch-size independent
            const std::size_t S = m.stack.stacked_rows();
            for (std::size_t l = 0; l < m.stack.depth; ++l) {
                const auto& uv = caches[i].layers.gen[l].out;
                std::vector<double> d_uv(uv.size(), 0.0);
                loss.orth_penalty +=
                    orth_penalty_dwp_instance(uv, m.stack.rank, S, &d_uv) / static_cast<double>(B);
                for (double& g : d_uv) g *= cfg.lambda_orth / static_cast<double>(B);
                generator_backward(m.stack.gens[l], caches[i].layers.gen[l], d_uv,
                                   grads.layers.gens[l]);
            }
        }
    }
    if (m.stack.variant == Variant::Dgp && cfg.lambda_orth > 0.0 && m.stack.rank > 1) {
        std::vector<DenseMatrix> d_u, d_v;
        for (const auto& u : m.stack.u) d_u.emplace_back(u.rows(), u.cols());
        for (const auto& v : m.stack.v) d_v.emplace_back(v.rows(), v.cols());
        loss.orth_penalty = orth_penalty_dgp(m.stack.u, m.stack.v, &d_u, &d_v);
        for (std::size_t l = 0; l < d_u.size(); ++l) {
            d_u[l] *= cfg.lambda_orth;
            d_v[l] *= cfg.lambda_orth;
            grads.layers.u[l] += d_u[l];
            grads.layers.v[l] += d_v[l];
        }
    }
    if (!std::isfinite(loss.total()))
        throw TrainingError("train_step: non-finite loss; see last checkpoint in the run directory");

    // Optimizer steps. Embedding rows untouched in this batch are skipped so
    // their accumulators do not drift.
    for (std::size_t f = 0; f < m.embedding.tables.size(); ++f) {
        DenseMatrix& table = m.embedding.tables[f];
        const DenseMatrix& g = grads.embedding[f];
        for (std::size_t r = 0; r < table.rows(); ++r) {
            if (!grads.touched_rows[f][r]) continue;
            gftrl_step_row(opt.embedding[f], r, g.data() + r * g.cols(),
                           table.data() + r * table.cols());
        }
    }
    auto mp = m.params();
    auto gp = grads.params(m);
    for (std::size_t i = 0; i < mp.size(); ++i) {
        if (mp[i].group == ParamGroup::Static)
            ftrl_step(opt.statics.at(mp[i].name), gp[i].data, mp[i].data, mp[i].size);
        else if (mp[i].group == ParamGroup::Generator)
            adam_step(opt.generators.at(mp[i].name), gp[i].data, mp[i].data, mp[i].size);
    }
    return loss;
}

// Full-pass deterministic metrics; no parameter mutation. Scoring fans out
// to the worker pool; each row writes its own slot, so the report does not
// depend on the thread count.
inline MetricReport evaluate(const Model& m, const Dataset& data) {
    MetricReport r;
    r.n = data.rows.size();
    std::vector<double> probs(r.n), labels(r.n);
    parallel_for(r.n, [&](std::size_t i) {
        ModelCache cache;
        probs[i] = model_forward(m, data.rows[i].indices, cache);
        labels[i] = static_cast<double>(data.rows[i].label);
    });
    r.logloss = log_loss(probs, labels);
    r.auc = auc(probs, labels);
    return r;
}

// ---------------------------------------------------------------------------
// Early stopping on validation logloss: stop after `patience` consecutive
// evaluations without improvement greater than 1e-5.

struct RunState {
    std::size_t step = 0;
    double best_logloss = 1e300;
    std::size_t evals_since_improve = 0;
    std::vector<MetricReport> history;
};

constexpr double kImprovementThreshold = 1e-5;

inline bool early_stop(RunState& run, const MetricReport& report, std::size_t patience) {
    run.history.push_back(report);
    if (report.logloss < run.best_logloss - kImprovementThreshold) {
        run.best_logloss = report.logloss;
        run.evals_since_improve = 0;
        return false;
    }
    ++run.evals_since_improve;
    return run.evals_since_improve >= patience;
}

// ---------------------------------------------------------------------------
// Training driver. Callbacks let the CLI write metrics CSV and checkpoints.

struct TrainResult {
    RunState run;
    TensorMap best_checkpoint;
    MetricReport best_valid;
    std::vector<double> loss_history;
};

inline TrainResult train_loop(
    Model& m, const TrainConfig& cfg, const Dataset& train, const Dataset& valid,
    const std::function<void(std::size_t, const char*, const MetricReport&)>& on_eval = nullptr) {
    Optimizers opt = Optimizers::init(m, cfg);
    TrainResult result;
    Rng shuffle_rng(cfg.seed ^ 0x5f3759df);
    std::vector<std::size_t> order(train.rows.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    bool stopped = false;
    while (!stopped && result.run.step < cfg.max_steps) {
        shuffle_rng.shuffle(order);  // one epoch, no replacement, short tail kept
        for (std::size_t start = 0; start < order.size() && !stopped; start += cfg.batch) {
            const std::size_t end = std::min(order.size(), start + cfg.batch);
            std::vector<const DatasetRow*> batch;
            batch.reserve(end - start);
            for (std::size_t i = start; i < end; ++i) batch.push_back(&train.rows[order[i]]);
            const LossValue loss = train_step(m, opt, cfg, batch);
            result.loss_history.push_back(loss.total());
            ++result.run.step;
            if (result.run.step % cfg.eval_every == 0 && !valid.rows.empty()) {
                const MetricReport report = evaluate(m, valid);
                if (on_eval) on_eval(result.run.step, "valid", report);
                const double prev_best = result.run.best_logloss;
                stopped = early_stop(result.run, report, cfg.patience);
                if (report.logloss < prev_best - kImprovementThreshold) {
                    result.best_checkpoint = model_to_tensors(m);
                    result.best_valid = report;
                }
            }
            if (result.run.step >= cfg.max_steps) break;
        }
    }
    if (result.best_checkpoint.empty()) {
        result.best_checkpoint = model_to_tensors(m);
        if (!valid.rows.empty()) result.best_valid = evaluate(m, valid);
    }
    return result;
}

// ---------------------------------------------------------------------------
// Parameter / FLOP / memory accounting from the closed-form expressions.

struct ParamCounts {
    std::size_t embedding = 0;
    std::size_t interaction_static = 0;  // W / U,V per layer
    std::size_t generators = 0;
    std::size_t head = 0;
    std::size_t total() const { return embedding + interaction_static + generators + head; }
};

inline ParamCounts count_params(const TrainConfig& c, const std::vector<std::uint32_t>& cards) {
    ParamCounts p;
    const std::size_t F = cards.size();
    const std::size_t S = F * c.subspaces;
    for (auto card : cards) p.embedding += static_cast<std::size_t>(card) * c.embed_dim;
    const std::size_t in_dim = F * c.embed_dim;
    const std::size_t hidden = std::max<std::size_t>(1, in_dim / c.reduction);
    auto gen_params = [&](std::size_t out_dim) {
        return hidden * in_dim + hidden + out_dim * hidden + out_dim;
    };
    for (std::size_t l = 0; l < c.depth; ++l) {
        switch (c.variant) {
            case Variant::Pin:
                p.interaction_static += S * S;
                break;
            case Variant::Da:
                p.interaction_static += S * S;
                p.generators += gen_params(c.da_full_gate ? S * (c.embed_dim / c.subspaces) : S);
                break;
            case Variant::Dgp:
                p.interaction_static += 2 * S * c.rank;
                p.generators += gen_params(c.rank);
                break;
            case Variant::Dwp:
                p.interaction_static += S * S;
                p.generators += gen_params(2 * c.rank * S);
                break;
        }
    }
    p.head = F + 1;
    return p;
}

// FLOPs of one instance's interaction map per layer (order-of-magnitude
// bookkeeping matching the complexity expressions; constants omitted).
inline std::size_t flops_per_layer_dense(std::size_t F, std::size_t D) { return F * F * D; }
inline std::size_t flops_per_layer_dgp_lowrank(std::size_t F, std::size_t K, std::size_t D) {
    return 2 * F * K * K + F * K * D;
}

// Per-batch element counts of the dynamic parameter state.
inline std::size_t dgp_dynamic_elems_lowrank(std::size_t B, std::size_t F, std::size_t K) {
    return B * K + 2 * F * K;
}
inline std::size_t dgp_dynamic_elems_dense(std::size_t B, std::size_t F) { return B * F * F; }

}  // namespace dynint
