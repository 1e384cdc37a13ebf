#pragma once

#include <functional>
#include <string>
#include <vector>

#include "dynint/checkpoint.hpp"
#include "dynint/embed.hpp"
#include "dynint/layers.hpp"
#include "dynint/objective.hpp"

namespace dynint {

// Optimizer assignment groups: embeddings get Group-Lasso-FTRL, static
// interaction/head tensors get FTRL, generator nets get Adam.
enum class ParamGroup { Embedding, Static, Generator };

struct ParamRef {
    std::string name;
    double* data;
    std::size_t size;
    ParamGroup group;
};

struct Model {
    EmbeddingTable embedding;
    LayerStack stack;
    OutputHead head;

    std::size_t fields() const { return embedding.num_fields(); }

    static Model init(Variant variant, const std::vector<std::uint32_t>& cardinalities,
                      std::size_t embed_dim, std::size_t subspaces, std::size_t depth,
                      std::size_t rank, std::size_t reduction, Rng& rng,
                      bool da_full_gate = false) {
        Model m;
        m.embedding = EmbeddingTable::init(cardinalities, embed_dim, rng);
        m.stack = LayerStack::init(variant, cardinalities.size(), embed_dim, subspaces, depth,
                                   rank, reduction, rng, da_full_gate);
        m.head.w.assign(cardinalities.size(), 0.0);
        m.head.b = 0.0;
        return m;
    }

    // Enumerates every trainable tensor in a fixed order. Pointers stay valid
    // while the model is not resized.
    std::vector<ParamRef> params() {
        std::vector<ParamRef> out;
        for (std::size_t f = 0; f < embedding.tables.size(); ++f)
            out.push_back({"embed.V." + std::to_string(f), embedding.tables[f].data(),
                           embedding.tables[f].size(), ParamGroup::Embedding});
        const char* wname = stack.variant == Variant::Dwp ? "dwp.W." : "pin.W.";
        for (std::size_t l = 0; l < stack.w.size(); ++l)
            out.push_back({wname + std::to_string(l), stack.w[l].data(), stack.w[l].size(),
                           ParamGroup::Static});
        for (std::size_t l = 0; l < stack.u.size(); ++l) {
            out.push_back({"dgp.U." + std::to_string(l), stack.u[l].data(), stack.u[l].size(),
                           ParamGroup::Static});
            out.push_back({"dgp.V." + std::to_string(l), stack.v[l].data(), stack.v[l].size(),
                           ParamGroup::Static});
        }
        for (std::size_t l = 0; l < stack.gens.size(); ++l) {
            GeneratorNet& g = stack.gens[l];
            const std::string p = "gen." + std::to_string(l) + ".";
            out.push_back({p + "hidden.W", g.hidden_w.data(), g.hidden_w.size(), ParamGroup::Generator});
            out.push_back({p + "hidden.b", g.hidden_b.data(), g.hidden_b.size(), ParamGroup::Generator});
            out.push_back({p + "out.W", g.out_w.data(), g.out_w.size(), ParamGroup::Generator});
            out.push_back({p + "out.b", g.out_b.data(), g.out_b.size(), ParamGroup::Generator});
        }
        out.push_back({"head.W_out", head.w.data(), head.w.size(), ParamGroup::Static});
        out.push_back({"head.b", &head.b, 1, ParamGroup::Static});
        return out;
    }
};

struct ModelCache {
    DenseMatrix x0;           // F x D
    LayerCache layers;
    DenseMatrix xl;           // unstacked F x D after the stack
    double logit = 0.0;
    double prob = 0.0;
};

// gen_input optionally freezes the generator input (see layers_forward).
inline double model_forward(const Model& m, const std::vector<std::uint32_t>& indices,
                            ModelCache& cache, const DenseMatrix* gen_input = nullptr) {
    cache.x0 = lookup(m.embedding, indices);
    const DenseMatrix xl_stacked = layers_forward(m.stack, cache.x0, cache.layers, gen_input);
    cache.xl = subspace_unstack(xl_stacked, m.stack.subspaces, m.stack.fields);
    cache.logit = output_logit(cache.xl, m.head);
    cache.prob = sigmoid(cache.logit);
    return cache.prob;
}

struct ModelGrads {
    std::vector<DenseMatrix> embedding;
    LayerGrads layers;
    OutputHeadGrads head;
    std::vector<std::vector<bool>> touched_rows;  // per field, for G-FTRL row skipping

    static ModelGrads zeros_like(Model& m) {
        ModelGrads g;
        for (const auto& t : m.embedding.tables) {
            g.embedding.emplace_back(t.rows(), t.cols());
            g.touched_rows.emplace_back(t.rows(), false);
        }
        g.layers = LayerGrads::zeros_like(m.stack);
        g.head = OutputHeadGrads::zeros_like(m.head);
        return g;
    }

    // Gradient tensors in the same order as Model::params().
    std::vector<ParamRef> params(const Model& m) {
        std::vector<ParamRef> out;
        for (std::size_t f = 0; f < embedding.size(); ++f)
            out.push_back({"embed.V." + std::to_string(f), embedding[f].data(),
                           embedding[f].size(), ParamGroup::Embedding});
        const char* wname = m.stack.variant == Variant::Dwp ? "dwp.W." : "pin.W.";
        for (std::size_t l = 0; l < layers.w.size(); ++l)
            out.push_back({wname + std::to_string(l), layers.w[l].data(), layers.w[l].size(),
                           ParamGroup::Static});
        for (std::size_t l = 0; l < layers.u.size(); ++l) {
            out.push_back({"dgp.U." + std::to_string(l), layers.u[l].data(), layers.u[l].size(),
                           ParamGroup::Static});
            out.push_back({"dgp.V." + std::to_string(l), layers.v[l].data(), layers.v[l].size(),
                           ParamGroup::Static});
        }
        for (std::size_t l = 0; l < layers.gens.size(); ++l) {
            GeneratorGrads& g = layers.gens[l];
            const std::string p = "gen." + std::to_string(l) + ".";
            out.push_back({p + "hidden.W", g.hidden_w.data(), g.hidden_w.size(), ParamGroup::Generator});
            out.push_back({p + "hidden.b", g.hidden_b.data(), g.hidden_b.size(), ParamGroup::Generator});
            out.push_back({p + "out.W", g.out_w.data(), g.out_w.size(), ParamGroup::Generator});
            out.push_back({p + "out.b", g.out_b.data(), g.out_b.size(), ParamGroup::Generator});
        }
        out.push_back({"head.W_out", head.w.data(), head.w.size(), ParamGroup::Static});
        out.push_back({"head.b", &head.b, 1, ParamGroup::Static});
        return out;
    }
};

// Backward of one instance given dLoss/dlogit; accumulates into grads.
inline void model_backward(const Model& m, const std::vector<std::uint32_t>& indices,
                           const ModelCache& cache, double d_logit, ModelGrads& grads) {
    const DenseMatrix d_xl = output_backward(cache.xl, m.head, d_logit, grads.head);
    const DenseMatrix d_xl_stacked = subspace_stack(d_xl, m.stack.subspaces);
    const DenseMatrix d_x0 = layers_backward(m.stack, cache.layers, d_xl_stacked, grads.layers);
    grad_scatter(grads.embedding, indices, d_x0);
    for (std::size_t f = 0; f < indices.size(); ++f) grads.touched_rows[f][indices[f]] = true;
}

// ---------------------------------------------------------------------------
// Checkpoint save/load. The meta block pins the architecture so load can
// verify shape agreement.

inline TensorMap model_to_tensors(Model& m) {
    TensorMap t;
    TensorBlock meta;
    meta.dims = {8};
    meta.data = {static_cast<double>(static_cast<int>(m.stack.variant)),
                 static_cast<double>(m.stack.fields),
                 static_cast<double>(m.stack.embed_dim),
                 static_cast<double>(m.stack.subspaces),
                 static_cast<double>(m.stack.depth),
                 static_cast<double>(m.stack.rank),
                 static_cast<double>(m.stack.da_full_gate ? 1 : 0),
                 static_cast<double>(m.embedding.num_fields())};
    t.emplace("meta", std::move(meta));
    TensorBlock cards;
    cards.dims = {m.embedding.num_fields()};
    for (const auto& tab : m.embedding.tables) cards.data.push_back(static_cast<double>(tab.rows()));
    t.emplace("meta.cardinalities", std::move(cards));
    for (const auto& p : m.params()) {
        TensorBlock b;
        b.dims = {p.size};
        b.data.assign(p.data, p.data + p.size);
        t.emplace(p.name, std::move(b));
    }
    return t;
}

inline void model_from_tensors(Model& m, const TensorMap& t) {
    for (const auto& p : m.params()) {
        auto it = t.find(p.name);
        if (it == t.end()) throw FormatError("checkpoint missing tensor '" + p.name + "'");
        if (it->second.data.size() != p.size)
            throw FormatError("checkpoint tensor '" + p.name + "' has " +
                              std::to_string(it->second.data.size()) + " elements, expected " +
                              std::to_string(p.size));
        std::copy(it->second.data.begin(), it->second.data.end(), p.data);
    }
}

// Rebuilds a model from a checkpoint's meta block. `reduction` is recovered
// from the stored generator shapes implicitly via tensor sizes, so any value
// that reproduces the hidden width works; we store exact shapes instead.
inline Model model_from_checkpoint(const TensorMap& t) {
    auto mit = t.find("meta");
    auto cit = t.find("meta.cardinalities");
    if (mit == t.end() || cit == t.end()) throw FormatError("checkpoint missing meta blocks");
    const auto& meta = mit->second.data;
    const Variant variant = static_cast<Variant>(static_cast<int>(meta[0]));
    const std::size_t fields = static_cast<std::size_t>(meta[1]);
    const std::size_t embed_dim = static_cast<std::size_t>(meta[2]);
    const std::size_t subspaces = static_cast<std::size_t>(meta[3]);
    const std::size_t depth = static_cast<std::size_t>(meta[4]);
    const std::size_t rank = static_cast<std::size_t>(meta[5]);
    const bool full_gate = meta[6] != 0.0;
    std::vector<std::uint32_t> cards;
    for (double c : cit->second.data) cards.push_back(static_cast<std::uint32_t>(c));
    if (cards.size() != fields) throw FormatError("checkpoint meta/cardinality mismatch");

    // Recover the generator hidden width from the stored tensor.
    std::size_t reduction = 1;
    auto hit = t.find("gen.0.hidden.b");
    if (hit != t.end() && !hit->second.data.empty()) {
        const std::size_t hidden = hit->second.data.size();
        reduction = std::max<std::size_t>(1, (fields * embed_dim) / hidden);
    }
    Rng rng(0);
    Model m = Model::init(variant, cards, embed_dim, subspaces, depth, rank, reduction, rng,
                          full_gate);
    model_from_tensors(m, t);
    return m;
}

}  // namespace dynint
