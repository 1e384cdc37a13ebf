#pragma once

#include <cmath>
#include <vector>

#include "dynint/error.hpp"
#include "dynint/generator.hpp"
#include "dynint/matrix.hpp"

namespace dynint {

enum class Variant { Pin, Da, Dgp, Dwp };

inline const char* variant_name(Variant v) {
    switch (v) {
        case Variant::Pin: return "pin";
        case Variant::Da: return "da";
        case Variant::Dgp: return "dgp";
        case Variant::Dwp: return "dwp";
    }
    return "?";
}

// ---------------------------------------------------------------------------
// Subspace crossing: split D into h column blocks and restack by field, so
// the interaction layers cross bits of different embedding coordinates.

inline DenseMatrix subspace_stack(const DenseMatrix& x, std::size_t h) {
    if (h == 0 || x.cols() % h != 0)
        throw ConfigError("subspace_stack: h=" + std::to_string(h) + " does not divide D=" +
                          std::to_string(x.cols()));
    const std::size_t F = x.rows(), dh = x.cols() / h;
    DenseMatrix out(F * h, dh);
    for (std::size_t j = 0; j < h; ++j)
        for (std::size_t f = 0; f < F; ++f)
            for (std::size_t d = 0; d < dh; ++d) out(j * F + f, d) = x(f, j * dh + d);
    return out;
}

inline DenseMatrix subspace_unstack(const DenseMatrix& xs, std::size_t h, std::size_t fields) {
    if (xs.rows() != fields * h)
        throw ConfigError("subspace_unstack: rows " + std::to_string(xs.rows()) + " != F*h");
    const std::size_t dh = xs.cols();
    DenseMatrix out(fields, dh * h);
    for (std::size_t j = 0; j < h; ++j)
        for (std::size_t f = 0; f < fields; ++f)
            for (std::size_t d = 0; d < dh; ++d) out(f, j * dh + d) = xs(j * fields + f, d);
    return out;
}

// ---------------------------------------------------------------------------
// Parameter bundle for an L-layer interaction stack of one variant. All
// shapes are in stacked coordinates: S = F*h rows, D/h columns.

struct LayerStack {
    Variant variant = Variant::Pin;
    std::size_t fields = 0;      // F, before stacking
    std::size_t embed_dim = 0;   // D
    std::size_t subspaces = 1;   // h
    std::size_t depth = 0;       // L
    std::size_t rank = 1;        // K: dgp kernel size / dwp latent rank
    bool da_full_gate = false;   // gate per (row, col) instead of per row

    std::vector<DenseMatrix> w;        // pin/da/dwp: S x S per layer
    std::vector<DenseMatrix> u, v;     // dgp: S x K per layer
    std::vector<GeneratorNet> gens;    // da/dgp/dwp: one per layer

    std::size_t stacked_rows() const { return fields * subspaces; }
    std::size_t stacked_cols() const { return embed_dim / subspaces; }

    static LayerStack init(Variant variant, std::size_t fields, std::size_t embed_dim,
                           std::size_t subspaces, std::size_t depth, std::size_t rank,
                           std::size_t reduction, Rng& rng, bool da_full_gate = false) {
        if (subspaces == 0 || embed_dim % subspaces != 0)
            throw ConfigError("subspace count h must divide the embedding dimension");
        if (rank < 1) throw ConfigError("rank K must be >= 1");
        LayerStack s;
        s.variant = variant;
        s.fields = fields;
        s.embed_dim = embed_dim;
        s.subspaces = subspaces;
        s.depth = depth;
        s.rank = rank;
        s.da_full_gate = da_full_gate;
        const std::size_t S = s.stacked_rows();
        const std::size_t in_dim = fields * embed_dim;  // generators read unstacked flat X0
        const double wscale = 1.0 / std::sqrt(static_cast<double>(S));
        for (std::size_t l = 0; l < depth; ++l) {
            switch (variant) {
                case Variant::Pin:
                    s.w.push_back(random_matrix(S, S, rng, wscale));
                    break;
                case Variant::Da: {
                    s.w.push_back(random_matrix(S, S, rng, wscale));
                    const std::size_t out = da_full_gate ? S * s.stacked_cols() : S;
                    s.gens.push_back(GeneratorNet::init(in_dim, out, reduction,
                                                        GeneratorOutput::Gate, 1, rng));
                    break;
                }
                case Variant::Dgp:
                    s.u.push_back(random_matrix(S, rank, rng, wscale));
                    s.v.push_back(random_matrix(S, rank, rng, wscale));
                    s.gens.push_back(GeneratorNet::init(in_dim, rank, reduction,
                                                        GeneratorOutput::Identity, rank, rng));
                    break;
                case Variant::Dwp:
                    s.w.push_back(random_matrix(S, S, rng, wscale));
                    s.gens.push_back(GeneratorNet::init(in_dim, 2 * rank * S, reduction,
                                                        GeneratorOutput::PlusInvK, rank, rng));
                    break;
            }
        }
        return s;
    }
};

// Per-instance activations kept by forward for the analytic backward.
struct LayerCache {
    DenseMatrix x0s;                       // stacked input, S x D/h
    std::vector<DenseMatrix> x;            // x[l], l = 0..L
    std::vector<DenseMatrix> a;            // interaction map per layer (M_l * X0)
    std::vector<GeneratorCache> gen;       // per layer, dynamic variants
    std::vector<DenseMatrix> dgp_t;        // V^T X0 per layer, K x D/h
    std::vector<std::vector<DenseMatrix>> dwp_y;  // rowscale(v_p, X0) per layer per p
    std::vector<std::vector<DenseMatrix>> dwp_z;  // W * Y_p per layer per p

    // Elements of per-instance dynamic parameter state actually stored by the
    // production low-rank paths (memory-accounting hook).
    std::size_t dynamic_param_elems = 0;
};

struct LayerGrads {
    std::vector<DenseMatrix> w, u, v;
    std::vector<GeneratorGrads> gens;

    static LayerGrads zeros_like(const LayerStack& s) {
        LayerGrads g;
        for (const auto& m : s.w) g.w.emplace_back(m.rows(), m.cols());
        for (const auto& m : s.u) g.u.emplace_back(m.rows(), m.cols());
        for (const auto& m : s.v) g.v.emplace_back(m.rows(), m.cols());
        for (const auto& n : s.gens) g.gens.push_back(GeneratorGrads::zeros_like(n));
        return g;
    }

    void add(const LayerGrads& o) {
        for (std::size_t i = 0; i < w.size(); ++i) w[i] += o.w[i];
        for (std::size_t i = 0; i < u.size(); ++i) u[i] += o.u[i];
        for (std::size_t i = 0; i < v.size(); ++i) v[i] += o.v[i];
        for (std::size_t i = 0; i < gens.size(); ++i) gens[i].add(o.gens[i]);
    }
};

namespace detail {

inline std::vector<double> flatten(const DenseMatrix& m) { return m.raw(); }

// Gate vector broadcast to S x C (row gate) or reshaped (full gate).
inline DenseMatrix broadcast_gate(const std::vector<double>& gate, std::size_t S, std::size_t C,
                                  bool full) {
    DenseMatrix g(S, C);
    if (full) {
        for (std::size_t i = 0; i < S * C; ++i) g.raw()[i] = gate[i];
    } else {
        for (std::size_t r = 0; r < S; ++r)
            for (std::size_t c = 0; c < C; ++c) g(r, c) = gate[r];
    }
    return g;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Forward. x0 is the unstacked F x D feature map of one instance. Returns the
// stacked X_L; the caller unstacks before the output head.

// gen_input, when given, replaces x0 as the (gradient-blocked) generator
// input; tests use it to freeze gates while perturbing x0.
inline DenseMatrix layers_forward(const LayerStack& s, const DenseMatrix& x0, LayerCache& cache,
                                  const DenseMatrix* gen_input = nullptr) {
    if (x0.rows() != s.fields || x0.cols() != s.embed_dim)
        throw ShapeError("layers_forward: X0 is " + x0.shape_str() + ", expected " +
                         std::to_string(s.fields) + "x" + std::to_string(s.embed_dim));
    const std::size_t L = s.depth;
    cache = LayerCache{};
    cache.x0s = subspace_stack(x0, s.subspaces);
    cache.x.resize(L + 1);
    cache.a.resize(L);
    cache.x[0] = cache.x0s;
    if (!s.gens.empty()) cache.gen.resize(L);
    if (s.variant == Variant::Dgp) cache.dgp_t.resize(L);
    if (s.variant == Variant::Dwp) {
        cache.dwp_y.resize(L);
        cache.dwp_z.resize(L);
    }
    const std::vector<double> flat_x0 = detail::flatten(gen_input ? *gen_input : x0);
    const std::size_t S = s.stacked_rows(), C = s.stacked_cols();

    for (std::size_t l = 0; l < L; ++l) {
        DenseMatrix a(S, C);
        switch (s.variant) {
            case Variant::Pin:
                a = matmul(s.w[l], cache.x0s);
                break;
            case Variant::Da:
                a = matmul(s.w[l], cache.x0s);
                generator_forward(s.gens[l], flat_x0, cache.gen[l]);
                break;
            case Variant::Dgp: {
                const auto sigma = generator_forward(s.gens[l], flat_x0, cache.gen[l]);
                cache.dgp_t[l] = matmul(transpose(s.v[l]), cache.x0s);     // K x C
                a = matmul(s.u[l], row_scale(sigma, cache.dgp_t[l]));      // S x C
                cache.dynamic_param_elems += sigma.size();                 // K per instance
                break;
            }
            case Variant::Dwp: {
                const auto uv = generator_forward(s.gens[l], flat_x0, cache.gen[l]);
                cache.dwp_y[l].resize(s.rank);
                cache.dwp_z[l].resize(s.rank);
                for (std::size_t p = 0; p < s.rank; ++p) {
                    std::vector<double> up(uv.begin() + 2 * p * S, uv.begin() + (2 * p + 1) * S);
                    std::vector<double> vp(uv.begin() + (2 * p + 1) * S,
                                           uv.begin() + (2 * p + 2) * S);
                    cache.dwp_y[l][p] = row_scale(vp, cache.x0s);
                    cache.dwp_z[l][p] = matmul(s.w[l], cache.dwp_y[l][p]);
                    DenseMatrix term = row_scale(up, cache.dwp_z[l][p]);
                    a += term;
                }
                cache.dynamic_param_elems += uv.size();  // 2*K*S per instance
                break;
            }
        }
        cache.a[l] = a;

        DenseMatrix next = hadamard(cache.x[l], a);
        if (s.variant == Variant::Da) {
            const DenseMatrix g = detail::broadcast_gate(cache.gen[l].out, S, C, s.da_full_gate);
            next = hadamard(next, g);
        }
        next += cache.x[l];  // residual
        cache.x[l + 1] = std::move(next);
    }
    return cache.x[L];
}

// Dense DGP reference path: materializes W^(i) = U diag(sigma) V^T per layer.
// Test/verification only; its per-instance dynamic storage is S*S elements.
inline DenseMatrix dgp_forward_dense(const LayerStack& s, const DenseMatrix& x0,
                                     LayerCache& cache) {
    if (s.variant != Variant::Dgp) throw ConfigError("dgp_forward_dense: not a DGP stack");
    cache = LayerCache{};
    cache.x0s = subspace_stack(x0, s.subspaces);
    cache.x.resize(s.depth + 1);
    cache.x[0] = cache.x0s;
    cache.gen.resize(s.depth);
    const std::vector<double> flat_x0 = detail::flatten(x0);
    const std::size_t S = s.stacked_rows();
    for (std::size_t l = 0; l < s.depth; ++l) {
        const auto sigma = generator_forward(s.gens[l], flat_x0, cache.gen[l]);
        DenseMatrix wi = matmul(s.u[l], row_scale(sigma, transpose(s.v[l])));  // S x S
        cache.dynamic_param_elems += wi.size();
        DenseMatrix next = hadamard(cache.x[l], matmul(wi, cache.x0s));
        next += cache.x[l];
        cache.x[l + 1] = std::move(next);
    }
    return cache.x[s.depth];
}

// Dense DWP reference path: materializes G^(i) = sum_p u_p v_p^T and applies
// (G o W) X0. Test/verification only.
inline DenseMatrix dwp_forward_dense(const LayerStack& s, const DenseMatrix& x0,
                                     LayerCache& cache) {
    if (s.variant != Variant::Dwp) throw ConfigError("dwp_forward_dense: not a DWP stack");
    cache = LayerCache{};
    cache.x0s = subspace_stack(x0, s.subspaces);
    cache.x.resize(s.depth + 1);
    cache.x[0] = cache.x0s;
    cache.gen.resize(s.depth);
    const std::vector<double> flat_x0 = detail::flatten(x0);
    const std::size_t S = s.stacked_rows();
    for (std::size_t l = 0; l < s.depth; ++l) {
        const auto uv = generator_forward(s.gens[l], flat_x0, cache.gen[l]);
        DenseMatrix g(S, S);
        for (std::size_t p = 0; p < s.rank; ++p)
            for (std::size_t i = 0; i < S; ++i)
                for (std::size_t j = 0; j < S; ++j)
                    g(i, j) += uv[2 * p * S + i] * uv[(2 * p + 1) * S + j];
        cache.dynamic_param_elems += g.size();
        DenseMatrix next = hadamard(cache.x[l], matmul(hadamard(g, s.w[l]), cache.x0s));
        next += cache.x[l];
        cache.x[l + 1] = std::move(next);
    }
    return cache.x[s.depth];
}

// ---------------------------------------------------------------------------
// Backward: exact adjoint of layers_forward. d_xl is dLoss/dX_L in stacked
// coordinates; returns dLoss/dX0 unstacked and accumulates parameter grads.
// The generator -> X0 path is defined as zero (gradient-blocked input).

inline DenseMatrix layers_backward(const LayerStack& s, const LayerCache& cache,
                                   const DenseMatrix& d_xl, LayerGrads& grads) {
    const std::size_t L = s.depth;
    if (cache.x.size() != L + 1)
        throw TrainingError("layers_backward: cache does not match stack depth");
    const std::size_t S = s.stacked_rows(), C = s.stacked_cols();
    DenseMatrix g = d_xl;               // running dLoss/dX_l
    DenseMatrix d_x0s(S, C);            // contributions through the W*X0 terms

    for (std::size_t l = L; l-- > 0;) {
        const DenseMatrix& xl = cache.x[l];
        const DenseMatrix& a = cache.a[l];
        DenseMatrix d_a(S, C);
        DenseMatrix d_xprev = g;  // residual path

        if (s.variant == Variant::Da) {
            const DenseMatrix gate = detail::broadcast_gate(cache.gen[l].out, S, C, s.da_full_gate);
            // X_{l+1} = X_l o A o gate + X_l
            d_xprev += hadamard(g, hadamard(a, gate));
            d_a = hadamard(g, hadamard(xl, gate));
            const DenseMatrix d_gate_full = hadamard(g, hadamard(xl, a));
            std::vector<double> d_gate;
            if (s.da_full_gate) {
                d_gate = d_gate_full.raw();
            } else {
                d_gate.assign(S, 0.0);
                for (std::size_t r = 0; r < S; ++r)
                    for (std::size_t c = 0; c < C; ++c) d_gate[r] += d_gate_full(r, c);
            }
            generator_backward(s.gens[l], cache.gen[l], d_gate, grads.gens[l]);
        } else {
            // X_{l+1} = X_l o A + X_l
            d_xprev += hadamard(g, a);
            d_a = hadamard(g, xl);
        }

        switch (s.variant) {
            case Variant::Pin:
            case Variant::Da:
                grads.w[l] += matmul(d_a, transpose(cache.x0s));
                d_x0s += matmul(transpose(s.w[l]), d_a);
                break;
            case Variant::Dgp: {
                const std::vector<double>& sigma = cache.gen[l].out;
                const DenseMatrix& t = cache.dgp_t[l];
                const DenseMatrix st = row_scale(sigma, t);           // K x C
                grads.u[l] += matmul(d_a, transpose(st));
                const DenseMatrix d_st = matmul(transpose(s.u[l]), d_a);  // K x C
                std::vector<double> d_sigma(s.rank, 0.0);
                for (std::size_t k = 0; k < s.rank; ++k)
                    for (std::size_t c = 0; c < C; ++c) d_sigma[k] += d_st(k, c) * t(k, c);
                const DenseMatrix d_t = row_scale(sigma, d_st);
                grads.v[l] += matmul(cache.x0s, transpose(d_t));
                d_x0s += matmul(s.v[l], d_t);
                generator_backward(s.gens[l], cache.gen[l], d_sigma, grads.gens[l]);
                break;
            }
            case Variant::Dwp: {
                const std::vector<double>& uv = cache.gen[l].out;
                std::vector<double> d_uv(uv.size(), 0.0);
                for (std::size_t p = 0; p < s.rank; ++p) {
                    std::vector<double> up(uv.begin() + 2 * p * S, uv.begin() + (2 * p + 1) * S);
                    std::vector<double> vp(uv.begin() + (2 * p + 1) * S,
                                           uv.begin() + (2 * p + 2) * S);
                    const DenseMatrix& yp = cache.dwp_y[l][p];
                    const DenseMatrix& zp = cache.dwp_z[l][p];
                    for (std::size_t r = 0; r < S; ++r)
                        for (std::size_t c = 0; c < C; ++c)
                            d_uv[2 * p * S + r] += d_a(r, c) * zp(r, c);
                    const DenseMatrix d_z = row_scale(up, d_a);
                    grads.w[l] += matmul(d_z, transpose(yp));
                    const DenseMatrix d_y = matmul(transpose(s.w[l]), d_z);
                    for (std::size_t r = 0; r < S; ++r)
                        for (std::size_t c = 0; c < C; ++c)
                            d_uv[(2 * p + 1) * S + r] += d_y(r, c) * cache.x0s(r, c);
                    d_x0s += row_scale(vp, d_y);
                }
                generator_backward(s.gens[l], cache.gen[l], d_uv, grads.gens[l]);
                break;
            }
        }
        g = std::move(d_xprev);
    }
    d_x0s += g;  // chain through X_0 as the initial feature map
    return subspace_unstack(d_x0s, s.subspaces, s.fields);
}

// ---------------------------------------------------------------------------
// Output head: logit = (W_out X + b 1^T) 1 = sum_f w_f * rowsum_f(X) + b*D.

struct OutputHead {
    std::vector<double> w;  // length F
    double b = 0.0;
};

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline double output_logit(const DenseMatrix& x, const OutputHead& head) {
    if (x.rows() != head.w.size())
        throw ShapeError("output head: " + std::to_string(head.w.size()) + " weights for " +
                         x.shape_str() + " feature map");
    double logit = head.b * static_cast<double>(x.cols());
    for (std::size_t f = 0; f < x.rows(); ++f) {
        double rs = 0.0;
        for (std::size_t d = 0; d < x.cols(); ++d) rs += x(f, d);
        logit += head.w[f] * rs;
    }
    return logit;
}

inline double output_forward(const DenseMatrix& x, const OutputHead& head) {
    return sigmoid(output_logit(x, head));
}

struct OutputHeadGrads {
    std::vector<double> w;
    double b = 0.0;

    static OutputHeadGrads zeros_like(const OutputHead& h) {
        OutputHeadGrads g;
        g.w.assign(h.w.size(), 0.0);
        return g;
    }
    void add(const OutputHeadGrads& o) {
        for (std::size_t i = 0; i < w.size(); ++i) w[i] += o.w[i];
        b += o.b;
    }
};

inline DenseMatrix output_backward(const DenseMatrix& x, const OutputHead& head, double d_logit,
                                   OutputHeadGrads& grads) {
    DenseMatrix d_x(x.rows(), x.cols());
    for (std::size_t f = 0; f < x.rows(); ++f) {
        double rs = 0.0;
        for (std::size_t d = 0; d < x.cols(); ++d) {
            rs += x(f, d);
            d_x(f, d) = d_logit * head.w[f];
        }
        grads.w[f] += d_logit * rs;
    }
    grads.b += d_logit * static_cast<double>(x.cols());
    return d_x;
}

}  // namespace dynint
