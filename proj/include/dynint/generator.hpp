#pragma once

#include <cmath>
#include <vector>

#include "dynint/error.hpp"
#include "dynint/matrix.hpp"

namespace dynint {

enum class GeneratorOutput {
    Gate,       // 2 * sigmoid(x), entries in (0, 2)
    Identity,   // raw affine output (DGP sigmas)
    PlusInvK,   // identity + 1/K (DWP u/v pairs)
};

// Two-layer dense net: F*D -> (F*D)/r -> out_dim, relu hidden, per-variant
// output transform. The flattened X0 input is gradient-blocked: backward
// produces grads for the four parameter tensors only, never for the input.
struct GeneratorNet {
    DenseMatrix hidden_w;  // H x (F*D)
    std::vector<double> hidden_b;
    DenseMatrix out_w;     // out_dim x H
    std::vector<double> out_b;
    GeneratorOutput transform = GeneratorOutput::Identity;
    std::size_t latent_rank = 1;  // K, for PlusInvK

    std::size_t in_dim() const { return hidden_w.cols(); }
    std::size_t hidden_dim() const { return hidden_w.rows(); }
    std::size_t out_dim() const { return out_w.rows(); }

    // Hidden layer gets 1/sqrt(fan_in) normal init; output layer starts at
    // zero so the net sits exactly at its identity point (gate=1, sigma=0,
    // DWP entries=1/K).
    static GeneratorNet init(std::size_t in_dim, std::size_t out_dim, std::size_t reduction,
                             GeneratorOutput transform, std::size_t latent_rank, Rng& rng) {
        if (reduction < 1) throw ConfigError("generator reduction ratio must be >= 1");
        GeneratorNet n;
        const std::size_t hidden = std::max<std::size_t>(1, in_dim / reduction);
        n.hidden_w = random_matrix(hidden, in_dim, rng, 1.0 / std::sqrt(static_cast<double>(in_dim)));
        n.hidden_b.assign(hidden, 0.0);
        n.out_w = DenseMatrix(out_dim, hidden);
        n.out_b.assign(out_dim, 0.0);
        n.transform = transform;
        n.latent_rank = latent_rank;
        return n;
    }
};

struct GeneratorCache {
    std::vector<double> input;       // gradient-blocked copy of flat X0
    std::vector<double> hidden_pre;  // before relu
    std::vector<double> hidden;      // after relu
    std::vector<double> out_pre;     // before transform
    std::vector<double> out;         // after transform
};

inline std::vector<double> generator_forward(const GeneratorNet& net,
                                             const std::vector<double>& input,
                                             GeneratorCache& cache) {
    if (input.size() != net.in_dim())
        throw ShapeError("generator_forward: input length " + std::to_string(input.size()) +
                         " != " + std::to_string(net.in_dim()));
    cache.input = input;
    const std::size_t H = net.hidden_dim();
    cache.hidden_pre.assign(H, 0.0);
    for (std::size_t h = 0; h < H; ++h) {
        double s = net.hidden_b[h];
        for (std::size_t i = 0; i < input.size(); ++i) s += net.hidden_w(h, i) * input[i];
        cache.hidden_pre[h] = s;
    }
    cache.hidden.resize(H);
    for (std::size_t h = 0; h < H; ++h) cache.hidden[h] = std::max(0.0, cache.hidden_pre[h]);

    const std::size_t O = net.out_dim();
    cache.out_pre.assign(O, 0.0);
    for (std::size_t o = 0; o < O; ++o) {
        double s = net.out_b[o];
        for (std::size_t h = 0; h < H; ++h) s += net.out_w(o, h) * cache.hidden[h];
        cache.out_pre[o] = s;
    }
    cache.out.resize(O);
    switch (net.transform) {
        case GeneratorOutput::Gate:
            for (std::size_t o = 0; o < O; ++o)
                cache.out[o] = 2.0 / (1.0 + std::exp(-cache.out_pre[o]));
            break;
        case GeneratorOutput::Identity:
            cache.out = cache.out_pre;
            break;
        case GeneratorOutput::PlusInvK: {
            const double shift = 1.0 / static_cast<double>(net.latent_rank);
            for (std::size_t o = 0; o < O; ++o) cache.out[o] = cache.out_pre[o] + shift;
            break;
        }
    }
    return cache.out;
}

struct GeneratorGrads {
    DenseMatrix hidden_w;
    std::vector<double> hidden_b;
    DenseMatrix out_w;
    std::vector<double> out_b;

    static GeneratorGrads zeros_like(const GeneratorNet& net) {
        GeneratorGrads g;
        g.hidden_w = DenseMatrix(net.hidden_dim(), net.in_dim());
        g.hidden_b.assign(net.hidden_dim(), 0.0);
        g.out_w = DenseMatrix(net.out_dim(), net.hidden_dim());
        g.out_b.assign(net.out_dim(), 0.0);
        return g;
    }

    void add(const GeneratorGrads& o) {
        hidden_w += o.hidden_w;
        out_w += o.out_w;
        for (std::size_t i = 0; i < hidden_b.size(); ++i) hidden_b[i] += o.hidden_b[i];
        for (std::size_t i = 0; i < out_b.size(); ++i) out_b[i] += o.out_b[i];
    }
};

// d_out is the gradient w.r.t. the transformed output. Accumulates into
// grads; no gradient is returned for the input (by contract).
inline void generator_backward(const GeneratorNet& net, const GeneratorCache& cache,
                               const std::vector<double>& d_out, GeneratorGrads& grads) {
    const std::size_t O = net.out_dim();
    const std::size_t H = net.hidden_dim();
    std::vector<double> d_pre(O);
    switch (net.transform) {
        case GeneratorOutput::Gate:
            // out = 2*s(z); d(out)/dz = 2*s*(1-s) = out*(1 - out/2)
            for (std::size_t o = 0; o < O; ++o)
                d_pre[o] = d_out[o] * cache.out[o] * (1.0 - 0.5 * cache.out[o]);
            break;
        case GeneratorOutput::Identity:
        case GeneratorOutput::PlusInvK:
            d_pre = d_out;
            break;
    }
    std::vector<double> d_hidden(H, 0.0);
    for (std::size_t o = 0; o < O; ++o) {
        grads.out_b[o] += d_pre[o];
        for (std::size_t h = 0; h < H; ++h) {
            grads.out_w(o, h) += d_pre[o] * cache.hidden[h];
            d_hidden[h] += net.out_w(o, h) * d_pre[o];
        }
    }
    for (std::size_t h = 0; h < H; ++h) {
        const double d_hpre = cache.hidden_pre[h] > 0.0 ? d_hidden[h] : 0.0;
        grads.hidden_b[h] += d_hpre;
        if (d_hpre != 0.0)
            for (std::size_t i = 0; i < net.in_dim(); ++i)
                grads.hidden_w(h, i) += d_hpre * cache.input[i];
    }
}

}  // namespace dynint
