#include "doctest.h"

#include <vector>

#include "dynint/layers.hpp"
#include "dynint/oracle.hpp"

using namespace dynint;

namespace {

// Scalar probe: fixed random coefficients dotted with the stacked X_L.
double stack_scalar(const LayerStack& s, const DenseMatrix& x0, const DenseMatrix& coef,
                    const DenseMatrix* gen_input = nullptr) {
    LayerCache cache;
    const DenseMatrix xl = layers_forward(s, x0, cache, gen_input);
    double out = 0.0;
    for (std::size_t i = 0; i < xl.size(); ++i) out += coef.raw()[i] * xl.raw()[i];
    return out;
}

struct TensorRef {
    double* data;
    std::size_t size;
    const double* grad;
};

std::vector<TensorRef> stack_tensors(LayerStack& s, LayerGrads& g) {
    std::vector<TensorRef> out;
    for (std::size_t l = 0; l < s.w.size(); ++l)
        out.push_back({s.w[l].data(), s.w[l].size(), g.w[l].data()});
    for (std::size_t l = 0; l < s.u.size(); ++l) {
        out.push_back({s.u[l].data(), s.u[l].size(), g.u[l].data()});
        out.push_back({s.v[l].data(), s.v[l].size(), g.v[l].data()});
    }
    for (std::size_t l = 0; l < s.gens.size(); ++l) {
        out.push_back({s.gens[l].hidden_w.data(), s.gens[l].hidden_w.size(),
                       g.gens[l].hidden_w.data()});
        out.push_back({s.gens[l].hidden_b.data(), s.gens[l].hidden_b.size(),
                       g.gens[l].hidden_b.data()});
        out.push_back({s.gens[l].out_w.data(), s.gens[l].out_w.size(), g.gens[l].out_w.data()});
        out.push_back({s.gens[l].out_b.data(), s.gens[l].out_b.size(), g.gens[l].out_b.data()});
    }
    return out;
}

// Compares analytic backward against central finite differences for every
// parameter tensor and for X0 (generator input frozen for the X0 check).
void check_stack_gradients(LayerStack& s, std::uint64_t seed, double tol = 1e-4) {
    Rng rng(seed);
    DenseMatrix x0 = random_uniform_matrix(s.fields, s.embed_dim, rng);
    DenseMatrix coef = random_uniform_matrix(s.stacked_rows(), s.stacked_cols(), rng);
    // Perturb generator weights off the identity point so gates are nontrivial.
    for (auto& gen : s.gens)
        for (double& w : gen.out_w.raw()) w = 0.3 * rng.normal();

    LayerCache cache;
    layers_forward(s, x0, cache);
    LayerGrads grads = LayerGrads::zeros_like(s);
    DenseMatrix d_x0 = layers_backward(s, cache, coef, grads);

    for (auto& t : stack_tensors(s, grads)) {
        auto fd = finite_diff([&] { return stack_scalar(s, x0, coef); }, t.data, t.size);
        for (std::size_t i = 0; i < t.size; ++i) {
            CAPTURE(i);
            CHECK(rel_err(fd[i], t.grad[i]) < tol);
        }
    }

    // X0 gradient excludes the generator path by contract; freeze the
    // generator input at the unperturbed X0.
    const DenseMatrix frozen = x0;
    auto fd_x0 = finite_diff([&] { return stack_scalar(s, x0, coef, &frozen); }, x0.data(),
                             x0.size());
    for (std::size_t i = 0; i < x0.size(); ++i) {
        CAPTURE(i);
        CHECK(rel_err(fd_x0[i], d_x0.raw()[i]) < tol);
    }
}

}  // namespace

TEST_CASE("pin_forward hand cases") {
    // all-zero W: every layer adds zero, output == X0
    Rng rng(1);
    LayerStack s = LayerStack::init(Variant::Pin, 3, 2, 1, 3, 1, 2, rng);
    for (auto& w : s.w) w.fill(0.0);
    DenseMatrix x0 = random_uniform_matrix(3, 2, rng);
    LayerCache c;
    CHECK(layers_forward(s, x0, c).raw() == x0.raw());

    // F=2, D=1, L=1, W=I: [[1],[2]] -> [[2],[6]]
    LayerStack s1 = LayerStack::init(Variant::Pin, 2, 1, 1, 1, 1, 1, rng);
    s1.w[0] = identity(2);
    DenseMatrix x1(2, 1, {1, 2});
    auto out = layers_forward(s1, x1, c);
    CHECK(out(0, 0) == doctest::Approx(2.0));
    CHECK(out(1, 0) == doctest::Approx(6.0));

    // W = all 0.5: closed form x*(sum(w*x)+1) -> [[2.5],[5]]
    s1.w[0] = DenseMatrix(2, 2, 0.5);
    out = layers_forward(s1, x1, c);
    CHECK(out(0, 0) == doctest::Approx(2.5));
    CHECK(out(1, 0) == doctest::Approx(5.0));
}

TEST_CASE("subspace stack/unstack") {
    DenseMatrix x(2, 2, {1, 2, 3, 4});  // [[a,b],[c,d]]
    auto stacked = subspace_stack(x, 2);
    CHECK(stacked.rows() == 4);
    CHECK(stacked.cols() == 1);
    CHECK(stacked.raw() == std::vector<double>{1, 3, 2, 4});  // [[a],[c],[b],[d]]

    // h=1 is the identity
    CHECK(subspace_stack(x, 1).raw() == x.raw());

    // exact inverse on random maps
    Rng rng(5);
    DenseMatrix big = random_matrix(3, 6, rng);
    for (std::size_t h : {1u, 2u, 3u, 6u})
        CHECK(subspace_unstack(subspace_stack(big, h), h, 3).raw() == big.raw());

    CHECK_THROWS_AS(subspace_stack(x, 3), ConfigError);
}

TEST_CASE("pin_backward identity cases") {
    Rng rng(2);
    LayerStack s = LayerStack::init(Variant::Pin, 2, 2, 1, 1, 1, 1, rng);
    s.w[0].fill(0.0);
    DenseMatrix x0 = random_uniform_matrix(2, 2, rng);
    LayerCache c;
    layers_forward(s, x0, c);
    LayerGrads g = LayerGrads::zeros_like(s);

    // zero upstream -> zero grads
    DenseMatrix zero(2, 2);
    auto d_x0 = layers_backward(s, c, zero, g);
    CHECK(d_x0.raw() == std::vector<double>(4, 0.0));
    CHECK(g.w[0].raw() == std::vector<double>(4, 0.0));

    // W=0: the layer is the identity, dX0 == upstream
    DenseMatrix up = random_uniform_matrix(2, 2, rng);
    g = LayerGrads::zeros_like(s);
    d_x0 = layers_backward(s, c, up, g);
    CHECK(d_x0.raw() == up.raw());
}

TEST_CASE("pin gradients vs finite differences") {
    Rng rng(31);
    LayerStack s = LayerStack::init(Variant::Pin, 3, 2, 1, 2, 1, 2, rng);
    check_stack_gradients(s, 100);
}

TEST_CASE("da forward properties") {
    Rng rng(4);
    // zero generator -> gate exactly 1.0 -> equals static pin bitwise
    LayerStack da = LayerStack::init(Variant::Da, 3, 2, 1, 2, 1, 2, rng);
    LayerStack pin = LayerStack::init(Variant::Pin, 3, 2, 1, 2, 1, 2, rng);
    pin.w = da.w;
    DenseMatrix x0 = random_uniform_matrix(3, 2, rng);
    LayerCache ca, cp;
    CHECK(layers_forward(da, x0, ca).raw() == layers_forward(pin, x0, cp).raw());

    // gates strictly in (0,2)
    for (auto& gen : da.gens)
        for (double& w : gen.out_w.raw()) w = 2.0 * rng.normal();
    layers_forward(da, x0, ca);
    for (const auto& gc : ca.gen)
        for (double g : gc.out) {
            CHECK(g > 0.0);
            CHECK(g < 2.0);
        }

    // hand case: F=2, D=1, L=1, forced gate via bias
    LayerStack h = LayerStack::init(Variant::Da, 2, 1, 1, 1, 1, 1, rng);
    h.w[0] = identity(2);
    // logit pins: sigmoid(z)*2 = 0.5 at z = ln(1/3); 1.5 at z = ln 3
    h.gens[0].hidden_w.fill(0.0);
    h.gens[0].out_w.fill(0.0);
    h.gens[0].out_b = {std::log(1.0 / 3.0), std::log(3.0)};
    DenseMatrix x1(2, 1, {1, 2});
    LayerCache ch;
    auto out = layers_forward(h, x1, ch);
    // interaction [[1],[4]] gated by (0.5,1.5) plus residual
    CHECK(out(0, 0) == doctest::Approx(1.0 + 1.0 * 0.5));
    CHECK(out(1, 0) == doctest::Approx(2.0 + 4.0 * 1.5));
}

TEST_CASE("da gradients vs finite differences") {
    Rng rng(32);
    LayerStack s = LayerStack::init(Variant::Da, 3, 2, 1, 2, 1, 2, rng);
    check_stack_gradients(s, 200);
}

TEST_CASE("da full-gate gradients vs finite differences") {
    Rng rng(33);
    LayerStack s = LayerStack::init(Variant::Da, 2, 2, 1, 2, 1, 2, rng, /*da_full_gate=*/true);
    check_stack_gradients(s, 300);
}

TEST_CASE("dgp low-rank equals dense path") {
    Rng rng(6);
    for (int trial = 0; trial < 5; ++trial) {
        LayerStack s = LayerStack::init(Variant::Dgp, 3, 2, 1, 2, 2, 2, rng);
        for (auto& gen : s.gens)
            for (double& w : gen.out_w.raw()) w = rng.normal();
        DenseMatrix x0 = random_uniform_matrix(3, 2, rng);
        LayerCache cl, cd;
        auto lr = layers_forward(s, x0, cl);
        auto dn = dgp_forward_dense(s, x0, cd);
        for (std::size_t i = 0; i < lr.size(); ++i)
            CHECK(std::abs(lr.raw()[i] - dn.raw()[i]) <= 1e-10);
    }
}

TEST_CASE("dgp degeneracies") {
    Rng rng(7);
    // sigma = 0 (zero generator) -> identity layer
    LayerStack s = LayerStack::init(Variant::Dgp, 3, 2, 1, 2, 2, 2, rng);
    DenseMatrix x0 = random_uniform_matrix(3, 2, rng);
    LayerCache c;
    CHECK(layers_forward(s, x0, c).raw() == x0.raw());

    // U=V=I (K=F), sigma forced to 1 -> identical to pin with W=I
    LayerStack sid = LayerStack::init(Variant::Dgp, 3, 2, 1, 1, 3, 2, rng);
    sid.u[0] = identity(3);
    sid.v[0] = identity(3);
    sid.gens[0].hidden_w.fill(0.0);
    sid.gens[0].out_w.fill(0.0);
    sid.gens[0].out_b.assign(3, 1.0);
    LayerStack pin = LayerStack::init(Variant::Pin, 3, 2, 1, 1, 1, 2, rng);
    pin.w[0] = identity(3);
    LayerCache cd, cp;
    CHECK(layers_forward(sid, x0, cd).raw() == layers_forward(pin, x0, cp).raw());

    // K=1 projector: only field 0 interacts
    LayerStack k1 = LayerStack::init(Variant::Dgp, 2, 1, 1, 1, 1, 1, rng);
    k1.u[0] = DenseMatrix(2, 1, {1, 0});
    k1.v[0] = DenseMatrix(2, 1, {1, 0});
    k1.gens[0].hidden_w.fill(0.0);
    k1.gens[0].out_w.fill(0.0);
    k1.gens[0].out_b = {1.0};
    DenseMatrix x1(2, 1, {1.0, 2.0});
    LayerCache ck;
    auto out = layers_forward(k1, x1, ck);
    // W = e1 e1^T: row 0 gets x_0*(x_0) + x_0 = 2, row 1 untouched
    CHECK(out(0, 0) == doctest::Approx(2.0));
    CHECK(out(1, 0) == doctest::Approx(2.0));
}

TEST_CASE("dgp gradients vs finite differences") {
    Rng rng(34);
    LayerStack s = LayerStack::init(Variant::Dgp, 3, 2, 1, 2, 2, 2, rng);
    check_stack_gradients(s, 400);
}

TEST_CASE("dwp vectorized equals dense Hadamard path") {
    Rng rng(8);
    for (int trial = 0; trial < 5; ++trial) {
        LayerStack s = LayerStack::init(Variant::Dwp, 3, 2, 1, 2, 2, 2, rng);
        for (auto& gen : s.gens)
            for (double& w : gen.out_w.raw()) w = rng.normal();
        DenseMatrix x0 = random_uniform_matrix(3, 2, rng);
        LayerCache cv, cd;
        auto vec = layers_forward(s, x0, cv);
        auto dn = dwp_forward_dense(s, x0, cd);
        for (std::size_t i = 0; i < vec.size(); ++i)
            CHECK(std::abs(vec.raw()[i] - dn.raw()[i]) <= 1e-10);
    }
}

TEST_CASE("dwp degeneracies") {
    Rng rng(9);
    // K=1, zero generator: u=v=1, G all-ones -> equals pin with same W
    LayerStack s = LayerStack::init(Variant::Dwp, 3, 2, 1, 2, 1, 2, rng);
    LayerStack pin = LayerStack::init(Variant::Pin, 3, 2, 1, 2, 1, 2, rng);
    pin.w = s.w;
    DenseMatrix x0 = random_uniform_matrix(3, 2, rng);
    LayerCache cw, cp;
    CHECK(layers_forward(s, x0, cw).raw() == layers_forward(pin, x0, cp).raw());

    // W = 0 -> identity regardless of generator
    for (auto& w : s.w) w.fill(0.0);
    for (auto& gen : s.gens)
        for (double& w : gen.out_w.raw()) w = rng.normal();
    CHECK(layers_forward(s, x0, cw).raw() == x0.raw());
}

TEST_CASE("dwp gradients vs finite differences") {
    Rng rng(35);
    LayerStack s = LayerStack::init(Variant::Dwp, 3, 2, 1, 2, 2, 2, rng);
    check_stack_gradients(s, 500);
}

TEST_CASE("subspace stacking composes with gradients") {
    Rng rng(36);
    LayerStack s = LayerStack::init(Variant::Pin, 2, 4, 2, 2, 1, 2, rng);
    check_stack_gradients(s, 600);
}

TEST_CASE("output head") {
    OutputHead zero_head;
    zero_head.w = {0.0, 0.0};
    DenseMatrix x(2, 2, {1, 2, 3, 4});
    CHECK(output_forward(x, zero_head) == doctest::Approx(0.5));

    OutputHead head;
    head.w = {1.0, 1.0};
    CHECK(output_logit(x, head) == doctest::Approx(10.0));
    CHECK(output_forward(x, head) == doctest::Approx(1.0 / (1.0 + std::exp(-10.0))));

    // b shifts the logit by b*D exactly
    head.b = 0.25;
    CHECK(output_logit(x, head) == doctest::Approx(10.0 + 0.25 * 2.0));
}

TEST_CASE("output head gradients vs finite differences") {
    Rng rng(37);
    DenseMatrix x = random_uniform_matrix(3, 2, rng);
    OutputHead head;
    head.w = {rng.normal(), rng.normal(), rng.normal()};
    head.b = rng.normal();

    auto probe = [&] { return output_logit(x, head); };
    OutputHeadGrads g = OutputHeadGrads::zeros_like(head);
    DenseMatrix d_x = output_backward(x, head, 1.0, g);

    auto fd_w = finite_diff(probe, head.w.data(), head.w.size());
    for (std::size_t i = 0; i < 3; ++i) CHECK(rel_err(fd_w[i], g.w[i]) < 1e-6);
    auto fd_b = finite_diff(probe, &head.b, 1);
    CHECK(rel_err(fd_b[0], g.b) < 1e-6);
    auto fd_x = finite_diff(probe, x.data(), x.size());
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(rel_err(fd_x[i], d_x.raw()[i]) < 1e-6);
}

TEST_CASE("generator forward at the identity point") {
    Rng rng(10);
    const std::size_t in_dim = 6;
    std::vector<double> input(in_dim, 0.7);
    GeneratorCache cache;

    auto gate = GeneratorNet::init(in_dim, 4, 2, GeneratorOutput::Gate, 1, rng);
    gate.hidden_w.fill(0.0);
    auto out = generator_forward(gate, input, cache);
    for (double g : out) CHECK(g == doctest::Approx(1.0));

    auto dwp = GeneratorNet::init(in_dim, 8, 2, GeneratorOutput::PlusInvK, 2, rng);
    dwp.hidden_w.fill(0.0);
    out = generator_forward(dwp, input, cache);
    for (double g : out) CHECK(g == doctest::Approx(0.5));
}
