#include <cstdlib>
#include <sstream>

#include "doctest.h"
#include "dynint/oracle.hpp"
#include "dynint/train.hpp"

using namespace dynint;

namespace {

// small separable dataset: label is a parity-style function of two fields
Dataset toy_data(std::size_t n, std::uint64_t seed) {
    DenseMatrix coeff(2, 2);
    coeff(0, 1) = 4.0;
    SyntheticSpec spec = SyntheticSpec::make({6, 6}, coeff, 0.0, seed);
    return sample_synthetic(spec, n, seed + 1).data;
}

TrainConfig small_config() {
    TrainConfig c;
    c.variant = Variant::Pin;
    c.depth = 1;
    c.embed_dim = 4;
    c.batch = 32;
    c.max_steps = 60;
    c.eval_every = 1000000;
    c.ftrl = {0.2, 1.0, 0.0, 0.0};
    c.gftrl = {0.2, 1.0, 0.0, 0.0};
    return c;
}

std::vector<double> snapshot(Model& m) {
    std::vector<double> out;
    for (const auto& p : m.params()) out.insert(out.end(), p.data, p.data + p.size);
    return out;
}

}  // namespace

TEST_CASE("config parsing: defaults, round trip, strictness") {
    std::istringstream empty("");
    TrainConfig c = parse_train_config(empty);
    CHECK(c.batch == 4096);
    CHECK(c.eval_every == 2000);
    CHECK(c.patience == 5);
    CHECK(c.variant == Variant::Pin);

    std::istringstream in(
        "variant dwp\nrank 3\nlambda_orth 0.01\nbatch 64\nsubspaces 2\nembed_dim 8\n");
    TrainConfig d = parse_train_config(in);
    CHECK(d.variant == Variant::Dwp);
    CHECK(d.rank == 3);
    CHECK(d.lambda_orth == 0.01);

    // serialize -> parse is the identity
    std::istringstream back(serialize_train_config(d));
    TrainConfig e = parse_train_config(back);
    CHECK(serialize_train_config(e) == serialize_train_config(d));

    std::istringstream unknown("batsh 64\n");
    CHECK_THROWS_AS(parse_train_config(unknown), ConfigError);
    std::istringstream dup("batch 64\nbatch 32\n");
    CHECK_THROWS_AS(parse_train_config(dup), ConfigError);
    std::istringstream noval("batch\n");
    CHECK_THROWS_AS(parse_train_config(noval), ConfigError);
    std::istringstream badsub("subspaces 3\nembed_dim 8\n");
    CHECK_THROWS_AS(parse_train_config(badsub), ConfigError);
    std::istringstream badvar("variant foo\n");
    CHECK_THROWS_AS(parse_train_config(badvar), ConfigError);
}

TEST_CASE("train_step loss decomposition with lambda 0") {
    Dataset data = toy_data(64, 71);
    TrainConfig cfg = small_config();
    Rng rng(72);
    Model m = Model::init(cfg.variant, {6, 6}, cfg.embed_dim, 1, cfg.depth, 1, 4, rng);
    Optimizers opt = Optimizers::init(m, cfg);
    std::vector<const DatasetRow*> batch;
    for (const auto& r : data.rows) batch.push_back(&r);
    const LossValue loss = train_step(m, opt, cfg, batch);
    CHECK(loss.orth_penalty == 0.0);
    CHECK(loss.total() == loss.data_loss);
    CHECK(loss.data_loss > 0.0);
}

TEST_CASE("training is deterministic under identical seeds") {
    Dataset data = toy_data(512, 73);
    TrainConfig cfg = small_config();
    cfg.seed = 9;

    auto run = [&]() {
        Rng rng(cfg.seed);
        Model m = Model::init(cfg.variant, {6, 6}, cfg.embed_dim, 1, cfg.depth, 1, 4, rng);
        train_loop(m, cfg, data, Dataset{});
        return snapshot(m);
    };
    const auto a = run();
    const auto b = run();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);  // bitwise
}

TEST_CASE("training is independent of the worker-pool width") {
    Dataset data = toy_data(400, 74);
    TrainConfig cfg = small_config();
    cfg.batch = 128;  // large enough that parallel_for actually fans out
    cfg.max_steps = 12;

    auto run_with_threads = [&](const char* n) {
        setenv("DYNINT_THREADS", n, 1);
        Rng rng(5);
        Model m = Model::init(cfg.variant, {6, 6}, cfg.embed_dim, 1, cfg.depth, 1, 4, rng);
        train_loop(m, cfg, data, Dataset{});
        unsetenv("DYNINT_THREADS");
        return snapshot(m);
    };
    const auto one = run_with_threads("1");
    const auto four = run_with_threads("4");
    REQUIRE(one.size() == four.size());
    for (std::size_t i = 0; i < one.size(); ++i) CHECK(one[i] == four[i]);  // bitwise
}

TEST_CASE("a small model overfits a tiny batch") {
    // 12 distinct index pairs with fixed labels: memorization target
    Dataset data;
    data.num_fields = 2;
    for (std::uint32_t i = 0; i < 12; ++i) {
        DatasetRow r;
        r.indices = {i, i % 3};
        r.label = (i % 2 == 0) ? 1 : 0;
        data.rows.push_back(r);
    }
    TrainConfig cfg = small_config();
    cfg.batch = 12;
    cfg.max_steps = 1500;
    cfg.ftrl.alpha = 0.5;
    cfg.gftrl.alpha = 0.5;
    Rng rng(75);
    Model m = Model::init(cfg.variant, {12, 3}, cfg.embed_dim, 1, cfg.depth, 1, 4, rng);
    train_loop(m, cfg, data, Dataset{});
    const MetricReport r = evaluate(m, data);
    CHECK(r.logloss < 0.05);
    CHECK(r.auc == doctest::Approx(1.0));
}

TEST_CASE("depth 0 reduces to logistic regression on summed embeddings") {
    Rng rng(76);
    Model m = Model::init(Variant::Pin, {5, 7, 3}, 4, 1, 0, 1, 4, rng);
    for (double& w : m.head.w) w = rng.normal();
    m.head.b = 0.3;
    for (std::uint32_t a = 0; a < 5; ++a) {
        const std::vector<std::uint32_t> idx = {a, a % 7, a % 3};
        ModelCache cache;
        model_forward(m, idx, cache);
        const DenseMatrix x0 = lookup(m.embedding, idx);
        double logit = m.head.b * 4.0;  // bias enters once per embedding column
        for (std::size_t f = 0; f < 3; ++f)
            for (std::size_t d = 0; d < 4; ++d) logit += m.head.w[f] * x0(f, d);
        CHECK(std::abs(cache.logit - logit) <= 1e-10);
        CHECK(cache.prob == doctest::Approx(sigmoid(logit)));
    }
}

TEST_CASE("early stopping counts consecutive non-improvements") {
    RunState run;
    MetricReport r;
    r.logloss = 0.6;
    CHECK(!early_stop(run, r, 2));  // improvement from +inf
    r.logloss = 0.5;
    CHECK(!early_stop(run, r, 2));  // improvement
    r.logloss = 0.5;                // not better by more than 1e-5
    CHECK(!early_stop(run, r, 2));
    r.logloss = 0.45;               // improvement resets the counter
    CHECK(!early_stop(run, r, 2));
    r.logloss = 0.48;
    CHECK(!early_stop(run, r, 2));
    r.logloss = 0.47;
    CHECK(early_stop(run, r, 2));   // second consecutive miss
    CHECK(run.best_logloss == doctest::Approx(0.45));
    CHECK(run.history.size() == 6);
}

TEST_CASE("parameter counting matches instantiated models") {
    const std::vector<std::uint32_t> cards = {3, 4};
    for (Variant v : {Variant::Pin, Variant::Da, Variant::Dgp, Variant::Dwp}) {
        TrainConfig cfg;
        cfg.variant = v;
        cfg.depth = 2;
        cfg.embed_dim = 4;
        cfg.subspaces = 2;
        cfg.rank = 2;
        cfg.reduction = 4;
        Rng rng(77);
        Model m = Model::init(v, cards, cfg.embed_dim, cfg.subspaces, cfg.depth, cfg.rank,
                              cfg.reduction, rng);
        std::size_t actual = 0;
        for (const auto& p : m.params()) actual += p.size;
        CHECK(count_params(cfg, cards).total() == actual);
    }

    // hand check: pin, F=2, D=4, h=1, L=2 -> embeddings (3+4)*4, kernels 2*2^2, head 3
    TrainConfig cfg;
    cfg.depth = 2;
    cfg.embed_dim = 4;
    const ParamCounts pc = count_params(cfg, cards);
    CHECK(pc.embedding == 28);
    CHECK(pc.interaction_static == 8);
    CHECK(pc.generators == 0);
    CHECK(pc.head == 3);
}

TEST_CASE("flop and element accounting formulas") {
    CHECK(flops_per_layer_dense(10, 16) == 1600);
    CHECK(flops_per_layer_dgp_lowrank(10, 2, 16) == 2 * 10 * 4 + 10 * 2 * 16);
    CHECK(dgp_dynamic_elems_lowrank(100, 10, 2) == 100 * 2 + 2 * 10 * 2);
    CHECK(dgp_dynamic_elems_dense(100, 10) == 100 * 100);
}

TEST_CASE("checkpoint round trip is bitwise for every variant") {
    for (Variant v : {Variant::Pin, Variant::Da, Variant::Dgp, Variant::Dwp}) {
        Rng rng(78);
        Model m = Model::init(v, {4, 5, 3}, 4, 2, 2, 2, 4, rng);
        for (auto& g : m.stack.gens)
            for (std::size_t i = 0; i < g.out_w.size(); ++i) g.out_w.raw()[i] = rng.normal();
        TensorMap t = model_to_tensors(m);

        std::stringstream buf;
        write_tensor_map(buf, t);
        const TensorMap back = read_tensor_map(buf);
        Model m2 = model_from_checkpoint(back);
        CHECK(m2.stack.variant == v);
        auto pa = m.params();
        auto pb = m2.params();
        REQUIRE(pa.size() == pb.size());
        for (std::size_t i = 0; i < pa.size(); ++i) {
            CHECK(pa[i].name == pb[i].name);
            REQUIRE(pa[i].size == pb[i].size);
            for (std::size_t j = 0; j < pa[i].size; ++j) CHECK(pa[i].data[j] == pb[i].data[j]);
        }
        // same instance, same output
        ModelCache ca, cb;
        CHECK(model_forward(m, {1, 2, 0}, ca) == model_forward(m2, {1, 2, 0}, cb));
    }
}

TEST_CASE("evaluate is pure and repeatable") {
    Dataset data = toy_data(256, 79);
    Rng rng(80);
    Model m = Model::init(Variant::Pin, {6, 6}, 4, 1, 1, 1, 4, rng);
    for (double& w : m.head.w) w = rng.normal();
    const auto before = snapshot(m);
    const MetricReport a = evaluate(m, data);
    const MetricReport b = evaluate(m, data);
    CHECK(a.auc == b.auc);
    CHECK(a.logloss == b.logloss);
    CHECK(a.n == 256);
    const auto after = snapshot(m);
    for (std::size_t i = 0; i < before.size(); ++i) CHECK(before[i] == after[i]);
}

TEST_CASE("zero-initialized head scores everything 0.5") {
    Dataset data = toy_data(100, 81);
    Rng rng(82);
    Model m = Model::init(Variant::Pin, {6, 6}, 4, 1, 1, 1, 4, rng);
    const MetricReport r = evaluate(m, data);
    CHECK(r.auc == doctest::Approx(0.5));  // all predictions tied at 0.5
    ModelCache cache;
    CHECK(model_forward(m, {0, 0}, cache) == 0.5);
}

TEST_CASE("dgp factors survive early training") {
    // the head starts at zero, so the first batch carries no gradient into
    // the stack; the warm-started optimizer state must not wipe U and V,
    // because a zeroed factor pair gates its own gradients to zero forever
    Dataset data = toy_data(256, 31);
    TrainConfig cfg = small_config();
    cfg.variant = Variant::Dgp;
    cfg.rank = 2;
    Rng rng(32);
    Model m = Model::init(cfg.variant, {6, 6}, cfg.embed_dim, 1, cfg.depth, cfg.rank,
                          cfg.reduction, rng);
    train_loop(m, cfg, data, Dataset{});
    double unorm = 0.0, vnorm = 0.0;
    for (double x : m.stack.u[0].raw()) unorm += x * x;
    for (double x : m.stack.v[0].raw()) vnorm += x * x;
    CHECK(unorm > 0.0);
    CHECK(vnorm > 0.0);
}

TEST_CASE("dgp frozen at identity matches pin with identity kernels") {
    // sigma = 1 (generator bias), U = V = I, K = S: the dgp layer map equals
    // a pin layer with W = I
    const std::size_t S = 2, D = 4;
    auto build = [&](Variant v) {
        Rng rng(84);
        Model m = Model::init(v, {6, 6}, D, 1, 1, S, 4, rng);
        return m;
    };
    Model pin = build(Variant::Pin);
    pin.stack.w[0] = identity(S);
    Model dgp = build(Variant::Dgp);
    dgp.stack.u[0] = identity(S);
    dgp.stack.v[0] = identity(S);
    dgp.stack.gens[0].out_b.assign(S, 1.0);          // sigma = 1 regardless of input
    for (auto& x : dgp.stack.gens[0].out_w.raw()) x = 0.0;
    // align the embeddings so both models start identically
    dgp.embedding = pin.embedding;
    dgp.head = pin.head;

    // compare per-instance outputs (optimizer trajectories differ: dgp's
    // U, V receive gradients that pin's fixed identity W would not)
    for (std::uint32_t a = 0; a < 6; ++a) {
        ModelCache cp, cd;
        const double pp = model_forward(pin, {a, (a + 1) % 6}, cp);
        const double pd = model_forward(dgp, {a, (a + 1) % 6}, cd);
        CHECK(std::abs(pp - pd) <= 1e-12);
    }
}
