#include "cfqp/baselines.hpp"
#include "cfqp/datagen.hpp"
#include "cfqp/experiment.hpp"
#include "cfqp/model.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <filesystem>

using namespace cfqp;
using namespace cfqp::model;

namespace {

struct Fixture {
    data::Dataset ds;
    Samples train;
    std::vector<int> truth;
};

Fixture oscillator(std::size_t n, data::NoiseMode mode = data::NoiseMode::additive) {
    auto g = data::GenConfig::defaults(data::GeneratorKind::oscillator, mode);
    g.n_train = n;
    g.n_val = 20;
    g.n_test = 20;
    Fixture f{data::generate(g), {}, {}};
    f.train = exp::take(f.ds, data::Split::train);
    for (auto i : f.ds.indices(data::Split::train)) f.truth.push_back(f.ds.u_z[i]);
    return f;
}

CfqpConfig quick(int k) {
    CfqpConfig c;
    c.k = k;
    c.epochs0 = 60;
    c.epochs1 = 60;
    c.delta = 10;
    c.batch_size = 64;
    return c;
}

}  // namespace

TEST_CASE("network inputs stack covariates, treatment and interactions") {
    Matrix x(2, 2);
    x << 1, 2,
         3, 4;
    Vector t(2);
    t << 0.5, 2.0;
    const Matrix plain = make_inputs(x, t);
    CHECK(plain.rows() == 3);
    CHECK(plain(2, 1) == 2.0);
    CHECK(plain.topRows(2) == x);

    // [x; t; t x; t^2 x; t^2]
    const Matrix deg2 = make_inputs(x, t, 2);
    CHECK(deg2.rows() == 8);
    CHECK(deg2(3, 0) == 0.5);
    CHECK(deg2(4, 1) == 8.0);
    CHECK(deg2(5, 0) == 0.25);
    CHECK(deg2(6, 1) == 16.0);
    CHECK(deg2(7, 1) == 4.0);
}

TEST_CASE("a single cluster never moves and matches Deep-ITE") {
    const auto f = oscillator(120);
    const auto m = fit(f.train, quick(1));
    CHECK(m.k() == 1);
    for (int a : m.assignment) CHECK(a == 0);
    for (int c : m.change_counts) CHECK(c == 0);
    const Vector tp = f.train.t.array() * 0.5 + 0.1;
    CHECK(m.predict_cf(f.train.x, f.train.t, f.train.y, tp) == baselines::deep_ite_predict(m, f.train.x, tp));
    // The factual outcome is irrelevant when there is only one model.
    const Matrix noise = Matrix::Random(f.train.y.rows(), f.train.y.cols());
    CHECK(m.predict_cf(f.train.x, f.train.t, noise, tp) == m.predict_cf(f.train.x, f.train.t, f.train.y, tp));
}

TEST_CASE("reassignment passes never increase the residual and stop changing at convergence") {
    const auto f = oscillator(150);
    auto cfg = quick(3);
    const auto m = fit(f.train, cfg);
    REQUIRE(m.residual_before.size() == m.residual_after.size());
    REQUIRE(!m.residual_after.empty());
    for (std::size_t r = 0; r < m.residual_after.size(); ++r)
        CHECK(m.residual_after[r] <= m.residual_before[r] * (1.0 + 1e-12));
    if (m.converged_round >= 0) CHECK(m.change_counts[static_cast<std::size_t>(m.converged_round)] == 0);
    for (std::size_t i = 0; i < m.assignment.size(); ++i) {
        const auto col = static_cast<Eigen::Index>(i);
        CHECK(m.assignment[i] == m.infer_cluster(f.train.x.col(col), f.train.t[col], f.train.y.col(col)));
    }
}

TEST_CASE("identical cluster models resolve to cluster 0") {
    const auto f = oscillator(40);
    auto m = fit(f.train, quick(1));
    m.models.push_back(m.models[0]);
    m.models.push_back(m.models[0]);
    for (int a : m.infer_clusters(f.train.x, f.train.t, f.train.y)) CHECK(a == 0);
}

TEST_CASE("the counterfactual at the factual treatment is the reconstruction") {
    const auto f = oscillator(80);
    const auto m = fit(f.train, quick(2));
    CHECK(m.predict_cf(f.train.x, f.train.t, f.train.y, f.train.t) == m.reconstruct(f.train.x, f.train.t, f.train.y));
}

TEST_CASE("oscillator classes are recovered by the residual clusters") {
    const auto f = oscillator(300);
    auto cfg = quick(3);
    cfg.epochs0 = 200;
    cfg.epochs1 = 100;
    const auto m = fit(f.train, cfg);
    CHECK(oracle_ref::matched_accuracy(f.truth, m.assignment, 3) > 0.95);
}

TEST_CASE("zero initial epochs keeps the seeded initialisation") {
    const auto a = oscillator(30), b = oscillator(50, data::NoiseMode::non_additive);
    auto cfg = quick(1);
    cfg.epochs0 = 0;
    const auto ma = train_init(a.train, cfg), mb = train_init(b.train, cfg);
    CHECK(ma.loss_trace.empty());
    for (std::size_t l = 0; l < ma.net.layers.size(); ++l) {
        CHECK(ma.net.layers[l].w == mb.net.layers[l].w);
        CHECK(ma.net.layers[l].b == mb.net.layers[l].b);
    }
}

TEST_CASE("em_train refuses an m0 built for a different input layout") {
    const auto f = oscillator(30);
    auto cfg = quick(2);
    cfg.epochs0 = 2;
    const auto m0 = train_init(f.train, cfg);
    cfg.treatment_degree = 2;
    CHECK_THROWS_AS(em_train(f.train, m0, cfg, std::vector<int>(f.train.size(), 0)), ConfigError);
}

TEST_CASE("config validation and json round trip") {
    CfqpConfig c;
    c.k = 4;
    c.treatment_degree = 1;
    c.hidden = {32, 16};
    c.clusterer = Clusterer::gmm;
    nlohmann::json j = c;
    const auto back = j.get<CfqpConfig>();
    CHECK(back.k == 4);
    CHECK(back.treatment_degree == 1);
    CHECK(back.hidden == std::vector<int>{32, 16});
    CHECK(back.clusterer == Clusterer::gmm);
    for (auto mutate : std::vector<void (*)(CfqpConfig&)>{[](CfqpConfig& x) { x.k = 0; },
                                                          [](CfqpConfig& x) { x.delta = 0; },
                                                          [](CfqpConfig& x) { x.lr = -1.0; },
                                                          [](CfqpConfig& x) { x.treatment_degree = -1; }}) {
        CfqpConfig bad;
        mutate(bad);
        CHECK_THROWS_AS(bad.validate(), ConfigError);
    }
}

TEST_CASE("saved models predict the same after loading") {
    const auto f = oscillator(60);
    const auto m = fit(f.train, quick(2));
    const auto dir = std::filesystem::temp_directory_path() / "cfqp_model_roundtrip";
    std::filesystem::remove_all(dir);
    save_model(m, dir);
    const auto back = load_model(dir);
    CHECK(back.k() == 2);
    CHECK(back.assignment == m.assignment);
    const Vector tp = Vector::Constant(f.train.t.size(), 0.7);
    // Weights are stored as binary32, so predictions agree to float precision.
    const Matrix diff = back.predict(1, f.train.x, tp) - m.predict(1, f.train.x, tp);
    CHECK(diff.cwiseAbs().maxCoeff() < 1e-5);
    std::filesystem::remove_all(dir);
}

TEST_CASE("select_k reports one score per candidate") {
    const auto f = oscillator(100);
    const auto val = exp::take(f.ds, data::Split::val);
    const auto res = select_k(f.train, val, quick(1), {1, 2});
    CHECK(res.ks == std::vector<int>{1, 2});
    CHECK(res.val_mse.size() == 2);
    CHECK(res.models.size() == 2);
    CHECK((res.best_k == 1 || res.best_k == 2));
}
