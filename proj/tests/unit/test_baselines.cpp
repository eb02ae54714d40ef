#include "cfqp/baselines.hpp"
#include "oracles.hpp"

#include <doctest.h>

using namespace cfqp;
using namespace cfqp::baselines;

namespace {

Matrix random_matrix(Eigen::Index r, Eigen::Index c, Rng& rng) {
    Matrix m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
    return m;
}

model::Samples donors(Rng& rng, int n) {
    model::Samples s;
    s.x = random_matrix(4, n, rng);
    s.y = random_matrix(6, n, rng);
    s.t = Vector(n);
    for (int i = 0; i < n; ++i) s.t[i] = uniform(rng, 0.0, 1.0);
    return s;
}

}  // namespace

TEST_CASE("simplex projection") {
    Vector v(2);
    v << 1.0, 1.0;
    CHECK(project_simplex(v).isApprox(Vector::Constant(2, 0.5)));
    v << 2.0, 0.0;
    CHECK(project_simplex(v) == (Vector(2) << 1.0, 0.0).finished());
    Rng rng(1);
    for (int trial = 0; trial < 100; ++trial) {
        const Vector p = project_simplex(random_matrix(7, 1, rng) * 3.0);
        CHECK(p.minCoeff() >= 0.0);
        CHECK(p.sum() == doctest::Approx(1.0));
        CHECK((project_simplex(p) - p).cwiseAbs().maxCoeff() < 1e-14);
    }
}

TEST_CASE("three-donor weights agree with a fine grid search") {
    for (int trial = 0; trial < 40; ++trial) {
        Rng rng(derive_seed(3, 1, static_cast<std::uint64_t>(trial)));
        const Matrix a = random_matrix(5, 3, rng);
        const Vector b = random_matrix(5, 1, rng);
        Vector grid_w;
        const double grid = oracle_ref::simplex_grid_min(a, b, 1e-3, &grid_w);
        const auto exact = simplex_lsq_active_set(a, b);
        CHECK(exact.objective <= grid + 1e-12);
        CHECK(exact.objective == doctest::Approx(grid).epsilon(1e-4).scale(1e-6));
        CHECK((exact.w - grid_w).cwiseAbs().maxCoeff() < 2e-3);
    }
}

TEST_CASE("active-set and accelerated gradient solvers agree") {
    for (int trial = 0; trial < 30; ++trial) {
        Rng rng(derive_seed(4, 1, static_cast<std::uint64_t>(trial)));
        const int n = 3 + trial % 20;
        const Matrix a = random_matrix(10, n, rng);
        const Vector b = random_matrix(10, 1, rng);
        const auto as = simplex_lsq_active_set(a, b);
        const auto pg = simplex_lsq(a, b);
        CHECK(as.w.minCoeff() >= 0.0);
        CHECK(as.w.sum() == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(as.objective <= pg.objective + 1e-9);
        CHECK(pg.objective == doctest::Approx(as.objective).epsilon(1e-6).scale(1e-8));
    }
}

TEST_CASE("a query that duplicates a donor puts all weight on it") {
    Rng rng(5);
    const auto pool = donors(rng, 30);
    const auto sc = ScModel::fit(pool);
    for (Eigen::Index i : {0, 7, 19}) {
        const auto q = sc.query(pool.x.col(i), pool.y.col(i), pool.t[i]);
        for (std::size_t j = 0; j < q.donors.size(); ++j)
            CHECK(q.weights[static_cast<Eigen::Index>(j)] == doctest::Approx(q.donors[j] == i ? 1.0 : 0.0).scale(1.0));
        CHECK((q.y_prime - pool.y.col(i)).cwiseAbs().maxCoeff() < 1e-8);
    }
}

TEST_CASE("a lone donor in the window gets weight one and the window widens when empty") {
    model::Samples pool;
    pool.x = Matrix::Zero(2, 3);
    pool.y = Matrix::Zero(1, 3);
    pool.t = (Vector(3) << 0.1, 0.5, 0.9).finished();
    pool.y << 1.0, 2.0, 3.0;
    const auto sc = ScModel::fit(pool);
    const Vector x = Vector::Ones(2), y = Vector::Zero(1);
    const auto q = sc.query(x, y, 0.52);
    REQUIRE(q.donors.size() == 1);
    CHECK(q.weights[0] == 1.0);
    CHECK(q.y_prime[0] == 2.0);

    const auto wide = sc.query(x, y, 0.3);
    CHECK(wide.window > 0.1);
    CHECK(!wide.donors.empty());
    CHECK(wide.weights.sum() == doctest::Approx(1.0));
}

TEST_CASE("Deep-ITE evaluates the mean regressor at the counterfactual treatment") {
    Rng rng(6);
    const auto data = donors(rng, 40);
    model::CfqpConfig cfg;
    cfg.epochs0 = 5;
    const auto m0 = model::train_init(data, cfg);
    const Vector tp = Vector::Constant(40, 0.25);
    CHECK(deep_ite_predict(m0, data.x, tp) == m0.predict(data.x, tp));
    const auto pair = model::fit(data, [&] {
        auto c = cfg;
        c.k = 2;
        c.epochs1 = 2;
        return c;
    }());
    CHECK_THROWS_AS(deep_ite_predict(pair, data.x, tp), ConfigError);
}

TEST_CASE("sc config parsing") {
    ScConfig c;
    c.window = 0.2;
    c.outcome_weight = 0.5;
    c.method = ScSolver::projected_gradient;
    nlohmann::json j = c;
    const auto back = j.get<ScConfig>();
    CHECK(back.window == 0.2);
    CHECK(back.outcome_weight == 0.5);
    CHECK(back.method == ScSolver::projected_gradient);
    j["window"] = 0.0;
    CHECK_THROWS_AS(j.get<ScConfig>(), ConfigError);
    j["window"] = 0.1;
    j["solver"] = "simplex";
    CHECK_THROWS_AS(j.get<ScConfig>(), ConfigError);
}
