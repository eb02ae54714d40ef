#include "cfqp/clustering.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <cmath>

using namespace cfqp;
using namespace cfqp::cluster;

namespace {

Matrix gaussian_points(Eigen::Index d, Eigen::Index n, Rng& rng, double sd = 1.0) {
    Matrix m(d, n);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng, sd);
    return m;
}

}  // namespace

TEST_CASE("two far blobs split exactly and match the exhaustive optimum") {
    Rng rng(1);
    Matrix pts = gaussian_points(2, 12, rng, 0.1);
    for (int i = 0; i < 12; ++i) pts(0, i) += i < 6 ? -10.0 : 10.0;
    const auto res = kmeans_fit(pts, 2, {.restarts = 8, .iters = 100, .seed = 3});
    for (int i = 1; i < 6; ++i) CHECK(res.assignment[static_cast<std::size_t>(i)] == res.assignment[0]);
    for (int i = 7; i < 12; ++i) CHECK(res.assignment[static_cast<std::size_t>(i)] == res.assignment[6]);
    CHECK(res.assignment[0] != res.assignment[6]);
    CHECK(res.inertia == doctest::Approx(oracle_ref::exhaustive_kmeans_inertia(pts, 2)).epsilon(1e-12));
}

TEST_CASE("k-means reaches the global optimum on small random sets") {
    int hits = 0;
    for (int trial = 0; trial < 100; ++trial) {
        Rng rng(derive_seed(77, 1, static_cast<std::uint64_t>(trial)));
        const int n = 6 + trial % 7;   // 6..12 points
        const int k = 2 + trial % 3;   // 2..4 clusters
        const Matrix pts = gaussian_points(2, n, rng);
        const auto res = kmeans_fit(pts, k, {.restarts = 32, .iters = 100, .seed = static_cast<std::uint64_t>(trial)});
        const double best = oracle_ref::exhaustive_kmeans_inertia(pts, k);
        if (res.inertia <= best * (1.0 + 1e-9) + 1e-12) ++hits;
    }
    CHECK(hits >= 95);
}

TEST_CASE("one cluster is the mean with inertia N times the variance") {
    Rng rng(2);
    const Matrix pts = gaussian_points(3, 40, rng);
    const auto res = kmeans_fit(pts, 1);
    const Vector mean = pts.rowwise().mean();
    CHECK((res.centroids.col(0) - mean).norm() < 1e-12);
    const double var = (pts.colwise() - mean).squaredNorm() / 40.0;
    CHECK(res.inertia == doctest::Approx(40.0 * var).epsilon(1e-12));
}

TEST_CASE("as many clusters as distinct points gives zero inertia") {
    Rng rng(3);
    const Matrix pts = gaussian_points(2, 7, rng);
    CHECK(kmeans_fit(pts, 7).inertia == doctest::Approx(0.0));
}

TEST_CASE("k-means inertia never rises between Lloyd steps") {
    Rng rng(4);
    const Matrix pts = gaussian_points(4, 300, rng);
    const auto res = kmeans_fit(pts, 5, {.restarts = 1, .iters = 100, .seed = 1});
    for (std::size_t i = 1; i < res.inertia_trace.size(); ++i)
        CHECK(res.inertia_trace[i] <= res.inertia_trace[i - 1] + 1e-9);
}

TEST_CASE("k-means rejects bad arguments") {
    CHECK_THROWS_AS(kmeans_fit(Matrix::Zero(2, 3), 4), ConfigError);
    CHECK_THROWS_AS(kmeans_fit(Matrix::Zero(2, 3), 0), ConfigError);
}

TEST_CASE("one Gaussian component reproduces the sample moments") {
    Rng rng(5);
    Matrix pts = gaussian_points(2, 500, rng, 2.0);
    pts.row(0).array() += 1.5;
    const auto res = gmm_fit(pts, 1);
    const Vector mean = pts.rowwise().mean();
    const Vector var = (pts.colwise() - mean).array().square().rowwise().mean();
    CHECK((res.means.col(0) - mean).cwiseAbs().maxCoeff() < 1e-6);
    CHECK((res.variances.col(0) - var).cwiseAbs().maxCoeff() < 1e-6);
    CHECK(res.weights[0] == doctest::Approx(1.0));
}

TEST_CASE("separated components give near one-hot responsibilities and rising likelihood") {
    Rng rng(6);
    Matrix pts = gaussian_points(2, 400, rng);
    for (int i = 0; i < 400; ++i) pts(0, i) += i % 2 ? 10.0 : -10.0;
    const auto res = gmm_fit(pts, 2);
    double worst = 0.0;
    for (Eigen::Index i = 0; i < res.resp.cols(); ++i) {
        double h = 0.0;
        for (Eigen::Index k = 0; k < 2; ++k) {
            const double r = res.resp(k, i);
            if (r > 0.0) h -= r * std::log(r);
        }
        worst = std::max(worst, h);
    }
    CHECK(worst < 0.01);
    for (std::size_t i = 1; i < res.loglik_trace.size(); ++i)
        CHECK(res.loglik_trace[i] >= res.loglik_trace[i - 1] - 1e-9);
}

TEST_CASE("posterior normalisation survives very negative log joints") {
    Matrix lj(2, 1);
    lj << -1000.0, -1001.0;
    const Matrix post = normalize_log_columns(lj);
    CHECK(post(0, 0) == doctest::Approx(1.0 / (1.0 + std::exp(-1.0))));
    CHECK(post.col(0).sum() == doctest::Approx(1.0));
}

TEST_CASE("reassignment picks the exact match, breaks ties low, and matches a scan") {
    Matrix preds(3, 4);
    preds << 1, 2, 3, 4,
             0, 0, 0, 0,
             5, 6, 7, 8;
    CHECK(assign_by_residual(preds.col(2), preds) == 2);

    Matrix tie(1, 3);
    tie << -1.0, 1.0, 1.0;
    CHECK(assign_by_residual(Vector::Zero(1), tie) == 0);
    CHECK(assign_by_residual(Vector::Constant(1, 1.0), Matrix::Ones(1, 3)) == 0);

    Rng rng(7);
    for (int trial = 0; trial < 200; ++trial) {
        const Matrix p = gaussian_points(6, 5, rng);
        const Vector y = gaussian_points(6, 1, rng);
        int best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (int j = 0; j < 5; ++j) {
            double d = 0.0;
            for (int r = 0; r < 6; ++r) d += (y[r] - p(r, j)) * (y[r] - p(r, j));
            if (d < best_d) {
                best_d = d;
                best = j;
            }
        }
        CHECK(assign_by_residual(y, p) == best);
    }
}
