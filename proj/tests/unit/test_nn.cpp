#include "cfqp/nn.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <filesystem>

using namespace cfqp;
using namespace cfqp::nn;

namespace {

Matrix random_matrix(Eigen::Index r, Eigen::Index c, Rng& rng) {
    Matrix m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
    return m;
}

}  // namespace

TEST_CASE("zero weights give the final bias for any input") {
    Mlp m = Mlp::create({4, 5, 3}, 1);
    for (auto& l : m.layers) l.w.setZero();
    m.layers.back().b << 0.5, -1.0, 2.0;
    Rng rng(3);
    const Matrix out = forward(m, random_matrix(4, 7, rng));
    for (Eigen::Index c = 0; c < out.cols(); ++c) CHECK(out.col(c) == m.layers.back().b);
}

TEST_CASE("a single identity layer passes its input through") {
    Mlp m = Mlp::create({6, 6}, 1);
    m.layers[0].w.setIdentity();
    m.layers[0].b.setZero();
    Rng rng(4);
    const Matrix x = random_matrix(6, 5, rng);
    CHECK(forward(m, x) == x);
}

TEST_CASE("forward matches a loop-based evaluation") {
    Mlp m = Mlp::create({3, 8, 2}, 11);
    Rng rng(5);
    for (auto& l : m.layers) l.b = random_matrix(l.b.size(), 1, rng);
    const Matrix x = random_matrix(3, 4, rng);
    const Matrix out = forward(m, x);
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
        std::vector<double> h(8);
        for (int r = 0; r < 8; ++r) {
            double s = m.layers[0].b[r];
            for (int k = 0; k < 3; ++k) s += m.layers[0].w(r, k) * x(k, c);
            h[static_cast<std::size_t>(r)] = s > 0.0 ? s : 0.0;
        }
        for (int r = 0; r < 2; ++r) {
            double s = m.layers[1].b[r];
            for (int k = 0; k < 8; ++k) s += m.layers[1].w(r, k) * h[static_cast<std::size_t>(k)];
            CHECK(out(r, c) == doctest::Approx(s).epsilon(1e-12));
        }
    }
}

TEST_CASE("loss is zero with zero gradients at the network's own output") {
    Mlp m = Mlp::create({3, 6, 6, 2}, 2);
    Rng rng(6);
    const Matrix x = random_matrix(3, 9, rng);
    Gradients g;
    CHECK(mse_and_grad(m, x, forward(m, x), &g) == 0.0);
    for (const auto& l : g) {
        CHECK(l.w.cwiseAbs().maxCoeff() == 0.0);
        CHECK(l.b.cwiseAbs().maxCoeff() == 0.0);
    }
}

TEST_CASE("doubling the residual quadruples the loss") {
    Mlp m = Mlp::create({2, 4, 3}, 9);
    Rng rng(7);
    const Matrix x = random_matrix(2, 10, rng);
    const Matrix base = forward(m, x);
    const Matrix r = random_matrix(3, 10, rng);
    const double one = mse_and_grad(m, x, base + r, nullptr);
    const double two = mse_and_grad(m, x, base + 2.0 * r, nullptr);
    CHECK(two == doctest::Approx(4.0 * one).epsilon(1e-12));
}

TEST_CASE("gradients agree with central differences on 100 random three-layer cases") {
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        Rng rng(derive_seed(2024, 99, static_cast<std::uint64_t>(trial)));
        const int d_in = 2 + trial % 4, h1 = 3 + trial % 5, h2 = 2 + trial % 3, d_out = 1 + trial % 3;
        Mlp m = Mlp::create({d_in, h1, h2, d_out}, static_cast<std::uint64_t>(trial));
        for (auto& l : m.layers) l.b = 0.1 * random_matrix(l.b.size(), 1, rng);
        const Matrix x = random_matrix(d_in, 6, rng);
        const Matrix y = random_matrix(d_out, 6, rng);
        Gradients g;
        mse_and_grad(m, x, y, &g);
        worst = std::max(worst, oracle_ref::max_fd_relative_error(m, x, y, g));
    }
    CHECK(worst < 1e-4);
}

TEST_CASE("adam leaves parameters alone under a zero gradient and decays the moments") {
    Mlp m = Mlp::create({2, 2}, 1);
    AdamState s(m, 1e-2);
    s.m[0].w.setConstant(1.0);
    s.v[0].w.setConstant(1.0);
    const Mlp before = m;
    adam_step(m, zeros_like(m), s);
    // A stale first moment still moves w; the bias has zero moments and must not move.
    CHECK(m.layers[0].b == before.layers[0].b);
    CHECK(s.m[0].w(0, 0) == doctest::Approx(0.9));
    CHECK(s.v[0].w(0, 0) == doctest::Approx(0.999));

    Mlp fresh = Mlp::create({2, 2}, 1);
    AdamState clean(fresh, 1e-2);
    const Mlp snapshot = fresh;
    adam_step(fresh, zeros_like(fresh), clean);
    CHECK(fresh.layers[0].w == snapshot.layers[0].w);
}

TEST_CASE("adam first step moves each parameter by lr against the gradient sign") {
    Mlp m = Mlp::create({1, 1}, 1);
    m.layers[0].w(0, 0) = 0.0;
    m.layers[0].b[0] = 0.0;
    AdamState s(m, 0.01);
    Gradients g = zeros_like(m);
    g[0].w(0, 0) = 3.0;
    g[0].b[0] = -0.5;
    adam_step(m, g, s);
    // Bias-corrected m/sqrt(v) is g/|g| after one step.
    CHECK(m.layers[0].w(0, 0) == doctest::Approx(-0.01 * 3.0 / (3.0 + 1e-8)));
    CHECK(m.layers[0].b[0] == doctest::Approx(0.01 * 0.5 / (0.5 + 1e-8)));
}

TEST_CASE("adam step size tends to lr under a constant gradient") {
    Mlp m = Mlp::create({1, 1}, 1);
    AdamState s(m, 1e-3);
    Gradients g = zeros_like(m);
    g[0].w(0, 0) = 0.7;
    double last = 0.0;
    for (int i = 0; i < 2000; ++i) {
        const double before = m.layers[0].w(0, 0);
        adam_step(m, g, s);
        last = before - m.layers[0].w(0, 0);
    }
    CHECK(last == doctest::Approx(1e-3).epsilon(1e-6));
}

TEST_CASE("training recovers y = 2x") {
    Rng rng(8);
    Matrix x(1, 256);
    for (Eigen::Index i = 0; i < x.cols(); ++i) x(0, i) = uniform(rng, -1.0, 1.0);
    const Matrix y = 2.0 * x;
    Matrix xv(1, 64);
    for (Eigen::Index i = 0; i < xv.cols(); ++i) xv(0, i) = uniform(rng, -1.0, 1.0);
    Mlp m = Mlp::create({1, 16, 1}, 3);
    AdamState s(m, 1e-3);
    TrainConfig tc;
    tc.epochs = 500;
    tc.batch_size = 32;
    tc.seed = 4;
    train_epochs(m, s, x, y, tc);
    CHECK(mse_and_grad(m, xv, 2.0 * xv, nullptr) < 1e-3);
}

TEST_CASE("zero epochs leave the model unchanged") {
    Mlp m = Mlp::create({2, 3, 1}, 5);
    const Mlp before = m;
    AdamState s(m, 1e-3);
    TrainConfig tc;
    tc.epochs = 0;
    const auto trace = train_epochs(m, s, Matrix::Ones(2, 4), Matrix::Zero(1, 4), tc);
    CHECK(trace.empty());
    for (std::size_t l = 0; l < m.layers.size(); ++l) CHECK(m.layers[l].w == before.layers[l].w);
}

TEST_CASE("training is deterministic per seed") {
    Rng rng(9);
    const Matrix x = random_matrix(3, 50, rng), y = random_matrix(2, 50, rng);
    auto run = [&] {
        Mlp m = Mlp::create({3, 5, 2}, 7);
        AdamState s(m, 1e-2);
        TrainConfig tc;
        tc.epochs = 5;
        tc.batch_size = 16;
        tc.seed = 12;
        return train_epochs(m, s, x, y, tc);
    };
    CHECK(run() == run());
}

TEST_CASE("full-batch training does not depend on sample order") {
    Rng rng(10);
    const Matrix x = random_matrix(3, 20, rng), y = random_matrix(1, 20, rng);
    Eigen::PermutationMatrix<Eigen::Dynamic> perm(20);
    perm.setIdentity();
    std::shuffle(perm.indices().data(), perm.indices().data() + 20, rng);
    auto run = [](const Matrix& xs, const Matrix& ys) {
        Mlp m = Mlp::create({3, 4, 1}, 2);
        AdamState s(m, 1e-2);
        TrainConfig tc;
        tc.epochs = 3;
        tc.batch_size = 20;
        return train_epochs(m, s, xs, ys, tc);
    };
    const auto a = run(x, y), b = run(x * perm, y * perm);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-12));
}

TEST_CASE("save and load round-trip float32 parameters") {
    Mlp m = Mlp::create({3, 4, 2}, 21);
    for (auto& l : m.layers)
        for (Eigen::Index i = 0; i < l.w.size(); ++i) l.w.data()[i] = round_f32(l.w.data()[i]);
    const auto dir = std::filesystem::temp_directory_path() / "cfqp_nn_roundtrip";
    std::filesystem::create_directories(dir);
    save_mlp(m, 17, dir / "m.json", dir / "m.bin");
    const Mlp back = load_mlp(dir / "m.json", dir / "m.bin");
    REQUIRE(back.sizes() == m.sizes());
    for (std::size_t l = 0; l < m.layers.size(); ++l) CHECK(back.layers[l].w == m.layers[l].w);
    std::filesystem::remove_all(dir);
}

TEST_CASE("layer sizes are validated") {
    CHECK_THROWS_AS(Mlp::create({3}, 1), ConfigError);
    CHECK_THROWS_AS(Mlp::create({3, 0, 1}, 1), ConfigError);
    Mlp m = Mlp::create({3, 2}, 1);
    CHECK_THROWS_AS(forward(m, Matrix::Zero(4, 1)), ShapeError);
}
