#include "cfqp/datagen.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>

using namespace cfqp;
using namespace cfqp::data;

namespace {

GenConfig small(GeneratorKind g, NoiseMode m, std::size_t n = 60) {
    auto c = GenConfig::defaults(g, m);
    c.n_train = n;
    c.n_val = n / 2;
    c.n_test = n / 2;
    return c;
}

std::vector<std::uint8_t> be32(std::uint32_t v) {
    return {static_cast<std::uint8_t>(v >> 24), static_cast<std::uint8_t>(v >> 16), static_cast<std::uint8_t>(v >> 8),
            static_cast<std::uint8_t>(v)};
}

// Pearson statistic of class counts against a uniform expectation.
double chi_square_uniform(const std::vector<std::uint8_t>& labels, int k) {
    std::vector<double> counts(static_cast<std::size_t>(k), 0.0);
    for (auto u : labels) counts[u] += 1.0;
    const double expected = static_cast<double>(labels.size()) / k;
    double stat = 0.0;
    for (double c : counts) stat += (c - expected) * (c - expected) / expected;
    return stat;
}

}  // namespace

TEST_CASE("oscillator defaults draw T in [0.2, 1] and balanced classes") {
    const auto ds = generate(GenConfig::defaults(GeneratorKind::oscillator, NoiseMode::additive));
    CHECK(ds.indices(Split::train).size() == 128);
    CHECK(ds.t.minCoeff() >= 0.2);
    CHECK(ds.t.maxCoeff() <= 1.0);
    // 2 degrees of freedom, 1% critical value.
    CHECK(chi_square_uniform(ds.u_z, 3) < 9.21);
    CHECK(ds.x.rows() == 40);
    CHECK(ds.y.rows() == 42);
}

TEST_CASE("class 1 leaves oscillator channel 0 untreated") {
    auto cfg = small(GeneratorKind::oscillator, NoiseMode::additive);
    cfg.sigma = 0.0;
    const auto ds = generate(cfg);
    int checked = 0;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        if (ds.u_z[i] != 1) continue;
        const double phi = ds.latents(0, static_cast<Eigen::Index>(i));
        for (int j = 0; j < kOutcomeSteps; ++j)
            CHECK(ds.y(j, static_cast<Eigen::Index>(i)) == round_f32(std::sin(0.5 * (kCovariateSteps + j) + phi)));
        ++checked;
    }
    CHECK(checked > 0);
}

TEST_CASE("zero treatment gives the same outcome for every class") {
    for (auto mode : {NoiseMode::additive, NoiseMode::non_additive}) {
        auto cfg = small(GeneratorKind::oscillator, mode, 10);
        cfg.sigma = 0.0;
        const auto ds = generate(cfg);
        const auto lat = std::span<const double>(ds.latents.col(0).data(), static_cast<std::size_t>(ds.latents.rows()));
        const Vector x = ds.x.col(0);
        const Vector y0 = outcome(cfg, x, lat, 0, 0.0);
        CHECK(outcome(cfg, x, lat, 1, 0.0) == y0);
        CHECK(outcome(cfg, x, lat, 2, 0.0) == y0);
    }
}

TEST_CASE("oscillator offsets are linear in the treatment") {
    auto cfg = small(GeneratorKind::oscillator, NoiseMode::additive, 20);
    cfg.sigma = 0.0;
    const auto ds = generate(cfg);
    for (std::size_t i = 0; i < 10; ++i) {
        const double t = ds.t[static_cast<Eigen::Index>(i)];
        const Vector base = regenerate_outcome(ds, i, 0.0);
        const Vector one = regenerate_outcome(ds, i, t) - base;
        const Vector two = regenerate_outcome(ds, i, 2.0 * t) - base;
        CHECK((two - 2.0 * one).cwiseAbs().maxCoeff() < 1e-5);
    }
    const auto off = oscillator_offsets(2, 0.6, 40.0);
    CHECK(off[0] == doctest::Approx(0.6));
    CHECK(off[1] == doctest::Approx(0.6));
    CHECK(oscillator_offsets(0, 0.6, 40.0)[1] == 0.0);
    CHECK(oscillator_offsets(1, 0.6, 40.0)[0] == 0.0);
    CHECK(treatment_ramp(20.0) == 0.0);
    CHECK(treatment_ramp(21.5) == doctest::Approx(0.5));
    CHECK(treatment_ramp(30.0) == 1.0);
}

TEST_CASE("regenerating at the factual treatment reproduces y exactly") {
    for (auto g : {GeneratorKind::oscillator, GeneratorKind::cardio, GeneratorKind::images})
        for (auto m : {NoiseMode::additive, NoiseMode::non_additive}) {
            const auto ds = generate(small(g, m, 8));
            for (std::size_t i = 0; i < ds.size(); ++i) {
                const auto tup = regen_counterfactual(ds, i, ds.t[static_cast<Eigen::Index>(i)]);
                CHECK(tup.y_prime == ds.y.col(static_cast<Eigen::Index>(i)));
                CHECK(tup.u_z == ds.u_z[i]);
            }
        }
}

TEST_CASE("fluid input is zero before treatment and scales 1:3 between classes") {
    for (double time = 0.0; time <= 20.0; time += 0.5) CHECK(fluid_rate(time, 1, 0.8, 0.76, 0.0) == 0.0);
    for (double time : {21.0, 24.5, 30.0}) {
        const double r0 = fluid_rate(time, 0, 0.8, 0.76, 0.0);
        const double r1 = fluid_rate(time, 1, 0.8, 0.76, 0.0);
        CHECK(r1 == doctest::Approx(3.0 * r0).epsilon(1e-14));
    }
}

TEST_CASE("cardio defaults produce the configured split sizes and PEHE tuples") {
    auto cfg = GenConfig::defaults(GeneratorKind::cardio, NoiseMode::additive);
    CHECK(cfg.n_train == 500);
    CHECK(cfg.n_val == 250);
    CHECK(cfg.n_test == 1000);
    cfg.n_train = 10;
    cfg.n_val = 5;
    cfg.n_test = 5;
    const auto ds = generate(cfg);
    CHECK(ds.indices(Split::val).size() == 5);
    CHECK(ds.t.minCoeff() >= 0.6);
    const auto a = regen_counterfactual(ds, 0, 0.5), b = regen_counterfactual(ds, 0, 0.8);
    CHECK(a.y_prime.size() == 42);
    CHECK(a.x == b.x);
    CHECK(a.y_prime != b.y_prime);
}

TEST_CASE("image class probabilities at the ends of the correlation range") {
    for (int label = 0; label < 10; ++label) {
        const Vector p = class_probabilities(label, 6, 0.0);
        CHECK((p.array() - 1.0 / 6.0).abs().maxCoeff() < 1e-15);
    }
    const Vector p = class_probabilities(7, 6, 1.0);
    CHECK(p[1] == 1.0);
    CHECK(p.sum() == doctest::Approx(1.0));
    CHECK(image_treatment(33.0, 0.0) == doctest::Approx(2.5));
    CHECK(image_treatment(33.0, 0.3) == doctest::Approx(2.8));
}

TEST_CASE("rho = 0 gives uniform class marginals in generated images") {
    auto cfg = GenConfig::defaults(GeneratorKind::images, NoiseMode::additive);
    cfg.rho = 0.0;
    cfg.n_train = 1200;
    cfg.n_val = 0;
    cfg.n_test = 0;
    const auto ds = generate(cfg);
    // 5 degrees of freedom, 1% critical value.
    CHECK(chi_square_uniform(ds.u_z, 6) < 15.086);
}

TEST_CASE("image pieces") {
    const Vector glyph = render_glyph(8, 14, {});
    CHECK(glyph.minCoeff() >= 0.0);
    CHECK(glyph.maxCoeff() <= 1.0);
    CHECK(glyph.sum() > render_glyph(1, 14, {}).sum());
    CHECK((rotate_image(glyph, 14, 0.0) - glyph).cwiseAbs().maxCoeff() < 1e-12);
    // Four quarter turns come back to the start on a square grid.
    Vector turned = glyph;
    for (int i = 0; i < 4; ++i) turned = rotate_image(turned, 14, 90.0);
    CHECK((turned - glyph).cwiseAbs().maxCoeff() < 1e-9);
    Vector dot = Vector::Zero(14 * 14);
    dot[7 * 14 + 7] = 1.0;
    CHECK(gaussian_blur(dot, 14, 1.0).sum() == doctest::Approx(1.0));
    const auto red = class_color(0, 6);
    CHECK(red == std::array<double, 3>{1.0, 0.0, 0.0});
}

TEST_CASE("idx parsing accepts a tiny corpus and reports bad offsets") {
    std::vector<std::uint8_t> img = be32(0x00000803), lab = be32(0x00000801);
    for (auto v : {be32(2), be32(2), be32(2)}) img.insert(img.end(), v.begin(), v.end());
    for (std::uint8_t p : {0, 255, 128, 0, 10, 20, 30, 40}) img.push_back(p);
    auto n = be32(2);
    lab.insert(lab.end(), n.begin(), n.end());
    lab.push_back(3);
    lab.push_back(9);
    const auto corpus = parse_idx(img, lab);
    CHECK(corpus.images.size() == 2);
    CHECK(corpus.rows == 2);
    CHECK(corpus.labels[1] == 9);
    CHECK(corpus.images[0][1] == doctest::Approx(1.0));

    auto bad = img;
    bad[3] = 0x02;
    try {
        parse_idx(bad, lab);
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(e.offset() == 0);
    }
    auto truncated = img;
    truncated.resize(truncated.size() - 3);
    CHECK_THROWS_AS(parse_idx(truncated, lab), ParseError);
}

TEST_CASE("datasets survive a save/load round trip bit for bit") {
    const auto ds = generate(small(GeneratorKind::cardio, NoiseMode::non_additive, 6));
    const auto dir = std::filesystem::temp_directory_path() / "cfqp_ds_roundtrip";
    std::filesystem::remove_all(dir);
    save_dataset(ds, dir);
    const auto back = load_dataset(dir);
    CHECK(back.x == ds.x);
    CHECK(back.y == ds.y);
    CHECK(back.t == ds.t);
    CHECK(back.u_z == ds.u_z);
    CHECK(back.latents == ds.latents);
    CHECK(back.split == ds.split);
    std::filesystem::remove_all(dir);
}

TEST_CASE("generation is deterministic and per-sample streams are independent of size") {
    auto a = small(GeneratorKind::oscillator, NoiseMode::non_additive, 20);
    const auto d1 = generate(a), d2 = generate(a);
    CHECK(d1.y == d2.y);
    auto b = a;
    b.seed = 2;
    CHECK(generate(b).y != d1.y);
}

TEST_CASE("invalid generator configs are rejected") {
    auto c = GenConfig::defaults(GeneratorKind::images, NoiseMode::additive);
    c.rho = 1.5;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c.rho = 0.5;
    c.image_size = 4;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    auto o = GenConfig::defaults(GeneratorKind::oscillator, NoiseMode::additive);
    o.sigma = -1.0;
    CHECK_THROWS_AS(o.validate(), ConfigError);
    o.sigma = 0.1;
    o.k0 = 0;
    CHECK_THROWS_AS(o.validate(), ConfigError);
}
