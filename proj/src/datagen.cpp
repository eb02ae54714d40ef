#include "cfqp/datagen.hpp"

#include "cfqp/io.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace cfqp::data {

using nlohmann::json;

std::string to_string(GeneratorKind g) {
    switch (g) {
        case GeneratorKind::oscillator: return "oscillator";
        case GeneratorKind::cardio: return "cardio";
        case GeneratorKind::images: return "images";
    }
    return "?";
}

std::string to_string(NoiseMode m) { return m == NoiseMode::additive ? "additive" : "non_additive"; }

GeneratorKind parse_generator(std::string_view s) {
    if (s == "oscillator") return GeneratorKind::oscillator;
    if (s == "cardio") return GeneratorKind::cardio;
    if (s == "images") return GeneratorKind::images;
    throw ConfigError("unknown generator '" + std::string(s) + "'");
}

NoiseMode parse_noise_mode(std::string_view s) {
    if (s == "additive") return NoiseMode::additive;
    if (s == "non_additive" || s == "non-additive") return NoiseMode::non_additive;
    throw ConfigError("unknown noise mode '" + std::string(s) + "'");
}

void GenConfig::validate() const {
    if (!(rho >= 0.0 && rho <= 1.0)) throw ConfigError("rho must lie in [0, 1]");
    if (!(sigma >= 0.0)) throw ConfigError("sigma must be non-negative");
    if (k0 < 1) throw ConfigError("k0 must be at least 1");
    if (total() == 0) throw ConfigError("dataset must contain at least one sample");
    switch (generator) {
        case GeneratorKind::oscillator:
            if (k0 != 3) throw ConfigError("oscillator generator requires k0 = 3");
            break;
        case GeneratorKind::cardio:
            if (k0 != 2) throw ConfigError("cardio generator requires k0 = 2");
            cv.validate();
            break;
        case GeneratorKind::images:
            if (image_size < 8) throw ConfigError("image_size must be at least 8");
            if (k0 > 255) throw ConfigError("k0 must fit in 8 bits");
            if (!(blur_sigma > 0.0)) throw ConfigError("blur_sigma must be positive");
            if (corpus_images.empty() != corpus_labels.empty())
                throw ConfigError("corpus_images and corpus_labels must be given together");
            break;
    }
}

GenConfig GenConfig::defaults(GeneratorKind g, NoiseMode m) {
    GenConfig c;
    c.generator = g;
    c.noise_mode = m;
    switch (g) {
        case GeneratorKind::oscillator:
            c.n_train = 128;
            c.n_val = 128;
            c.n_test = 1000;
            c.sigma = 0.05;
            c.k0 = 3;
            break;
        case GeneratorKind::cardio:
            c.n_train = 500;
            c.n_val = 250;
            c.n_test = 1000;
            c.sigma = 0.01;
            c.k0 = 2;
            break;
        case GeneratorKind::images:
            c.n_train = 4000;
            c.n_val = 1000;
            c.n_test = 1000;
            c.sigma = m == NoiseMode::additive ? 0.01 : 0.05;
            c.k0 = 6;
            c.rho = 0.5;
            break;
    }
    return c;
}

void to_json(json& j, const GenConfig& c) {
    j = json{{"generator", to_string(c.generator)},
             {"n_train", c.n_train},
             {"n_val", c.n_val},
             {"n_test", c.n_test},
             {"sigma", c.sigma},
             {"noise_mode", to_string(c.noise_mode)},
             {"k0", c.k0},
             {"rho", c.rho},
             {"seed", c.seed},
             {"image_size", c.image_size},
             {"rotation_scale", c.rotation_scale},
             {"blur_sigma", c.blur_sigma},
             {"cv", c.cv}};
    if (!c.corpus_images.empty()) {
        j["corpus_images"] = c.corpus_images;
        j["corpus_labels"] = c.corpus_labels;
    }
}

void from_json(const json& j, GenConfig& c) {
    const auto gen = parse_generator(j.value("generator", std::string("oscillator")));
    const auto mode = parse_noise_mode(j.value("noise_mode", std::string("additive")));
    c = GenConfig::defaults(gen, mode);
    c.n_train = j.value("n_train", c.n_train);
    c.n_val = j.value("n_val", c.n_val);
    c.n_test = j.value("n_test", c.n_test);
    c.sigma = j.value("sigma", c.sigma);
    c.k0 = j.value("k0", c.k0);
    c.rho = j.value("rho", c.rho);
    c.seed = j.value("seed", c.seed);
    c.image_size = j.value("image_size", c.image_size);
    c.rotation_scale = j.value("rotation_scale", c.rotation_scale);
    c.blur_sigma = j.value("blur_sigma", c.blur_sigma);
    if (j.contains("cv")) c.cv = j.at("cv").get<ode::CvParams>();
    c.corpus_images = j.value("corpus_images", std::string());
    c.corpus_labels = j.value("corpus_labels", std::string());
}

IndexList Dataset::indices(Split s) const {
    IndexList out;
    for (std::size_t i = 0; i < split.size(); ++i)
        if (split[i] == s) out.push_back(i);
    return out;
}

std::size_t latent_dim(const GenConfig& cfg) {
    const bool additive = cfg.noise_mode == NoiseMode::additive;
    const std::size_t obs = 2 * kCovariateSteps + 2 * kOutcomeSteps;
    switch (cfg.generator) {
        case GeneratorKind::oscillator: return additive ? 1 + obs : kCovariateSteps + kOutcomeSteps;
        case GeneratorKind::cardio: return additive ? 4 + obs : 4 + (kOutcomeSteps - 1);
        case GeneratorKind::images: {
            const auto px = static_cast<std::size_t>(cfg.image_size * cfg.image_size);
            return additive ? 1 + 3 * px : 2;
        }
    }
    return 0;
}

std::size_t covariate_dim(const GenConfig& cfg) {
    if (cfg.generator == GeneratorKind::images) return static_cast<std::size_t>(cfg.image_size * cfg.image_size);
    return 2 * kCovariateSteps;
}

std::size_t outcome_dim(const GenConfig& cfg) {
    if (cfg.generator == GeneratorKind::images)
        return 3 * static_cast<std::size_t>(cfg.image_size * cfg.image_size);
    return 2 * kOutcomeSteps;
}

TreatmentRange treatment_range(const GenConfig& cfg) {
    switch (cfg.generator) {
        case GeneratorKind::oscillator: return {0.2, 1.0};
        case GeneratorKind::cardio: return {0.6, 1.0};
        case GeneratorKind::images: return {0.0, 5.3};
    }
    return {};
}

namespace {

Dataset make_empty(const GenConfig& cfg) {
    Dataset ds;
    ds.config = cfg;
    const auto n = static_cast<Eigen::Index>(cfg.total());
    ds.x.resize(static_cast<Eigen::Index>(covariate_dim(cfg)), n);
    ds.y.resize(static_cast<Eigen::Index>(outcome_dim(cfg)), n);
    ds.t.resize(n);
    ds.latents.resize(static_cast<Eigen::Index>(latent_dim(cfg)), n);
    ds.u_z.resize(cfg.total());
    ds.split.resize(cfg.total());
    for (std::size_t i = 0; i < cfg.total(); ++i)
        ds.split[i] = i < cfg.n_train ? Split::train : (i < cfg.n_train + cfg.n_val ? Split::val : Split::test);
    return ds;
}

void fill_normal(std::span<double> out, Rng& rng, double sigma) {
    for (auto& v : out) v = round_f32(normal(rng, sigma));
}

int draw_class(Rng& rng, const Vector& p) {
    std::discrete_distribution<int> d(p.data(), p.data() + p.size());
    return d(rng);
}

// ---- oscillator

double oscillator_phase(const GenConfig& cfg, std::span<const double> latent, int step) {
    return cfg.noise_mode == NoiseMode::additive ? latent[0] : latent[static_cast<std::size_t>(step)];
}

Vector oscillator_covariates(const GenConfig& cfg, std::span<const double> latent) {
    Vector x(2 * kCovariateSteps);
    const bool additive = cfg.noise_mode == NoiseMode::additive;
    for (int c = 0; c < 2; ++c) {
        for (int i = 0; i < kCovariateSteps; ++i) {
            const int idx = c * kCovariateSteps + i;
            double v = std::sin(0.5 * i + (c + 1) * oscillator_phase(cfg, latent, i));
            if (additive) v += latent[static_cast<std::size_t>(1 + idx)];
            x[idx] = round_f32(v);
        }
    }
    return x;
}

Vector oscillator_outcome(const GenConfig& cfg, std::span<const double> latent, int u_z, double t) {
    Vector y(2 * kOutcomeSteps);
    const bool additive = cfg.noise_mode == NoiseMode::additive;
    for (int j = 0; j < kOutcomeSteps; ++j) {
        const int step = kCovariateSteps + j;
        const double time = static_cast<double>(step);
        const auto offsets = oscillator_offsets(u_z, t, time);
        for (int c = 0; c < 2; ++c) {
            const int idx = c * kOutcomeSteps + j;
            double v = std::sin(0.5 * time + (c + 1) * oscillator_phase(cfg, latent, step)) + offsets[c];
            if (additive) v += latent[static_cast<std::size_t>(1 + 2 * kCovariateSteps + idx)];
            y[idx] = round_f32(v);
        }
    }
    return y;
}

// ---- cardio

ode::CvState cardio_initial(std::span<const double> latent) { return {latent[0], latent[1], latent[2], latent[3]}; }

std::vector<ode::CvState> cardio_trajectory(const GenConfig& cfg, std::span<const double> latent, int u_z,
                                            double t) {
    const auto init = cardio_initial(latent);
    const bool additive = cfg.noise_mode == NoiseMode::additive;
    auto input = [&](double time) {
        double noise = 0.0;
        if (!additive && time > kTreatmentTime) {
            const auto k = std::clamp(static_cast<int>(std::floor(time - kTreatmentTime)), 0, kOutcomeSteps - 2);
            noise = latent[static_cast<std::size_t>(4 + k)];
        }
        return fluid_rate(time, u_z, t, init.p_a, noise);
    };
    return ode::simulate_cv(cfg.cv, init, input, kTreatmentTime + kOutcomeSteps - 1);
}

Vector cardio_covariates(const GenConfig& cfg, std::span<const double> latent,
                         const std::vector<ode::CvState>& traj) {
    Vector x(2 * kCovariateSteps);
    const bool additive = cfg.noise_mode == NoiseMode::additive;
    for (int i = 0; i < kCovariateSteps; ++i) {
        const auto& s = traj[static_cast<std::size_t>(i)];
        for (int c = 0; c < 2; ++c) {
            const int idx = c * kCovariateSteps + i;
            double v = c == 0 ? s.p_a : s.p_v;
            if (additive) v += latent[static_cast<std::size_t>(4 + idx)];
            x[idx] = round_f32(v);
        }
    }
    return x;
}

Vector cardio_outcome_from(const GenConfig& cfg, std::span<const double> latent,
                           const std::vector<ode::CvState>& traj) {
    Vector y(2 * kOutcomeSteps);
    const bool additive = cfg.noise_mode == NoiseMode::additive;
    for (int j = 0; j < kOutcomeSteps; ++j) {
        const auto& s = traj[static_cast<std::size_t>(kCovariateSteps + j)];
        for (int c = 0; c < 2; ++c) {
            const int idx = c * kOutcomeSteps + j;
            double v = c == 0 ? s.p_a : s.p_v;
            if (additive) v += latent[static_cast<std::size_t>(4 + 2 * kCovariateSteps + idx)];
            y[idx] = round_f32(v);
        }
    }
    return y;
}

// ---- images

Vector image_outcome(const GenConfig& cfg, const Vector& x, std::span<const double> latent, int u_z, double t) {
    const int s = cfg.image_size;
    const auto px = static_cast<Eigen::Index>(s * s);
    const Vector rotated = rotate_image(x, s, cfg.rotation_scale * t);
    const auto color = class_color(u_z, cfg.k0);
    Vector y(3 * px);
    if (cfg.noise_mode == NoiseMode::additive) {
        for (int c = 0; c < 3; ++c)
            for (Eigen::Index p = 0; p < px; ++p) {
                const Eigen::Index idx = c * px + p;
                y[idx] = round_f32(rotated[p] * color[c] + latent[static_cast<std::size_t>(1 + idx)]);
            }
    } else {
        const double blur = cfg.blur_sigma * std::exp(latent[1]);
        const Vector blurred = gaussian_blur(rotated, s, blur);
        for (int c = 0; c < 3; ++c)
            for (Eigen::Index p = 0; p < px; ++p) y[c * px + p] = round_f32(blurred[p] * color[c]);
    }
    return y;
}

double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

Vector resize_bilinear(const Vector& img, int rows, int cols, int size) {
    if (rows == size && cols == size) return img;
    Vector out(size * size);
    for (int r = 0; r < size; ++r) {
        for (int c = 0; c < size; ++c) {
            const double sr = std::clamp((r + 0.5) * rows / size - 0.5, 0.0, rows - 1.0);
            const double sc = std::clamp((c + 0.5) * cols / size - 0.5, 0.0, cols - 1.0);
            const int r0 = static_cast<int>(sr), c0 = static_cast<int>(sc);
            const int r1 = std::min(r0 + 1, rows - 1), c1 = std::min(c0 + 1, cols - 1);
            const double fr = sr - r0, fc = sc - c0;
            out[r * size + c] = (1 - fr) * ((1 - fc) * img[r0 * cols + c0] + fc * img[r0 * cols + c1]) +
                                fr * ((1 - fc) * img[r1 * cols + c0] + fc * img[r1 * cols + c1]);
        }
    }
    return out;
}

}  // namespace

// ---------------------------------------------------------------------------

double treatment_ramp(double time) {
    return std::clamp(std::min(time - kTreatmentTime, kResponseTimeConstant) / kResponseTimeConstant, 0.0, 1.0);
}

std::array<double, 2> oscillator_offsets(int u_z, double t, double time) {
    const double d = treatment_ramp(time) * t;
    return {u_z == 1 ? 0.0 : d, u_z == 0 ? 0.0 : d};
}

double fluid_confounding(double p_a0) {
    const auto g = [](double v) {
        const double inner = std::cos(5.0 * v - 0.2) * (5.0 - v) * (5.0 - v);
        return 0.02 * inner * inner;
    };
    return g(0.5 + (p_a0 - 0.75) / 0.1);
}

double fluid_rate(double time, int u_z, double t, double p_a0, double noise) {
    if (time <= kTreatmentTime) return 0.0;
    const double pulse = (time - kTreatmentTime - 5.0) / 5.0;
    return (1.0 + 2.0 * u_z + noise) * t * 5.0 * fluid_confounding(p_a0) * std::exp(-pulse * pulse);
}

Vector class_probabilities(int label, int k, double rho) {
    if (k < 1) throw ConfigError("class_probabilities: k must be positive");
    Vector p(k);
    if (k == 1) {
        p[0] = 1.0;
        return p;
    }
    const double p0 = 1.0 / k;
    const double hit = (1.0 - p0) * rho + p0;
    p.setConstant((1.0 - hit) / (k - 1));
    p[label % k] = hit;
    return p;
}

double image_treatment(double mean_pixel_255, double u) { return u + 5.0 * sigmoid((mean_pixel_255 - 33.0) / 11.0); }

std::array<double, 3> class_color(int k, int k0) {
    // HSV -> RGB with S = V = 1.
    const double h = 6.0 * static_cast<double>(k) / static_cast<double>(k0);
    const int sector = static_cast<int>(std::floor(h)) % 6;
    const double f = h - std::floor(h);
    switch (sector) {
        case 0: return {1.0, f, 0.0};
        case 1: return {1.0 - f, 1.0, 0.0};
        case 2: return {0.0, 1.0, f};
        case 3: return {0.0, 1.0 - f, 1.0};
        case 4: return {f, 0.0, 1.0};
        default: return {1.0, 0.0, 1.0 - f};
    }
}

Vector render_glyph(int digit, int size, const GlyphJitter& jitter) {
    // Segments a..g of a seven-segment display on the unit box (x right, y down).
    static constexpr std::array<std::array<double, 4>, 7> kSegments{{
        {0, 0, 1, 0},      // a
        {1, 0, 1, 0.5},    // b
        {1, 0.5, 1, 1},    // c
        {0, 1, 1, 1},      // d
        {0, 0.5, 0, 1},    // e
        {0, 0, 0, 0.5},    // f
        {0, 0.5, 1, 0.5},  // g
    }};
    static constexpr std::array<std::uint8_t, 10> kDigits{
        0b0111111, 0b0000110, 0b1011011, 0b1001111, 0b1100110,
        0b1101101, 0b1111101, 0b0000111, 0b1111111, 0b1101111,
    };
    if (digit < 0 || digit > 9) throw ConfigError("render_glyph: digit out of range");
    const double unit = size / 14.0;
    const double w = 0.4 * size * jitter.scale;
    const double h = 0.7 * size * jitter.scale;
    const double ox = 0.5 * size + jitter.dx * unit - 0.5 * w;
    const double oy = 0.5 * size + jitter.dy * unit - 0.5 * h;
    const double half = 0.5 * jitter.thickness * unit;

    Vector img = Vector::Zero(size * size);
    for (int r = 0; r < size; ++r) {
        for (int c = 0; c < size; ++c) {
            const double px = c + 0.5, py = r + 0.5;
            double best = std::numeric_limits<double>::infinity();
            for (int s = 0; s < 7; ++s) {
                if (!((kDigits[static_cast<std::size_t>(digit)] >> s) & 1)) continue;
                const auto& seg = kSegments[static_cast<std::size_t>(s)];
                const double ax = ox + seg[0] * w, ay = oy + seg[1] * h;
                const double bx = ox + seg[2] * w, by = oy + seg[3] * h;
                const double vx = bx - ax, vy = by - ay;
                const double len2 = vx * vx + vy * vy;
                const double u = std::clamp(((px - ax) * vx + (py - ay) * vy) / len2, 0.0, 1.0);
                best = std::min(best, std::hypot(px - (ax + u * vx), py - (ay + u * vy)));
            }
            img[r * size + c] = std::clamp(half + 0.5 - best, 0.0, 1.0);
        }
    }
    return img;
}

Vector rotate_image(const Vector& img, int size, double degrees) {
    const double theta = degrees * std::numbers::pi / 180.0;
    const double cs = std::cos(theta), sn = std::sin(theta);
    const double centre = 0.5 * (size - 1);
    auto at = [&](int r, int c) { return (r < 0 || c < 0 || r >= size || c >= size) ? 0.0 : img[r * size + c]; };
    Vector out(size * size);
    for (int r = 0; r < size; ++r) {
        for (int c = 0; c < size; ++c) {
            // Inverse map: the source of output pixel (r, c) under a counter-clockwise rotation.
            const double dx = c - centre, dy = r - centre;
            const double sc = cs * dx - sn * dy + centre;
            const double sr = sn * dx + cs * dy + centre;
            const int r0 = static_cast<int>(std::floor(sr)), c0 = static_cast<int>(std::floor(sc));
            const double fr = sr - r0, fc = sc - c0;
            out[r * size + c] = (1 - fr) * ((1 - fc) * at(r0, c0) + fc * at(r0, c0 + 1)) +
                                fr * ((1 - fc) * at(r0 + 1, c0) + fc * at(r0 + 1, c0 + 1));
        }
    }
    return out;
}

Vector gaussian_blur(const Vector& img, int size, double sigma) {
    std::array<double, 5> k{};
    double total = 0.0;
    for (int i = 0; i < 5; ++i) {
        k[static_cast<std::size_t>(i)] = std::exp(-0.5 * (i - 2) * (i - 2) / (sigma * sigma));
        total += k[static_cast<std::size_t>(i)];
    }
    for (auto& v : k) v /= total;
    Vector tmp = Vector::Zero(size * size);
    Vector out = Vector::Zero(size * size);
    for (int r = 0; r < size; ++r)
        for (int c = 0; c < size; ++c)
            for (int i = -2; i <= 2; ++i)
                if (c + i >= 0 && c + i < size) tmp[r * size + c] += k[static_cast<std::size_t>(i + 2)] * img[r * size + c + i];
    for (int r = 0; r < size; ++r)
        for (int c = 0; c < size; ++c)
            for (int i = -2; i <= 2; ++i)
                if (r + i >= 0 && r + i < size) out[r * size + c] += k[static_cast<std::size_t>(i + 2)] * tmp[(r + i) * size + c];
    return out;
}

// ---------------------------------------------------------------------------

Dataset gen_oscillator(const GenConfig& cfg) {
    cfg.validate();
    if (cfg.generator != GeneratorKind::oscillator) throw ConfigError("gen_oscillator: wrong generator");
    Dataset ds = make_empty(cfg);
    const bool additive = cfg.noise_mode == NoiseMode::additive;
    const Vector prior = Vector::Constant(3, 1.0 / 3.0);
    for (std::size_t i = 0; i < cfg.total(); ++i) {
        Rng rng = make_rng(cfg.seed, streams::sample, i);
        const auto col = static_cast<Eigen::Index>(i);
        const int u_z = draw_class(rng, prior);
        const double t = round_f32(uniform(rng, 0.2, 1.0));
        auto latent = std::span(ds.latents.col(col).data(), static_cast<std::size_t>(ds.latents.rows()));
        if (additive) {
            latent[0] = round_f32(normal(rng));
            fill_normal(latent.subspan(1), rng, cfg.sigma);
        } else {
            fill_normal(latent, rng, cfg.sigma);
        }
        ds.u_z[i] = static_cast<std::uint8_t>(u_z);
        ds.t[col] = t;
        ds.x.col(col) = oscillator_covariates(cfg, latent);
        ds.y.col(col) = oscillator_outcome(cfg, latent, u_z, t);
    }
    return ds;
}

Dataset gen_cardio(const GenConfig& cfg) {
    cfg.validate();
    if (cfg.generator != GeneratorKind::cardio) throw ConfigError("gen_cardio: wrong generator");
    Dataset ds = make_empty(cfg);
    const auto& p = cfg.cv;
    const Vector prior = Vector::Constant(2, 0.5);
    for (std::size_t i = 0; i < cfg.total(); ++i) {
        Rng rng = make_rng(cfg.seed, streams::sample, i);
        const auto col = static_cast<Eigen::Index>(i);
        const int u_z = draw_class(rng, prior);
        const double t = round_f32(uniform(rng, 0.6, 1.0));
        auto latent = std::span(ds.latents.col(col).data(), static_cast<std::size_t>(ds.latents.rows()));
        latent[0] = round_f32(p.sv_init * (1.0 + p.sv_spread * uniform(rng, -1.0, 1.0)));
        latent[1] = round_f32(p.p_a_init + p.p_a_spread * uniform(rng, -1.0, 1.0));
        latent[2] = round_f32(p.p_v_init * (1.0 + p.p_v_spread * uniform(rng, -1.0, 1.0)));
        latent[3] = round_f32(std::clamp(p.s_init + p.s_spread * uniform(rng, -1.0, 1.0), 0.0, 1.0));
        fill_normal(latent.subspan(4), rng, cfg.sigma);
        ds.u_z[i] = static_cast<std::uint8_t>(u_z);
        ds.t[col] = t;
        try {
            const auto traj = cardio_trajectory(cfg, latent, u_z, t);
            ds.x.col(col) = cardio_covariates(cfg, latent, traj);
            ds.y.col(col) = cardio_outcome_from(cfg, latent, traj);
        } catch (const NumericError& e) {
            throw NumericError("cardio sample " + std::to_string(i) + ": " + e.what());
        }
    }
    return ds;
}

Dataset gen_images(const GenConfig& cfg, const DigitCorpus* source) {
    cfg.validate();
    if (cfg.generator != GeneratorKind::images) throw ConfigError("gen_images: wrong generator");
    if (source && source->images.empty()) throw ConfigError("gen_images: empty digit corpus");
    Dataset ds = make_empty(cfg);
    const int s = cfg.image_size;
    for (std::size_t i = 0; i < cfg.total(); ++i) {
        Rng rng = make_rng(cfg.seed, streams::sample, i);
        const auto col = static_cast<Eigen::Index>(i);
        int label = 0;
        Vector x;
        if (source) {
            std::uniform_int_distribution<std::size_t> pick(0, source->images.size() - 1);
            const auto j = pick(rng);
            label = source->labels[j];
            x = resize_bilinear(source->images[j], source->rows, source->cols, s);
        } else {
            label = std::uniform_int_distribution<int>(0, 9)(rng);
            GlyphJitter jit;
            jit.thickness = uniform(rng, 0.8, 1.8);
            jit.scale = uniform(rng, 0.85, 1.1);
            jit.dx = uniform(rng, -1.0, 1.0);
            jit.dy = uniform(rng, -1.0, 1.0);
            x = render_glyph(label, s, jit);
        }
        x = x.unaryExpr([](double v) { return round_f32(v); });
        const double t = round_f32(image_treatment(255.0 * x.mean(), uniform(rng, 0.0, 0.3)));
        const int u_z = draw_class(rng, class_probabilities(label, cfg.k0, cfg.rho));

        auto latent = std::span(ds.latents.col(col).data(), static_cast<std::size_t>(ds.latents.rows()));
        latent[0] = label;
        fill_normal(latent.subspan(1), rng, cfg.sigma);

        ds.u_z[i] = static_cast<std::uint8_t>(u_z);
        ds.t[col] = t;
        ds.x.col(col) = x;
        ds.y.col(col) = image_outcome(cfg, x, latent, u_z, t);
    }
    return ds;
}

Dataset generate(const GenConfig& cfg) {
    switch (cfg.generator) {
        case GeneratorKind::oscillator: return gen_oscillator(cfg);
        case GeneratorKind::cardio: return gen_cardio(cfg);
        case GeneratorKind::images:
            if (!cfg.corpus_images.empty()) {
                const auto corpus = read_idx(cfg.corpus_images, cfg.corpus_labels);
                return gen_images(cfg, &corpus);
            }
            return gen_images(cfg, nullptr);
    }
    throw ConfigError("generate: unknown generator");
}

// ---------------------------------------------------------------------------

Vector outcome(const GenConfig& cfg, const Vector& x, std::span<const double> latent, int u_z, double t) {
    if (latent.size() != latent_dim(cfg)) throw ShapeError("outcome: latent length does not match generator");
    switch (cfg.generator) {
        case GeneratorKind::oscillator: return oscillator_outcome(cfg, latent, u_z, t);
        case GeneratorKind::cardio: return cardio_outcome_from(cfg, latent, cardio_trajectory(cfg, latent, u_z, t));
        case GeneratorKind::images: return image_outcome(cfg, x, latent, u_z, t);
    }
    throw ConfigError("outcome: unknown generator");
}

Vector regenerate_outcome(const Dataset& ds, std::size_t index, double t) {
    if (!ds.has_latents()) throw Error("regenerate_outcome: dataset was loaded without latents");
    if (index >= ds.size()) throw ConfigError("regenerate_outcome: index out of range");
    const auto col = static_cast<Eigen::Index>(index);
    const Vector x = ds.x.col(col);
    const auto latent = std::span(ds.latents.col(col).data(), static_cast<std::size_t>(ds.latents.rows()));
    return outcome(ds.config, x, latent, ds.u_z[index], round_f32(t));
}

CfTuple regen_counterfactual(const Dataset& ds, std::size_t index, double t_prime) {
    CfTuple tup;
    tup.y_prime = regenerate_outcome(ds, index, t_prime);
    const auto col = static_cast<Eigen::Index>(index);
    tup.x = ds.x.col(col);
    tup.t = ds.t[col];
    tup.y = ds.y.col(col);
    tup.t_prime = round_f32(t_prime);
    tup.u_z = ds.u_z[index];
    return tup;
}

void redraw_outcome_noise(const GenConfig& cfg, std::span<double> latent, Rng& rng) {
    if (latent.size() != latent_dim(cfg)) throw ShapeError("redraw_outcome_noise: latent length mismatch");
    const bool additive = cfg.noise_mode == NoiseMode::additive;
    switch (cfg.generator) {
        case GeneratorKind::oscillator:
            fill_normal(additive ? latent.subspan(1 + 2 * kCovariateSteps) : latent.subspan(kCovariateSteps), rng,
                        cfg.sigma);
            break;
        case GeneratorKind::cardio:
            fill_normal(additive ? latent.subspan(4 + 2 * kCovariateSteps) : latent.subspan(4), rng, cfg.sigma);
            break;
        case GeneratorKind::images:
            fill_normal(latent.subspan(1), rng, cfg.sigma);
            break;
    }
}

Vector class_prior(const GenConfig& cfg, std::span<const double> latent) {
    if (cfg.generator == GeneratorKind::images)
        return class_probabilities(static_cast<int>(latent[0]), cfg.k0, cfg.rho);
    return Vector::Constant(cfg.k0, 1.0 / cfg.k0);
}

// ---------------------------------------------------------------------------

namespace {

std::uint32_t read_be32(std::span<const std::uint8_t> bytes, std::size_t offset, const char* what) {
    if (offset + 4 > bytes.size()) throw ParseError(std::string("IDX: truncated ") + what, bytes.size());
    return (std::uint32_t(bytes[offset]) << 24) | (std::uint32_t(bytes[offset + 1]) << 16) |
           (std::uint32_t(bytes[offset + 2]) << 8) | std::uint32_t(bytes[offset + 3]);
}

}  // namespace

DigitCorpus parse_idx(std::span<const std::uint8_t> image_bytes, std::span<const std::uint8_t> label_bytes) {
    if (read_be32(image_bytes, 0, "image header") != 0x00000803u) throw ParseError("IDX: bad image magic", 0);
    if (read_be32(label_bytes, 0, "label header") != 0x00000801u) throw ParseError("IDX: bad label magic", 0);
    const std::size_t n = read_be32(image_bytes, 4, "image count");
    const std::size_t rows = read_be32(image_bytes, 8, "row count");
    const std::size_t cols = read_be32(image_bytes, 12, "column count");
    const std::size_t n_labels = read_be32(label_bytes, 4, "label count");
    if (n != n_labels) throw ParseError("IDX: image and label counts differ", 4);
    if (rows == 0 || cols == 0) throw ParseError("IDX: empty image dimensions", 8);
    const std::size_t pixels = rows * cols;
    if (image_bytes.size() < 16 + n * pixels) throw ParseError("IDX: truncated image data", image_bytes.size());
    if (label_bytes.size() < 8 + n) throw ParseError("IDX: truncated label data", label_bytes.size());

    DigitCorpus corpus;
    corpus.rows = static_cast<int>(rows);
    corpus.cols = static_cast<int>(cols);
    corpus.images.reserve(n);
    corpus.labels.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::uint8_t label = label_bytes[8 + i];
        if (label > 9) throw ParseError("IDX: label outside 0..9", 8 + i);
        Vector img(static_cast<Eigen::Index>(pixels));
        for (std::size_t p = 0; p < pixels; ++p) img[static_cast<Eigen::Index>(p)] = image_bytes[16 + i * pixels + p] / 255.0;
        corpus.images.push_back(std::move(img));
        corpus.labels.push_back(label);
    }
    return corpus;
}

DigitCorpus read_idx(const std::filesystem::path& images, const std::filesystem::path& labels) {
    const auto a = io::read_bytes(images);
    const auto b = io::read_bytes(labels);
    return parse_idx(a, b);
}

// ---------------------------------------------------------------------------

namespace {

constexpr const char* kManifest = "manifest.json";

std::vector<std::uint8_t> encode_matrix(const Matrix& m) {
    std::vector<std::uint8_t> out;
    io::append_f32_le(out, m.data(), static_cast<std::size_t>(m.size()));
    return out;
}

Matrix decode_matrix(const std::vector<std::uint8_t>& bytes, Eigen::Index rows, Eigen::Index cols, const char* name) {
    const auto values = io::decode_f32_le(bytes);
    if (values.size() != static_cast<std::size_t>(rows * cols))
        throw ParseError(std::string("dataset blob ") + name + " has unexpected length", bytes.size());
    return Eigen::Map<const Matrix>(values.data(), rows, cols);
}

}  // namespace

void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    const auto x = encode_matrix(ds.x);
    const auto t = encode_matrix(ds.t);
    const auto y = encode_matrix(ds.y);
    const auto lat = encode_matrix(ds.latents);
    const std::vector<std::uint8_t> uz(ds.u_z.begin(), ds.u_z.end());

    std::vector<std::uint8_t> all;
    for (const auto* blob : {&x, &t, &y, &lat, &uz}) all.insert(all.end(), blob->begin(), blob->end());

    const auto n = ds.size();
    json manifest{{"format", "cfqp-dataset"},
                  {"version", 1},
                  {"generator", to_string(ds.config.generator)},
                  {"config", ds.config},
                  {"shapes",
                   {{"x", {n, ds.x.rows()}},
                    {"t", {n}},
                    {"y", {n, ds.y.rows()}},
                    {"latents", {n, ds.latents.rows()}},
                    {"u_z", {n}}}},
                  {"splits",
                   {{"train", ds.indices(Split::train).size()},
                    {"val", ds.indices(Split::val).size()},
                    {"test", ds.indices(Split::test).size()}}},
                  {"files",
                   {{"x", "x.f32"}, {"t", "t.f32"}, {"y", "y.f32"}, {"latents", "latents.f32"}, {"u_z", "u_z.u8"}}},
                  {"checksum", io::sha1_hex(all)}};
    io::write_bytes(dir / "x.f32", x);
    io::write_bytes(dir / "t.f32", t);
    io::write_bytes(dir / "y.f32", y);
    io::write_bytes(dir / "latents.f32", lat);
    io::write_bytes(dir / "u_z.u8", uz);
    io::write_text(dir / kManifest, manifest.dump(2) + "\n");
}

Dataset load_dataset(const std::filesystem::path& dir, bool with_latents) {
    json manifest;
    try {
        manifest = json::parse(io::read_text(dir / kManifest));
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("dataset manifest: ") + e.what(), e.byte);
    }
    if (manifest.value("format", std::string()) != "cfqp-dataset") throw ParseError("not a cfqp dataset manifest", 0);

    Dataset ds;
    ds.config = manifest.at("config").get<GenConfig>();
    const auto& shapes = manifest.at("shapes");
    const auto n = shapes.at("t").at(0).get<Eigen::Index>();
    const auto dx = shapes.at("x").at(1).get<Eigen::Index>();
    const auto dy = shapes.at("y").at(1).get<Eigen::Index>();
    const auto dl = shapes.at("latents").at(1).get<Eigen::Index>();

    const auto xb = io::read_bytes(dir / "x.f32");
    const auto tb = io::read_bytes(dir / "t.f32");
    const auto yb = io::read_bytes(dir / "y.f32");
    const auto lb = io::read_bytes(dir / "latents.f32");
    const auto ub = io::read_bytes(dir / "u_z.u8");

    std::vector<std::uint8_t> all;
    for (const auto* blob : {&xb, &tb, &yb, &lb, &ub}) all.insert(all.end(), blob->begin(), blob->end());
    if (io::sha1_hex(all) != manifest.at("checksum").get<std::string>())
        throw ParseError("dataset checksum mismatch", 0);

    ds.x = decode_matrix(xb, dx, n, "x");
    ds.t = decode_matrix(tb, n, 1, "t");
    ds.y = decode_matrix(yb, dy, n, "y");
    if (with_latents) ds.latents = decode_matrix(lb, dl, n, "latents");
    if (static_cast<Eigen::Index>(ub.size()) != n) throw ParseError("u_z blob has unexpected length", ub.size());
    ds.u_z.assign(ub.begin(), ub.end());

    const auto& splits = manifest.at("splits");
    const auto n_train = splits.at("train").get<std::size_t>();
    const auto n_val = splits.at("val").get<std::size_t>();
    ds.split.resize(static_cast<std::size_t>(n));
    for (std::size_t i = 0; i < ds.split.size(); ++i)
        ds.split[i] = i < n_train ? Split::train : (i < n_train + n_val ? Split::val : Split::test);
    return ds;
}

}  // namespace cfqp::data
