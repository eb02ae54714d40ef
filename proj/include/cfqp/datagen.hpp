#pragma once

#include "cfqp/common.hpp"
#include "cfqp/odesim.hpp"
#include "cfqp/rng.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>

namespace cfqp::data {

enum class GeneratorKind { oscillator, cardio, images };
enum class NoiseMode { additive, non_additive };
enum class Split : std::uint8_t { train = 0, val = 1, test = 2 };

std::string to_string(GeneratorKind g);
std::string to_string(NoiseMode m);
GeneratorKind parse_generator(std::string_view s);
NoiseMode parse_noise_mode(std::string_view s);

struct GenConfig {
    GeneratorKind generator = GeneratorKind::oscillator;
    std::size_t n_train = 128;
    std::size_t n_val = 128;
    std::size_t n_test = 1000;
    double sigma = 0.05;
    NoiseMode noise_mode = NoiseMode::additive;
    int k0 = 3;
    double rho = 0.0;
    std::uint64_t seed = 1;
    int image_size = 14;
    double rotation_scale = 10.0;  // degrees per treatment unit
    double blur_sigma = 1.0;       // pixels
    ode::CvParams cv;
    // Optional IDX digit corpus for the image generator; procedural glyphs otherwise.
    std::string corpus_images;
    std::string corpus_labels;

    std::size_t total() const { return n_train + n_val + n_test; }
    void validate() const;

    /// Hyper-parameters per dataset and noise mode (N, sigma, K0) at desk scale.
    static GenConfig defaults(GeneratorKind g, NoiseMode m);
};

void to_json(nlohmann::json& j, const GenConfig& c);
void from_json(const nlohmann::json& j, GenConfig& c);

struct Dataset {
    GenConfig config;
    Matrix x;        // d_x x N
    Vector t;        // N
    Matrix y;        // d_y x N
    std::vector<std::uint8_t> u_z;
    Matrix latents;  // d_latent x N; zero columns when loaded without latents
    std::vector<Split> split;

    std::size_t size() const { return static_cast<std::size_t>(t.size()); }
    bool has_latents() const { return latents.cols() == t.size() && latents.rows() > 0; }
    IndexList indices(Split s) const;
};

/// A factual observation with its ground-truth counterfactual under t_prime.
struct CfTuple {
    Vector x;
    double t = 0.0;
    Vector y;
    double t_prime = 0.0;
    Vector y_prime;
    int u_z = 0;
};

// --- generators -------------------------------------------------------------

Dataset gen_oscillator(const GenConfig& cfg);
Dataset gen_cardio(const GenConfig& cfg);

struct DigitCorpus {
    int rows = 0;
    int cols = 0;
    std::vector<Vector> images;  // pixels in [0, 1], row-major
    std::vector<std::uint8_t> labels;
};

Dataset gen_images(const GenConfig& cfg, const DigitCorpus* source = nullptr);

/// Dispatch on cfg.generator; loads the IDX corpus named in the config if any.
Dataset generate(const GenConfig& cfg);

// --- counterfactual regeneration ---------------------------------------------

/// Outcome for covariates `x`, stored latent draws, class and treatment. Pure and
/// deterministic: the same arguments always give bit-identical output.
Vector outcome(const GenConfig& cfg, const Vector& x, std::span<const double> latent, int u_z, double t);

Vector regenerate_outcome(const Dataset& ds, std::size_t index, double t);
CfTuple regen_counterfactual(const Dataset& ds, std::size_t index, double t_prime);

/// Re-draws the latent components that only act on the outcome window, keeping
/// everything that determines the covariates.
void redraw_outcome_noise(const GenConfig& cfg, std::span<double> latent, Rng& rng);

/// P(U_Z = k | x) implied by the generator for a sample's latents.
Vector class_prior(const GenConfig& cfg, std::span<const double> latent);

struct TreatmentRange {
    double lo = 0.0;
    double hi = 1.0;
};
/// Support of the treatment marginal; counterfactual treatments are drawn from it.
TreatmentRange treatment_range(const GenConfig& cfg);

std::size_t latent_dim(const GenConfig& cfg);
std::size_t covariate_dim(const GenConfig& cfg);
std::size_t outcome_dim(const GenConfig& cfg);

// --- oscillator pieces -------------------------------------------------------

inline constexpr int kCovariateSteps = 20;  // t = 0..19
inline constexpr int kOutcomeSteps = 21;    // t = 20..40
inline constexpr double kTreatmentTime = 20.0;
inline constexpr double kResponseTimeConstant = 3.0;

/// Linear ramp from 0 at treatment time to 1 three steps later.
double treatment_ramp(double time);
/// Offsets (channel 0, channel 1) applied to the outcome for class u_z.
std::array<double, 2> oscillator_offsets(int u_z, double t, double time);

// --- cardiovascular pieces ---------------------------------------------------

/// Treatment-effect modifier driven by the initial arterial pressure.
double fluid_confounding(double p_a0);
/// I_external(time) with class factor (1 + 2 u_z + noise).
double fluid_rate(double time, int u_z, double t, double p_a0, double noise);

// --- image pieces -------------------------------------------------------------

/// Multinomial class probabilities given the digit label and correlation rho.
Vector class_probabilities(int label, int k, double rho);

struct GlyphJitter {
    double thickness = 1.2;  // stroke width in pixels at size 14
    double scale = 1.0;
    double dx = 0.0;
    double dy = 0.0;
};
/// Seven-segment rendering of `digit` into a size x size image in [0, 1].
Vector render_glyph(int digit, int size, const GlyphJitter& jitter);
/// Bilinear rotation about the image centre, counter-clockwise in degrees.
Vector rotate_image(const Vector& img, int size, double degrees);
/// 5x5 Gaussian blur with zero padding.
Vector gaussian_blur(const Vector& img, int size, double sigma);
/// Fully saturated colour for class k out of k0 (hues equally spaced).
std::array<double, 3> class_color(int k, int k0);
double image_treatment(double mean_pixel_255, double u);

DigitCorpus parse_idx(std::span<const std::uint8_t> image_bytes, std::span<const std::uint8_t> label_bytes);
DigitCorpus read_idx(const std::filesystem::path& images, const std::filesystem::path& labels);

// --- persistence ---------------------------------------------------------------

void save_dataset(const Dataset& ds, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir, bool with_latents = true);

}  // namespace cfqp::data
