#pragma once

#include "cfqp/common.hpp"
#include "cfqp/rng.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace cfqp::nn {

struct Layer {
    Matrix w;  // out x in
    Vector b;  // out
};

/// Fully connected regressor: ReLU on hidden layers, identity on the output.
struct Mlp {
    std::vector<Layer> layers;
    std::uint64_t seed = 0;

    /// He-uniform weights and zero biases drawn from `seed`.
    static Mlp create(const std::vector<int>& sizes, std::uint64_t seed);

    std::vector<int> sizes() const;
    int d_in() const { return layers.empty() ? 0 : static_cast<int>(layers.front().w.cols()); }
    int d_out() const { return layers.empty() ? 0 : static_cast<int>(layers.back().w.rows()); }
    std::size_t num_params() const;
};

/// Same shapes as an Mlp, holding dL/dW and dL/db.
using Gradients = std::vector<Layer>;

Gradients zeros_like(const Mlp& m);

/// Columns of `x` are samples; returns d_out x batch.
Matrix forward(const Mlp& m, const Matrix& x);

/// Mean of the squared error over batch and output dimensions. When `grad` is
/// non-null it receives the exact gradient of that loss.
double mse_and_grad(const Mlp& m, const Matrix& x, const Matrix& y, Gradients* grad);

struct AdamState {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    long step = 0;
    Gradients m;
    Gradients v;

    AdamState() = default;
    AdamState(const Mlp& net, double learning_rate);
    void reset();
};

void adam_step(Mlp& m, const Gradients& g, AdamState& s);

struct TrainConfig {
    int epochs = 1;
    int batch_size = 128;
    std::uint64_t seed = 0;
    double weight_decay = 0.0;  // decoupled, off unless configured
};

/// Shuffled mini-batch Adam. Returns the per-epoch mean training loss (the
/// sample-weighted mean of batch losses seen during that epoch).
std::vector<double> train_epochs(Mlp& m, AdamState& adam, const Matrix& x, const Matrix& y,
                                 const TrainConfig& cfg);

enum class InputScaling { none, center, zscore };
std::string to_string(InputScaling m);
InputScaling parse_input_scaling(const std::string& s);

/// Affine input/output normalisation shared by a family of base-models.
/// Outputs are centred per feature and divided by one global scale so the
/// relative geometry of residuals is preserved. Inputs are left alone by
/// default: z-scoring near-constant covariates inflates their noise to unit
/// scale, which small-sample training then memorises.
struct Standardizer {
    Vector in_mean, in_scale;
    Vector out_mean;
    double out_scale = 1.0;

    static Standardizer fit(const Matrix& inputs, const Matrix& outputs, InputScaling mode = InputScaling::none,
                            double floor = 1e-6);
    static Standardizer identity(int d_in, int d_out);

    Matrix input(const Matrix& raw) const;
    Matrix output(const Matrix& raw) const;
    Matrix output_inverse(const Matrix& scaled) const;
};

void to_json(nlohmann::json& j, const Standardizer& s);
void from_json(const nlohmann::json& j, Standardizer& s);

/// JSON header plus a little-endian float32 parameter blob (weights
/// column-major, then bias, per layer).
void save_mlp(const Mlp& m, long adam_step, const std::filesystem::path& json_path,
              const std::filesystem::path& blob_path);
Mlp load_mlp(const std::filesystem::path& json_path, const std::filesystem::path& blob_path);

}  // namespace cfqp::nn
