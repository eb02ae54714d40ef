#pragma once

#include "cfqp/common.hpp"
#include "cfqp/nn.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace cfqp::model {

enum class Clusterer { kmeans, gmm };

struct CfqpConfig {
    int k = 3;
    int delta = 20;  // epochs between reassignment passes
    int epochs0 = 500;
    int epochs1 = 500;
    double lr = 1e-3;
    int batch_size = 128;
    Clusterer clusterer = Clusterer::kmeans;
    std::uint64_t seed = 1;
    std::vector<int> hidden{64};
    // Inputs are covariates and treatment when 0; degree d also appends t^p * x
    // for p = 1..d and the powers t^2..t^d.
    int treatment_degree = 0;
    nn::InputScaling input_scaling = nn::InputScaling::none;
    bool reset_adam = false;  // fresh optimiser state at every EM round
    bool early_stop = false;  // stop once a reassignment changes nothing
    double weight_decay = 0.0;
    int kmeans_restarts = 10;
    int kmeans_iters = 100;

    void validate() const;
};

void to_json(nlohmann::json& j, const CfqpConfig& c);
void from_json(const nlohmann::json& j, CfqpConfig& c);

/// Columns of the network input: covariates stacked over the scalar treatment,
/// followed by treatment-covariate interactions up to `degree`.
Matrix make_inputs(const Matrix& x, const Vector& t, int degree = 0);

/// Training data in features x samples layout.
struct Samples {
    Matrix x;
    Vector t;
    Matrix y;
    std::size_t size() const { return static_cast<std::size_t>(t.size()); }
};

/// m0: one regressor of the conditional mean response fitted on all samples.
struct InitModel {
    nn::Standardizer scaler;
    nn::Mlp net;
    nn::AdamState adam;
    std::vector<double> loss_trace;
    int treatment_degree = 0;

    Matrix predict(const Matrix& x, const Vector& t) const;
};

struct CfqpModel {
    CfqpConfig config;
    nn::Standardizer scaler;
    std::vector<nn::Mlp> models;
    std::vector<int> assignment;             // final train-set clusters
    std::vector<int> change_counts;          // per reassignment pass
    std::vector<double> residual_before;     // sum_i ||y_i - m_{a_i}||^2 before each pass
    std::vector<double> residual_after;      // same sum after the pass
    std::vector<std::vector<double>> round_losses;  // per round, per cluster: mean epoch loss trace
    int converged_round = -1;                // first pass that changed no sample

    int k() const { return static_cast<int>(models.size()); }

    /// m_k(x, t) for every column.
    Matrix predict(int k, const Matrix& x, const Vector& t) const;
    /// Stacked predictions of every model for a single input: d_y x K.
    Matrix predict_all(const Eigen::Ref<const Vector>& x, double t) const;

    int infer_cluster(const Eigen::Ref<const Vector>& x, double t, const Eigen::Ref<const Vector>& y) const;
    std::vector<int> infer_clusters(const Matrix& x, const Vector& t, const Matrix& y) const;

    /// m_k(x, t') with k inferred from the factual (x, t, y).
    Matrix predict_cf(const Matrix& x, const Vector& t, const Matrix& y, const Vector& t_prime) const;
    /// Factual reconstruction m_k(x, t) with the inferred k.
    Matrix reconstruct(const Matrix& x, const Vector& t, const Matrix& y) const;
};

InitModel train_init(const Samples& data, const CfqpConfig& cfg);

/// Cluster the residual vectors y - m0(x, t) into cfg.k groups.
std::vector<int> initial_cluster(const Samples& data, const InitModel& m0, const CfqpConfig& cfg);

/// Alternate per-cluster training and reassignment starting from `assignment`.
CfqpModel em_train(const Samples& data, const InitModel& m0, const CfqpConfig& cfg, std::vector<int> assignment);

/// train_init, initial_cluster and em_train in sequence.
CfqpModel fit(const Samples& data, const CfqpConfig& cfg);

/// Mean squared factual reconstruction error per output dimension.
double reconstruction_mse(const CfqpModel& model, const Samples& data);

/// Reconstruction error with the cluster inferred from one half of the
/// outcome coordinates (even or odd index) and scored on the other half, both
/// ways round. Unlike reconstruction_mse it does not reward extra models for
/// fitting the same noise they were selected on.
double crossfit_reconstruction_mse(const CfqpModel& model, const Samples& data);

struct SelectKResult {
    int best_k = 1;
    std::vector<int> ks;
    std::vector<double> val_mse;       // cross-fitted; drives the selection
    std::vector<double> val_mse_full;  // plain reconstruction error, reported alongside
    std::vector<CfqpModel> models;
};

/// Trains one model per K from a shared m0 and picks the K with the lowest
/// cross-fitted validation reconstruction error (ties go to the smaller K).
SelectKResult select_k(const Samples& train, const Samples& val, const CfqpConfig& cfg, const std::vector<int>& ks);
SelectKResult select_k(const Samples& train, const Samples& val, const CfqpConfig& cfg, const std::vector<int>& ks,
                       const InitModel& m0);

void save_model(const CfqpModel& m, const std::filesystem::path& dir);
CfqpModel load_model(const std::filesystem::path& dir);

}  // namespace cfqp::model
