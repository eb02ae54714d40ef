#pragma once

#include "cfqp/baselines.hpp"
#include "cfqp/datagen.hpp"
#include "cfqp/model.hpp"
#include "cfqp/oracle.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace cfqp::exp {

enum class Method { cfqp, deep_ite, sc };
enum class Metric { cf_mse, pehe, ssim };

std::string to_string(Method m);
std::string to_string(Metric m);
Method parse_method(const std::string& s);
Metric parse_metric(const std::string& s);

struct ExperimentConfig {
    data::GenConfig gen;
    model::CfqpConfig cfqp;
    baselines::ScConfig sc;
    std::vector<Method> methods{Method::cfqp, Method::deep_ite, Method::sc};
    std::vector<Metric> metrics{Metric::cf_mse};
    std::string out_dir = "results";
    int folds = 5;
    int threads = 1;
    std::vector<int> k_range{1, 2, 3, 4, 5};
    std::vector<double> rhos{0.0, 0.5, 1.0};
    double pehe_t1 = 0.5;
    double pehe_t2 = 0.8;
    oracle::BoundCheckOptions oracle;
    bool save_models = true;
    // Wall-clock columns are zero unless enabled, so repeated runs write identical files.
    bool record_timing = false;

    /// Dataset sizes, noise level, K and training schedule for one benchmark.
    static ExperimentConfig defaults(data::GeneratorKind g, data::NoiseMode m);
    void validate() const;

    /// Seed shared by data generation and training in fold f.
    std::uint64_t fold_seed(int f) const { return gen.seed + static_cast<std::uint64_t>(f); }
};

nlohmann::json to_json(const ExperimentConfig& c);
/// Starts from the defaults of the generator and noise mode named in `j`
/// ("dataset" and "noise_mode"), then applies every other key as an override.
ExperimentConfig config_from_json(const nlohmann::json& j);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Git blob hash of the canonical (sorted, compact) JSON of the config.
std::string config_hash(const ExperimentConfig& c);

/// Test-split counterfactual tuples in features x samples layout. Treatments
/// t' are drawn uniformly over the treatment support from the fold seed.
struct CfBatch {
    Matrix x;
    Vector t;
    Matrix y;
    Vector t_prime;
    Matrix y_prime;
    std::vector<int> u_z;
};
CfBatch counterfactual_batch(const data::Dataset& ds, std::uint64_t seed);

model::Samples take(const data::Dataset& ds, data::Split split);

struct FoldResult {
    int fold = 0;
    std::uint64_t seed = 0;
    std::string status = "ok";
    std::map<std::string, std::map<std::string, double>> values;  // method -> metric -> value
    std::map<std::string, double> wall_s;                          // method -> seconds
    nlohmann::json detail;                                         // extra per-fold information
    bool ok() const { return status == "ok"; }
};

struct Row {
    std::string dataset;
    std::string noise;
    std::string method;
    std::string metric;
    double mean = 0.0;
    double std = 0.0;
    int folds = 0;
    std::uint64_t seed = 0;
    std::string config_hash;
    double wall_s = 0.0;
    std::vector<double> values;
};

struct ResultsTable {
    std::vector<Row> rows;
    std::vector<FoldResult> folds;
    nlohmann::json extra;

    const Row* find(const std::string& method, const std::string& metric) const;
};

inline constexpr const char* kCsvHeader = "dataset,noise,method,metric,mean,std,folds,seed,config_hash,wall_s";
std::string to_csv(const ResultsTable& t);
nlohmann::json to_json(const ResultsTable& t);
/// Writes <stem>.csv and <stem>.json into cfg.out_dir.
void write_results(const ResultsTable& t, const ExperimentConfig& cfg, const std::string& stem);

/// Sample mean and (n - 1) standard deviation; 0 for a single value.
std::pair<double, double> mean_std(const std::vector<double>& v);

/// Runs `body(f)` for every fold on up to `threads` workers, results in fold order.
std::vector<FoldResult> for_each_fold(int folds, int threads, const std::function<FoldResult(int)>& body);

/// One fold of the benchmark: generate, train every method, score the test
/// counterfactuals.
FoldResult run_fold(const ExperimentConfig& cfg, int fold);

ResultsTable run(const ExperimentConfig& cfg);

struct SweepKFold {
    int best_k = 0;
    std::vector<double> val_mse;
    std::vector<double> val_mse_full;
    std::vector<double> cf_mse;
};

/// Per fold: select_k over cfg.k_range from a shared initial model.
ResultsTable sweep_k(const ExperimentConfig& cfg, std::vector<SweepKFold>* detail = nullptr);

/// Image generator only: the benchmark repeated at every cfg.rhos value.
/// Metric names carry the value, e.g. "cf_mse@rho=0.5".
ResultsTable sweep_rho(const ExperimentConfig& cfg);

oracle::BoundReport oracle_check(const ExperimentConfig& cfg);

}  // namespace cfqp::exp
