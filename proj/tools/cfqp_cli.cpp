#include "cfqp/experiment.hpp"
#include "cfqp/io.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

namespace {

using json = nlohmann::json;
using namespace cfqp;

constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

struct CommonFlags {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::optional<int> folds;
    std::optional<int> threads;
};

void add_common(CLI::App* sub, CommonFlags& f) {
    sub->add_option("--config", f.config, "experiment config (JSON); oscillator defaults when omitted");
    sub->add_option("--seed", f.seed, "base seed; fold f uses seed + f");
    sub->add_option("--out", f.out, "output directory");
    sub->add_option("--folds", f.folds, "number of folds")->check(CLI::PositiveNumber);
    sub->add_option("--threads", f.threads, "folds run concurrently on this many threads")->check(CLI::PositiveNumber);
}

exp::ExperimentConfig resolve(const CommonFlags& f) {
    auto cfg = f.config.empty()
                   ? exp::ExperimentConfig::defaults(data::GeneratorKind::oscillator, data::NoiseMode::additive)
                   : exp::load_config(f.config);
    if (f.seed) cfg.gen.seed = *f.seed;
    if (!f.out.empty()) cfg.out_dir = f.out;
    if (f.folds) cfg.folds = *f.folds;
    if (f.threads) cfg.threads = *f.threads;
    cfg.validate();
    return cfg;
}

void report_failed_folds(const exp::ResultsTable& t) {
    for (const auto& f : t.folds)
        if (!f.ok()) std::cerr << "fold " << f.fold << ": " << f.status << "\n";
}

Vector read_vector(const json& j, const char* key) {
    if (!j.contains(key)) throw ConfigError(std::string("predict: input lacks '") + key + "'");
    const auto v = j.at(key).get<std::vector<double>>();
    return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

json predict_one(const model::CfqpModel& m, const json& q) {
    const Vector x = read_vector(q, "x");
    const Vector y = read_vector(q, "y");
    const double t = q.at("t").get<double>();
    const double t_prime = q.at("t_prime").get<double>();
    const int k = m.infer_cluster(x, t, y);
    const Matrix pred = m.predict(k, Matrix(x), Vector::Constant(1, t_prime));
    return {{"cluster", k}, {"y_prime", std::vector<double>(pred.data(), pred.data() + pred.size())}};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Counterfactual query prediction: data generation, training, evaluation and sweeps"};
    app.require_subcommand(1);

    CommonFlags gen_f, run_f, k_f, rho_f, oracle_f;
    auto* gen = app.add_subcommand("generate", "generate and save the dataset described by the config");
    add_common(gen, gen_f);
    auto* run = app.add_subcommand("run", "train and evaluate every configured method over the folds");
    add_common(run, run_f);
    auto* sweep_k = app.add_subcommand("sweep-k", "validation and counterfactual error for each K in k_range");
    add_common(sweep_k, k_f);
    std::vector<int> k_values;
    sweep_k->add_option("--k", k_values, "override k_range");
    auto* sweep_rho = app.add_subcommand("sweep-rho", "image benchmark at each correlation strength in rhos");
    add_common(sweep_rho, rho_f);
    std::vector<double> rho_values;
    sweep_rho->add_option("--rho", rho_values, "override rhos");
    auto* oracle_cmd = app.add_subcommand("oracle-check", "Monte-Carlo W1 bound check at one covariate value");
    add_common(oracle_cmd, oracle_f);
    std::optional<std::size_t> oracle_n;
    oracle_cmd->add_option("--n", oracle_n, "samples per (x, t) for the mixture fits");

    auto* predict = app.add_subcommand("predict", "counterfactual query against a saved model");
    std::string model_dir, input_path, out_path;
    predict->add_option("--model", model_dir, "model directory written by run")->required();
    predict->add_option("--input", input_path,
                        "JSON object {x, t, y, t_prime} or an array of them")
        ->required();
    predict->add_option("--out", out_path, "write the answer here instead of stdout");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitConfig;
    }

    try {
        if (*gen) {
            const auto cfg = resolve(gen_f);
            const auto ds = data::generate(cfg.gen);
            const auto dir = std::filesystem::path(cfg.out_dir) / "dataset";
            data::save_dataset(ds, dir);
            std::cout << "wrote " << ds.size() << " samples to " << dir.string() << "\n";
        } else if (*run) {
            const auto cfg = resolve(run_f);
            const auto table = exp::run(cfg);
            report_failed_folds(table);
            exp::write_results(table, cfg, "results");
            std::cout << exp::to_csv(table);
        } else if (*sweep_k) {
            auto cfg = resolve(k_f);
            if (!k_values.empty()) cfg.k_range = k_values;
            cfg.validate();
            const auto table = exp::sweep_k(cfg);
            report_failed_folds(table);
            exp::write_results(table, cfg, "sweep_k");
            std::cout << exp::to_csv(table);
        } else if (*sweep_rho) {
            auto cfg = resolve(rho_f);
            if (!rho_values.empty()) cfg.rhos = rho_values;
            cfg.validate();
            const auto table = exp::sweep_rho(cfg);
            report_failed_folds(table);
            exp::write_results(table, cfg, "sweep_rho");
            std::cout << exp::to_csv(table);
        } else if (*oracle_cmd) {
            auto cfg = resolve(oracle_f);
            if (oracle_n) cfg.oracle.n_samples = *oracle_n;
            const auto report = exp::oracle_check(cfg);
            const auto j = oracle::to_json(report);
            std::filesystem::create_directories(cfg.out_dir);
            io::write_text(std::filesystem::path(cfg.out_dir) / "oracle_report.json", j.dump(2) + "\n");
            std::cout << j.dump(2) << "\n";
            if (!report.pass) {
                std::cerr << "bound check failed: e_w1 exceeds delta_hat plus the interval margin\n";
                return kExitRuntime;
            }
        } else if (*predict) {
            const auto m = model::load_model(model_dir);
            json input;
            try {
                input = json::parse(io::read_text(input_path));
            } catch (const json::parse_error& e) {
                throw ConfigError(std::string("predict input: ") + e.what());
            }
            json answer;
            try {
                if (input.is_array()) {
                    answer = json::array();
                    for (const auto& q : input) answer.push_back(predict_one(m, q));
                } else {
                    answer = predict_one(m, input);
                }
            } catch (const json::exception& e) {
                throw ConfigError(std::string("predict input: ") + e.what());
            }
            if (out_path.empty()) std::cout << answer.dump() << "\n";
            else io::write_text(out_path, answer.dump() + "\n");
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return 0;
}
