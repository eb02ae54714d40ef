#include "cfqp/model.hpp"

#include "cfqp/clustering.hpp"
#include "cfqp/io.hpp"
#include "cfqp/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace cfqp::model {

using nlohmann::json;

void CfqpConfig::validate() const {
    if (k < 1) throw ConfigError("k must be at least 1");
    if (delta < 1) throw ConfigError("delta must be at least 1");
    if (epochs0 < 0 || epochs1 < 0) throw ConfigError("epochs must be non-negative");
    if (!(lr > 0.0)) throw ConfigError("lr must be positive");
    if (batch_size < 1) throw ConfigError("batch_size must be positive");
    if (weight_decay < 0.0) throw ConfigError("weight_decay must be non-negative");
    if (kmeans_restarts < 1 || kmeans_iters < 1) throw ConfigError("k-means restarts/iterations must be positive");
    for (int h : hidden)
        if (h < 1) throw ConfigError("hidden layer widths must be positive");
    if (treatment_degree < 0) throw ConfigError("treatment_degree must be non-negative");
}

void to_json(json& j, const CfqpConfig& c) {
    j = json{{"k", c.k},
             {"delta", c.delta},
             {"epochs0", c.epochs0},
             {"epochs1", c.epochs1},
             {"lr", c.lr},
             {"batch_size", c.batch_size},
             {"clusterer", c.clusterer == Clusterer::kmeans ? "kmeans" : "gmm"},
             {"seed", c.seed},
             {"hidden", c.hidden},
             {"input_scaling", nn::to_string(c.input_scaling)},
             {"treatment_degree", c.treatment_degree},
             {"reset_adam", c.reset_adam},
             {"early_stop", c.early_stop},
             {"weight_decay", c.weight_decay},
             {"kmeans_restarts", c.kmeans_restarts},
             {"kmeans_iters", c.kmeans_iters}};
}

void from_json(const json& j, CfqpConfig& c) {
    const CfqpConfig d;
    c.k = j.value("k", d.k);
    c.delta = j.value("delta", d.delta);
    c.epochs0 = j.value("epochs0", d.epochs0);
    c.epochs1 = j.value("epochs1", d.epochs1);
    c.lr = j.value("lr", d.lr);
    c.batch_size = j.value("batch_size", d.batch_size);
    const auto clusterer = j.value("clusterer", std::string("kmeans"));
    if (clusterer == "kmeans") c.clusterer = Clusterer::kmeans;
    else if (clusterer == "gmm") c.clusterer = Clusterer::gmm;
    else throw ConfigError("unknown clusterer '" + clusterer + "'");
    c.seed = j.value("seed", d.seed);
    c.hidden = j.value("hidden", d.hidden);
    c.treatment_degree = j.value("treatment_degree", d.treatment_degree);
    c.input_scaling = nn::parse_input_scaling(j.value("input_scaling", nn::to_string(d.input_scaling)));
    c.reset_adam = j.value("reset_adam", d.reset_adam);
    c.early_stop = j.value("early_stop", d.early_stop);
    c.weight_decay = j.value("weight_decay", d.weight_decay);
    c.kmeans_restarts = j.value("kmeans_restarts", d.kmeans_restarts);
    c.kmeans_iters = j.value("kmeans_iters", d.kmeans_iters);
}

Matrix make_inputs(const Matrix& x, const Vector& t, int degree) {
    require_shape(x.cols() == t.size(), "make_inputs: covariate and treatment counts differ");
    const Eigen::Index d = x.rows();
    Matrix in(d + 1 + degree * (d + 1) - (degree > 0 ? 1 : 0), x.cols());
    in.topRows(d) = x;
    in.row(d) = t.transpose();
    Eigen::RowVectorXd power = t.transpose();
    Eigen::Index row = d + 1;
    for (int p = 1; p <= degree; ++p) {
        in.middleRows(row, d) = x * power.asDiagonal();
        row += d;
        if (p > 1) in.row(row++) = power;
        power = power.cwiseProduct(t.transpose());
    }
    return in;
}

namespace {

Matrix predict_raw(const nn::Standardizer& s, const nn::Mlp& net, const Matrix& x, const Vector& t, int degree) {
    return s.output_inverse(nn::forward(net, s.input(make_inputs(x, t, degree))));
}

std::vector<int> layer_sizes(int d_in, int d_out, const std::vector<int>& hidden) {
    std::vector<int> sizes{d_in};
    sizes.insert(sizes.end(), hidden.begin(), hidden.end());
    sizes.push_back(d_out);
    return sizes;
}

void check_samples(const Samples& s, const char* who) {
    if (s.size() == 0) throw ConfigError(std::string(who) + ": no samples");
    require_shape(s.x.cols() == s.t.size() && s.y.cols() == s.t.size(),
                  std::string(who) + ": x, t, y sample counts differ");
}

}  // namespace

Matrix InitModel::predict(const Matrix& x, const Vector& t) const { return predict_raw(scaler, net, x, t, treatment_degree); }

Matrix CfqpModel::predict(int k, const Matrix& x, const Vector& t) const {
    if (k < 0 || k >= this->k()) throw ConfigError("predict: cluster index out of range");
    return predict_raw(scaler, models[static_cast<std::size_t>(k)], x, t, config.treatment_degree);
}

Matrix CfqpModel::predict_all(const Eigen::Ref<const Vector>& x, double t) const {
    const Matrix xi = x;
    const Vector ti = Vector::Constant(1, t);
    Matrix out(scaler.out_mean.size(), k());
    for (int j = 0; j < k(); ++j) out.col(j) = predict(j, xi, ti);
    return out;
}

int CfqpModel::infer_cluster(const Eigen::Ref<const Vector>& x, double t, const Eigen::Ref<const Vector>& y) const {
    return cluster::assign_by_residual(y, predict_all(x, t));
}

std::vector<int> CfqpModel::infer_clusters(const Matrix& x, const Vector& t, const Matrix& y) const {
    require_shape(x.cols() == t.size() && y.cols() == t.size(), "infer_clusters: sample counts differ");
    const auto n = static_cast<std::size_t>(t.size());
    std::vector<int> best(n, 0);
    std::vector<double> best_d(n, std::numeric_limits<double>::infinity());
    for (int j = 0; j < k(); ++j) {
        const Vector d = (predict(j, x, t) - y).colwise().squaredNorm().transpose();
        for (std::size_t i = 0; i < n; ++i)
            if (d[static_cast<Eigen::Index>(i)] < best_d[i]) {
                best_d[i] = d[static_cast<Eigen::Index>(i)];
                best[i] = j;
            }
    }
    return best;
}

Matrix CfqpModel::predict_cf(const Matrix& x, const Vector& t, const Matrix& y, const Vector& t_prime) const {
    require_shape(t_prime.size() == t.size(), "predict_cf: t_prime count differs");
    const auto clusters = infer_clusters(x, t, y);
    Matrix out(y.rows(), y.cols());
    for (int j = 0; j < k(); ++j) {
        std::vector<Eigen::Index> idx;
        for (std::size_t i = 0; i < clusters.size(); ++i)
            if (clusters[i] == j) idx.push_back(static_cast<Eigen::Index>(i));
        if (idx.empty()) continue;
        const Matrix pred = predict(j, x(Eigen::all, idx), t_prime(idx));
        for (std::size_t m = 0; m < idx.size(); ++m) out.col(idx[m]) = pred.col(static_cast<Eigen::Index>(m));
    }
    return out;
}

Matrix CfqpModel::reconstruct(const Matrix& x, const Vector& t, const Matrix& y) const {
    return predict_cf(x, t, y, t);
}

InitModel train_init(const Samples& data, const CfqpConfig& cfg) {
    cfg.validate();
    check_samples(data, "train_init");
    InitModel m0;
    const Matrix inputs = make_inputs(data.x, data.t, cfg.treatment_degree);
    m0.treatment_degree = cfg.treatment_degree;
    m0.scaler = nn::Standardizer::fit(inputs, data.y, cfg.input_scaling);
    m0.net = nn::Mlp::create(layer_sizes(static_cast<int>(inputs.rows()), static_cast<int>(data.y.rows()), cfg.hidden),
                             derive_seed(cfg.seed, streams::model_init));
    m0.adam = nn::AdamState(m0.net, cfg.lr);
    nn::TrainConfig tc;
    tc.epochs = cfg.epochs0;
    tc.batch_size = cfg.batch_size;
    tc.seed = derive_seed(cfg.seed, streams::shuffle, 0);
    tc.weight_decay = cfg.weight_decay;
    m0.loss_trace = nn::train_epochs(m0.net, m0.adam, m0.scaler.input(inputs), m0.scaler.output(data.y), tc);
    return m0;
}

std::vector<int> initial_cluster(const Samples& data, const InitModel& m0, const CfqpConfig& cfg) {
    cfg.validate();
    check_samples(data, "initial_cluster");
    if (cfg.k == 1) return std::vector<int>(data.size(), 0);
    const Matrix residuals = data.y - m0.predict(data.x, data.t);
    if (cfg.clusterer == Clusterer::gmm) {
        cluster::GmmOptions opts;
        opts.seed = derive_seed(cfg.seed, streams::clustering);
        return cluster::gmm_fit(residuals, cfg.k, opts).hard_assignment();
    }
    cluster::KmeansOptions opts;
    opts.restarts = cfg.kmeans_restarts;
    opts.iters = cfg.kmeans_iters;
    opts.seed = derive_seed(cfg.seed, streams::clustering);
    return cluster::kmeans_fit(residuals, cfg.k, opts).assignment;
}

CfqpModel em_train(const Samples& data, const InitModel& m0, const CfqpConfig& cfg, std::vector<int> assignment) {
    cfg.validate();
    check_samples(data, "em_train");
    if (assignment.size() != data.size()) throw ShapeError("em_train: assignment length differs from sample count");
    for (int a : assignment)
        if (a < 0 || a >= cfg.k) throw ConfigError("em_train: assignment entry out of range");
    if (m0.treatment_degree != cfg.treatment_degree)
        throw ConfigError("em_train: initial model was built with a different treatment_degree");

    CfqpModel model;
    model.config = cfg;
    model.scaler = m0.scaler;
    model.models.assign(static_cast<std::size_t>(cfg.k), m0.net);
    std::vector<nn::AdamState> adams(static_cast<std::size_t>(cfg.k), m0.adam);
    if (cfg.reset_adam)
        for (auto& a : adams) a.reset();

    const Matrix inputs = model.scaler.input(make_inputs(data.x, data.t, cfg.treatment_degree));
    const Matrix targets = model.scaler.output(data.y);
    const auto n = data.size();

    const int rounds = (cfg.epochs1 + cfg.delta - 1) / cfg.delta;
    for (int r = 0; r < rounds; ++r) {
        const int epochs = std::min(cfg.delta, cfg.epochs1 - r * cfg.delta);
        std::vector<double> losses(static_cast<std::size_t>(cfg.k), std::nan(""));
        for (int k = 0; k < cfg.k; ++k) {
            std::vector<Eigen::Index> idx;
            for (std::size_t i = 0; i < n; ++i)
                if (assignment[i] == k) idx.push_back(static_cast<Eigen::Index>(i));
            // An empty cluster keeps its model frozen for this round.
            if (idx.empty()) continue;
            auto& adam = adams[static_cast<std::size_t>(k)];
            if (cfg.reset_adam) adam.reset();
            nn::TrainConfig tc;
            tc.epochs = epochs;
            tc.batch_size = cfg.batch_size;
            tc.seed = derive_seed(cfg.seed, streams::shuffle,
                                  1 + static_cast<std::uint64_t>(r) * 4096 + static_cast<std::uint64_t>(k));
            tc.weight_decay = cfg.weight_decay;
            const auto trace = nn::train_epochs(model.models[static_cast<std::size_t>(k)], adam, inputs(Eigen::all, idx),
                                                targets(Eigen::all, idx), tc);
            if (!trace.empty()) losses[static_cast<std::size_t>(k)] = trace.back();
        }
        model.round_losses.push_back(std::move(losses));

        // Reassignment in the original outcome units.
        Matrix dist(cfg.k, static_cast<Eigen::Index>(n));
        for (int k = 0; k < cfg.k; ++k)
            dist.row(k) = (model.predict(k, data.x, data.t) - data.y).colwise().squaredNorm();
        int changes = 0;
        double before = 0.0, after = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const auto col = static_cast<Eigen::Index>(i);
            before += dist(assignment[i], col);
            Eigen::Index best = 0;
            for (Eigen::Index k = 1; k < cfg.k; ++k)
                if (dist(k, col) < dist(best, col)) best = k;
            after += dist(best, col);
            if (static_cast<int>(best) != assignment[i]) ++changes;
            assignment[i] = static_cast<int>(best);
        }
        model.change_counts.push_back(changes);
        model.residual_before.push_back(before);
        model.residual_after.push_back(after);
        if (changes == 0 && model.converged_round < 0) model.converged_round = r;
        if (changes == 0 && cfg.early_stop) break;
    }
    model.assignment = std::move(assignment);
    return model;
}

CfqpModel fit(const Samples& data, const CfqpConfig& cfg) {
    const auto m0 = train_init(data, cfg);
    return em_train(data, m0, cfg, initial_cluster(data, m0, cfg));
}

double reconstruction_mse(const CfqpModel& model, const Samples& data) {
    check_samples(data, "reconstruction_mse");
    const Matrix rec = model.reconstruct(data.x, data.t, data.y);
    return (rec - data.y).squaredNorm() / static_cast<double>(rec.size());
}

double crossfit_reconstruction_mse(const CfqpModel& model, const Samples& data) {
    check_samples(data, "crossfit_reconstruction_mse");
    const Eigen::Index d = data.y.rows();
    if (d < 2) return reconstruction_mse(model, data);
    std::vector<Matrix> sq;
    for (int j = 0; j < model.k(); ++j) sq.push_back((model.predict(j, data.x, data.t) - data.y).cwiseAbs2());
    double total = 0.0;
    for (Eigen::Index i = 0; i < data.y.cols(); ++i) {
        for (Eigen::Index half = 0; half < 2; ++half) {
            int best = 0;
            double best_d = std::numeric_limits<double>::infinity();
            for (int j = 0; j < model.k(); ++j) {
                double dist = 0.0;
                for (Eigen::Index r = half; r < d; r += 2) dist += sq[static_cast<std::size_t>(j)](r, i);
                if (dist < best_d) {
                    best_d = dist;
                    best = j;
                }
            }
            for (Eigen::Index r = 1 - half; r < d; r += 2) total += sq[static_cast<std::size_t>(best)](r, i);
        }
    }
    return total / static_cast<double>(data.y.size());
}

SelectKResult select_k(const Samples& train, const Samples& val, const CfqpConfig& cfg, const std::vector<int>& ks) {
    return select_k(train, val, cfg, ks, train_init(train, cfg));
}

SelectKResult select_k(const Samples& train, const Samples& val, const CfqpConfig& cfg, const std::vector<int>& ks,
                       const InitModel& m0) {
    if (ks.empty()) throw ConfigError("select_k: empty K range");
    SelectKResult res;
    double best = std::numeric_limits<double>::infinity();
    for (int k : ks) {
        CfqpConfig c = cfg;
        c.k = k;
        auto model = em_train(train, m0, c, initial_cluster(train, m0, c));
        const double mse = crossfit_reconstruction_mse(model, val);
        res.ks.push_back(k);
        res.val_mse.push_back(mse);
        res.val_mse_full.push_back(reconstruction_mse(model, val));
        if (mse < best) {
            best = mse;
            res.best_k = k;
        }
        res.models.push_back(std::move(model));
    }
    return res;
}

void save_model(const CfqpModel& m, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    json meta{{"format", "cfqp-model"},
              {"version", 1},
              {"config", m.config},
              {"k", m.k()},
              {"scaler", m.scaler},
              {"assignment", m.assignment},
              {"change_counts", m.change_counts},
              {"residual_before", m.residual_before},
              {"residual_after", m.residual_after},
              {"converged_round", m.converged_round}};
    for (int k = 0; k < m.k(); ++k) {
        const auto stem = "model_" + std::to_string(k);
        nn::save_mlp(m.models[static_cast<std::size_t>(k)], 0, dir / (stem + ".json"), dir / (stem + ".f32"));
    }
    io::write_text(dir / "cfqp.json", meta.dump(2) + "\n");
}

CfqpModel load_model(const std::filesystem::path& dir) {
    json meta;
    try {
        meta = json::parse(io::read_text(dir / "cfqp.json"));
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("model metadata: ") + e.what(), e.byte);
    }
    if (meta.value("format", std::string()) != "cfqp-model") throw ParseError("not a cfqp model directory", 0);
    CfqpModel m;
    m.config = meta.at("config").get<CfqpConfig>();
    m.scaler = meta.at("scaler").get<nn::Standardizer>();
    m.assignment = meta.value("assignment", std::vector<int>{});
    m.change_counts = meta.value("change_counts", std::vector<int>{});
    m.residual_before = meta.value("residual_before", std::vector<double>{});
    m.residual_after = meta.value("residual_after", std::vector<double>{});
    m.converged_round = meta.value("converged_round", -1);
    const int k = meta.at("k").get<int>();
    for (int j = 0; j < k; ++j) {
        const auto stem = "model_" + std::to_string(j);
        m.models.push_back(nn::load_mlp(dir / (stem + ".json"), dir / (stem + ".f32")));
        if (m.models.back().d_in() != m.scaler.in_mean.size() || m.models.back().d_out() != m.scaler.out_mean.size())
            throw ParseError("model " + std::to_string(j) + " does not match the stored scaler", 0);
    }
    return m;
}

}  // namespace cfqp::model
