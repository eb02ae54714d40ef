#include "cfqp/experiment.hpp"

#include "cfqp/io.hpp"
#include "cfqp/metrics.hpp"
#include "cfqp/rng.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <iomanip>
#include <numeric>
#include <optional>
#include <sstream>
#include <thread>

namespace cfqp::exp {

using json = nlohmann::json;

std::string to_string(Method m) {
    switch (m) {
        case Method::cfqp: return "cfqp";
        case Method::deep_ite: return "deep_ite";
        case Method::sc: return "sc";
    }
    return "?";
}

std::string to_string(Metric m) {
    switch (m) {
        case Metric::cf_mse: return "cf_mse";
        case Metric::pehe: return "pehe";
        case Metric::ssim: return "ssim";
    }
    return "?";
}

Method parse_method(const std::string& s) {
    if (s == "cfqp") return Method::cfqp;
    if (s == "deep_ite") return Method::deep_ite;
    if (s == "sc") return Method::sc;
    throw ConfigError("unknown method '" + s + "'");
}

Metric parse_metric(const std::string& s) {
    if (s == "cf_mse") return Metric::cf_mse;
    if (s == "pehe") return Metric::pehe;
    if (s == "ssim") return Metric::ssim;
    throw ConfigError("unknown metric '" + s + "'");
}

ExperimentConfig ExperimentConfig::defaults(data::GeneratorKind g, data::NoiseMode m) {
    ExperimentConfig c;
    c.gen = data::GenConfig::defaults(g, m);
    c.cfqp.k = c.gen.k0;
    switch (g) {
        case data::GeneratorKind::oscillator:
            c.metrics = {Metric::cf_mse};
            c.k_range = {1, 2, 3, 4, 5};
            break;
        case data::GeneratorKind::cardio:
            c.metrics = {Metric::cf_mse, Metric::pehe};
            c.k_range = {1, 2, 3};
            break;
        case data::GeneratorKind::images:
            c.cfqp.delta = 10;
            c.cfqp.epochs0 = 50;
            c.cfqp.epochs1 = 50;
            // Strong decay keeps the outputs of channels a class never lights
            // near zero, and the smoother m0 leaves residuals that separate by hue.
            c.cfqp.hidden = {128, 128};
            c.cfqp.weight_decay = 1.0;
            c.methods = {Method::cfqp, Method::deep_ite};
            c.metrics = {Metric::cf_mse, Metric::ssim};
            c.k_range = {4, 5, 6, 7, 8};
            break;
    }
    return c;
}

void ExperimentConfig::validate() const {
    gen.validate();
    cfqp.validate();
    if (folds < 1) throw ConfigError("folds must be at least 1");
    if (threads < 1) throw ConfigError("threads must be at least 1");
    if (methods.empty()) throw ConfigError("at least one method is required");
    if (metrics.empty()) throw ConfigError("at least one metric is required");
    if (k_range.empty()) throw ConfigError("k_range must not be empty");
    for (int k : k_range)
        if (k < 1) throw ConfigError("k_range entries must be positive");
    for (double r : rhos)
        if (!(r >= 0.0 && r <= 1.0)) throw ConfigError("rho values must lie in [0, 1]");
    if (!(sc.window > 0.0)) throw ConfigError("sc.window must be positive");
    for (auto m : metrics)
        if (m == Metric::ssim && gen.generator != data::GeneratorKind::images)
            throw ConfigError("ssim is only defined for the image generator");
}

json to_json(const ExperimentConfig& c) {
    json methods = json::array(), metrics = json::array();
    for (auto m : c.methods) methods.push_back(to_string(m));
    for (auto m : c.metrics) metrics.push_back(to_string(m));
    return {{"dataset", c.gen},
            {"cfqp", c.cfqp},
            {"sc", c.sc},
            {"methods", methods},
            {"metrics", metrics},
            {"out_dir", c.out_dir},
            {"folds", c.folds},
            {"threads", c.threads},
            {"k_range", c.k_range},
            {"rhos", c.rhos},
            {"pehe", {{"t1", c.pehe_t1}, {"t2", c.pehe_t2}}},
            {"oracle", c.oracle},
            {"save_models", c.save_models},
            {"record_timing", c.record_timing}};
}

ExperimentConfig config_from_json(const json& j) {
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    try {
        data::GenConfig head;
        if (j.contains("dataset")) head = j.at("dataset").get<data::GenConfig>();
        json merged = to_json(ExperimentConfig::defaults(head.generator, head.noise_mode));
        // Dataset fields fall back to the generator's own defaults, not to another dataset's.
        if (j.contains("dataset")) merged["dataset"] = j.at("dataset");
        json rest = j;
        rest.erase("dataset");
        merged.merge_patch(rest);

        ExperimentConfig c;
        c.gen = merged.at("dataset").get<data::GenConfig>();
        c.cfqp = merged.at("cfqp").get<model::CfqpConfig>();
        c.sc = merged.at("sc").get<baselines::ScConfig>();
        c.methods.clear();
        for (const auto& m : merged.at("methods")) c.methods.push_back(parse_method(m.get<std::string>()));
        c.metrics.clear();
        for (const auto& m : merged.at("metrics")) c.metrics.push_back(parse_metric(m.get<std::string>()));
        c.out_dir = merged.at("out_dir").get<std::string>();
        c.folds = merged.at("folds").get<int>();
        c.threads = merged.at("threads").get<int>();
        c.k_range = merged.at("k_range").get<std::vector<int>>();
        c.rhos = merged.at("rhos").get<std::vector<double>>();
        c.pehe_t1 = merged.at("pehe").at("t1").get<double>();
        c.pehe_t2 = merged.at("pehe").at("t2").get<double>();
        c.oracle = merged.at("oracle").get<oracle::BoundCheckOptions>();
        c.save_models = merged.at("save_models").get<bool>();
        c.record_timing = merged.at("record_timing").get<bool>();
        c.validate();
        return c;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    if (!std::filesystem::is_regular_file(path)) throw ConfigError("config " + path.string() + ": no such file");
    json j;
    try {
        j = json::parse(io::read_text(path));
    } catch (const json::parse_error& e) {
        throw ConfigError("config " + path.string() + ": " + e.what());
    }
    return config_from_json(j);
}

std::string config_hash(const ExperimentConfig& c) {
    json j = to_json(c);
    // Settings that cannot change any result stay out of the hash.
    j.erase("out_dir");
    j.erase("threads");
    j.erase("record_timing");
    return io::git_blob_hash(j.dump());
}

model::Samples take(const data::Dataset& ds, data::Split split) {
    const auto idx = ds.indices(split);
    const std::vector<Eigen::Index> cols(idx.begin(), idx.end());
    return {ds.x(Eigen::all, cols), ds.t(cols), ds.y(Eigen::all, cols)};
}

CfBatch counterfactual_batch(const data::Dataset& ds, std::uint64_t seed) {
    const auto idx = ds.indices(data::Split::test);
    const auto n = static_cast<Eigen::Index>(idx.size());
    const auto range = data::treatment_range(ds.config);
    Rng rng = make_rng(seed, streams::counterfactual);
    CfBatch b;
    b.x.resize(ds.x.rows(), n);
    b.y.resize(ds.y.rows(), n);
    b.y_prime.resize(ds.y.rows(), n);
    b.t.resize(n);
    b.t_prime.resize(n);
    for (Eigen::Index j = 0; j < n; ++j) {
        const double tp = round_f32(uniform(rng, range.lo, range.hi));
        const auto tup = data::regen_counterfactual(ds, idx[static_cast<std::size_t>(j)], tp);
        b.x.col(j) = tup.x;
        b.t[j] = tup.t;
        b.y.col(j) = tup.y;
        b.t_prime[j] = tp;
        b.y_prime.col(j) = tup.y_prime;
        b.u_z.push_back(tup.u_z);
    }
    return b;
}

std::pair<double, double> mean_std(const std::vector<double>& v) {
    if (v.empty()) return {std::numeric_limits<double>::quiet_NaN(), 0.0};
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    if (v.size() < 2) return {mean, 0.0};
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    return {mean, std::sqrt(ss / static_cast<double>(v.size() - 1))};
}

std::vector<FoldResult> for_each_fold(int folds, int threads, const std::function<FoldResult(int)>& body) {
    std::vector<FoldResult> out(static_cast<std::size_t>(folds));
    std::atomic<int> next{0};
    const auto worker = [&] {
        for (int f = next++; f < folds; f = next++) {
            try {
                out[static_cast<std::size_t>(f)] = body(f);
            } catch (const std::exception& e) {
                out[static_cast<std::size_t>(f)].fold = f;
                out[static_cast<std::size_t>(f)].status = std::string("error: ") + e.what();
            }
        }
    };
    const int n = std::max(1, std::min(threads, folds));
    if (n == 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (int i = 0; i < n; ++i) pool.emplace_back(worker);
    }
    return out;
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

bool has(const std::vector<Method>& v, Method m) { return std::find(v.begin(), v.end(), m) != v.end(); }

// Predictions of one method for the test tuples at the counterfactual
// treatment and, when PEHE is requested, at both PEHE treatments.
struct MethodOutput {
    Matrix cf;
    Matrix at_t1;
    Matrix at_t2;
};

std::map<std::string, double> score(const ExperimentConfig& cfg, const CfBatch& b, const MethodOutput& out,
                                    const Matrix& truth_t1, const Matrix& truth_t2) {
    std::map<std::string, double> s;
    for (auto m : cfg.metrics) {
        switch (m) {
            case Metric::cf_mse: s["cf_mse"] = metrics::cf_mse(b.y_prime, out.cf); break;
            case Metric::pehe: s["pehe"] = metrics::pehe(truth_t1, truth_t2, out.at_t1, out.at_t2); break;
            case Metric::ssim: {
                const int side = cfg.gen.image_size;
                s["ssim"] = metrics::mean_ssim(b.y_prime, out.cf, side, side, 3);
                break;
            }
        }
    }
    return s;
}

json cfqp_detail(const model::CfqpModel& m) {
    return {{"change_counts", m.change_counts}, {"converged_round", m.converged_round},
            {"residual_before", m.residual_before}, {"residual_after", m.residual_after}};
}

double assignment_accuracy(const std::vector<int>& pred, const std::vector<int>& truth, int k_pred, int k_true) {
    // Best one-to-one label matching by brute force over permutations of the larger label set.
    const int k = std::max(k_pred, k_true);
    Eigen::MatrixXi conf = Eigen::MatrixXi::Zero(k, k);
    for (std::size_t i = 0; i < pred.size(); ++i) ++conf(pred[i], truth[i]);
    std::vector<int> perm(static_cast<std::size_t>(k));
    std::iota(perm.begin(), perm.end(), 0);
    int best = 0;
    if (k > 8) {
        // Too many permutations; fall back to a greedy match.
        for (int i = 0; i < k; ++i) best += conf.row(i).maxCoeff();
    } else {
        do {
            int hit = 0;
            for (int i = 0; i < k; ++i) hit += conf(i, perm[static_cast<std::size_t>(i)]);
            best = std::max(best, hit);
        } while (std::next_permutation(perm.begin(), perm.end()));
    }
    return static_cast<double>(best) / static_cast<double>(pred.size());
}

}  // namespace

FoldResult run_fold(const ExperimentConfig& cfg, int fold) {
    FoldResult r;
    r.fold = fold;
    r.seed = cfg.fold_seed(fold);
    data::GenConfig gen = cfg.gen;
    gen.seed = r.seed;
    model::CfqpConfig mc = cfg.cfqp;
    mc.seed = r.seed;

    const auto ds = data::generate(gen);
    const auto train = take(ds, data::Split::train);
    const auto batch = counterfactual_batch(ds, r.seed);
    const auto n_test = batch.t.size();
    const bool want_pehe = std::find(cfg.metrics.begin(), cfg.metrics.end(), Metric::pehe) != cfg.metrics.end();
    const Vector t1 = Vector::Constant(n_test, cfg.pehe_t1);
    const Vector t2 = Vector::Constant(n_test, cfg.pehe_t2);
    Matrix truth_t1, truth_t2;
    if (want_pehe) {
        const auto idx = ds.indices(data::Split::test);
        truth_t1.resize(ds.y.rows(), n_test);
        truth_t2.resize(ds.y.rows(), n_test);
        for (Eigen::Index j = 0; j < n_test; ++j) {
            truth_t1.col(j) = data::regenerate_outcome(ds, idx[static_cast<std::size_t>(j)], cfg.pehe_t1);
            truth_t2.col(j) = data::regenerate_outcome(ds, idx[static_cast<std::size_t>(j)], cfg.pehe_t2);
        }
    }

    std::optional<model::InitModel> m0;
    double m0_seconds = 0.0;
    if (has(cfg.methods, Method::cfqp) || has(cfg.methods, Method::deep_ite)) {
        const auto t0 = Clock::now();
        m0 = model::train_init(train, mc);
        m0_seconds = seconds_since(t0);
    }

    for (auto method : cfg.methods) {
        const auto t0 = Clock::now();
        MethodOutput out;
        switch (method) {
            case Method::cfqp: {
                auto assignment = model::initial_cluster(train, *m0, mc);
                const auto m = model::em_train(train, *m0, mc, std::move(assignment));
                out.cf = m.predict_cf(batch.x, batch.t, batch.y, batch.t_prime);
                if (want_pehe) {
                    out.at_t1 = m.predict_cf(batch.x, batch.t, batch.y, t1);
                    out.at_t2 = m.predict_cf(batch.x, batch.t, batch.y, t2);
                }
                std::vector<int> truth_test(batch.u_z.begin(), batch.u_z.end());
                r.detail["cfqp"] = cfqp_detail(m);
                r.detail["cfqp"]["test_cluster_accuracy"] =
                    assignment_accuracy(m.infer_clusters(batch.x, batch.t, batch.y), truth_test, m.k(), gen.k0);
                if (cfg.save_models) model::save_model(m, std::filesystem::path(cfg.out_dir) / ("fold" + std::to_string(fold)) / "cfqp_model");
                break;
            }
            case Method::deep_ite: {
                model::CfqpConfig one = mc;
                one.k = 1;
                const auto m = model::em_train(train, *m0, one, std::vector<int>(train.size(), 0));
                out.cf = baselines::deep_ite_predict(m, batch.x, batch.t_prime);
                if (want_pehe) {
                    out.at_t1 = baselines::deep_ite_predict(m, batch.x, t1);
                    out.at_t2 = baselines::deep_ite_predict(m, batch.x, t2);
                }
                break;
            }
            case Method::sc: {
                const auto sc = baselines::ScModel::fit(train, cfg.sc);
                out.cf = sc.predict(batch.x, batch.y, batch.t_prime);
                if (want_pehe) {
                    out.at_t1 = sc.predict(batch.x, batch.y, t1);
                    out.at_t2 = sc.predict(batch.x, batch.y, t2);
                }
                break;
            }
        }
        double secs = seconds_since(t0);
        if (method != Method::sc) secs += m0_seconds;
        r.values[to_string(method)] = score(cfg, batch, out, truth_t1, truth_t2);
        r.wall_s[to_string(method)] = secs;
    }
    return r;
}

namespace {

std::string fmt(double v) {
    if (std::isnan(v)) return "nan";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

// Collapses fold values into rows, in method and metric order of first appearance.
ResultsTable aggregate(const ExperimentConfig& cfg, std::vector<FoldResult> folds) {
    ResultsTable t;
    const auto hash = config_hash(cfg);
    std::vector<std::pair<std::string, std::string>> keys;
    for (const auto& f : folds) {
        if (!f.ok()) continue;
        for (const auto& [method, metrics] : f.values)
            for (const auto& [metric, _] : metrics)
                if (std::find(keys.begin(), keys.end(), std::pair{method, metric}) == keys.end())
                    keys.emplace_back(method, metric);
    }
    for (const auto& [method, metric] : keys) {
        Row row;
        row.dataset = data::to_string(cfg.gen.generator);
        row.noise = data::to_string(cfg.gen.noise_mode);
        row.method = method;
        row.metric = metric;
        row.seed = cfg.gen.seed;
        row.config_hash = hash;
        std::vector<double> walls;
        for (const auto& f : folds) {
            if (!f.ok()) continue;
            const auto mit = f.values.find(method);
            if (mit == f.values.end()) continue;
            const auto vit = mit->second.find(metric);
            if (vit == mit->second.end()) continue;
            row.values.push_back(vit->second);
            if (const auto w = f.wall_s.find(method); w != f.wall_s.end()) walls.push_back(w->second);
        }
        row.folds = static_cast<int>(row.values.size());
        std::tie(row.mean, row.std) = mean_std(row.values);
        row.wall_s = cfg.record_timing && !walls.empty() ? mean_std(walls).first : 0.0;
        t.rows.push_back(std::move(row));
    }
    t.folds = std::move(folds);
    return t;
}

void require_some_fold(const ResultsTable& t) {
    for (const auto& f : t.folds)
        if (f.ok()) return;
    std::string why = t.folds.empty() ? "no folds" : t.folds.front().status;
    throw Error("every fold failed (" + why + ")");
}

}  // namespace

const Row* ResultsTable::find(const std::string& method, const std::string& metric) const {
    for (const auto& r : rows)
        if (r.method == method && r.metric == metric) return &r;
    return nullptr;
}

std::string to_csv(const ResultsTable& t) {
    std::ostringstream os;
    os << kCsvHeader << '\n';
    for (const auto& r : t.rows)
        os << r.dataset << ',' << r.noise << ',' << r.method << ',' << r.metric << ',' << fmt(r.mean) << ','
           << fmt(r.std) << ',' << r.folds << ',' << r.seed << ',' << r.config_hash << ',' << fmt(r.wall_s) << '\n';
    return os.str();
}

json to_json(const ResultsTable& t) {
    json rows = json::array();
    for (const auto& r : t.rows)
        rows.push_back({{"dataset", r.dataset}, {"noise", r.noise}, {"method", r.method}, {"metric", r.metric},
                        {"mean", r.mean}, {"std", r.std}, {"folds", r.folds}, {"seed", r.seed},
                        {"config_hash", r.config_hash}, {"wall_s", r.wall_s}, {"values", r.values}});
    json folds = json::array();
    for (const auto& f : t.folds)
        folds.push_back({{"fold", f.fold}, {"seed", f.seed}, {"status", f.status}, {"values", f.values},
                         {"detail", f.detail.is_null() ? json::object() : f.detail}});
    json out = {{"rows", rows}, {"folds", folds}};
    if (!t.extra.is_null()) out["extra"] = t.extra;
    return out;
}

void write_results(const ResultsTable& t, const ExperimentConfig& cfg, const std::string& stem) {
    const std::filesystem::path dir(cfg.out_dir);
    std::filesystem::create_directories(dir);
    io::write_text(dir / (stem + ".csv"), to_csv(t));
    json j = to_json(t);
    j["config"] = to_json(cfg);
    j["config_hash"] = config_hash(cfg);
    io::write_text(dir / (stem + ".json"), j.dump(2) + "\n");
}

ResultsTable run(const ExperimentConfig& cfg) {
    cfg.validate();
    auto t = aggregate(cfg, for_each_fold(cfg.folds, cfg.threads, [&](int f) { return run_fold(cfg, f); }));
    // Timings are kept out of the fold detail unless requested, for reproducible output.
    if (!cfg.record_timing)
        for (auto& f : t.folds) f.wall_s.clear();
    require_some_fold(t);
    return t;
}

ResultsTable sweep_k(const ExperimentConfig& cfg, std::vector<SweepKFold>* detail) {
    cfg.validate();
    std::vector<SweepKFold> per(static_cast<std::size_t>(cfg.folds));
    auto folds = for_each_fold(cfg.folds, cfg.threads, [&](int f) {
        FoldResult r;
        r.fold = f;
        r.seed = cfg.fold_seed(f);
        data::GenConfig gen = cfg.gen;
        gen.seed = r.seed;
        model::CfqpConfig mc = cfg.cfqp;
        mc.seed = r.seed;
        const auto t0 = Clock::now();
        const auto ds = data::generate(gen);
        const auto train = take(ds, data::Split::train);
        const auto val = take(ds, data::Split::val);
        const auto batch = counterfactual_batch(ds, r.seed);
        const auto m0 = model::train_init(train, mc);
        const auto sel = model::select_k(train, val, mc, cfg.k_range, m0);
        SweepKFold& d = per[static_cast<std::size_t>(f)];
        d.best_k = sel.best_k;
        d.val_mse = sel.val_mse;
        d.val_mse_full = sel.val_mse_full;
        for (std::size_t i = 0; i < sel.ks.size(); ++i) {
            const auto& m = sel.models[i];
            const double cf = metrics::cf_mse(batch.y_prime, m.predict_cf(batch.x, batch.t, batch.y, batch.t_prime));
            d.cf_mse.push_back(cf);
            auto& v = r.values["cfqp_k" + std::to_string(sel.ks[i])];
            v["val_mse"] = sel.val_mse[i];
            v["val_mse_full"] = sel.val_mse_full[i];
            v["cf_mse"] = cf;
        }
        r.values["cfqp"]["best_k"] = sel.best_k;
        const double secs = seconds_since(t0);
        for (auto& [method, _] : r.values) r.wall_s[method] = secs;
        r.detail["best_k"] = sel.best_k;
        return r;
    });
    for (const auto& f : folds)
        if (!f.ok()) per[static_cast<std::size_t>(f.fold)] = SweepKFold{};
    if (detail) *detail = per;
    auto t = aggregate(cfg, std::move(folds));
    if (!cfg.record_timing)
        for (auto& f : t.folds) f.wall_s.clear();
    require_some_fold(t);
    return t;
}

ResultsTable sweep_rho(const ExperimentConfig& cfg) {
    cfg.validate();
    if (cfg.gen.generator != data::GeneratorKind::images)
        throw ConfigError("sweep-rho requires the image generator");
    if (cfg.rhos.empty()) throw ConfigError("rhos must not be empty");
    ResultsTable all;
    for (double rho : cfg.rhos) {
        ExperimentConfig c = cfg;
        c.gen.rho = rho;
        c.save_models = false;
        auto t = run(c);
        std::ostringstream tag;
        tag << "@rho=" << rho;
        for (auto& row : t.rows) {
            row.metric += tag.str();
            row.config_hash = config_hash(cfg);
            all.rows.push_back(row);
        }
        for (auto& f : t.folds) {
            f.detail["rho"] = rho;
            all.folds.push_back(std::move(f));
        }
    }
    return all;
}

oracle::BoundReport oracle_check(const ExperimentConfig& cfg) {
    cfg.validate();
    return oracle::bound_check(cfg.gen, cfg.oracle);
}

}  // namespace cfqp::exp
