#include "cfqp/oracle.hpp"

#include "cfqp/clustering.hpp"
#include "cfqp/rng.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <numeric>
#include <optional>
#include <span>
#include <tuple>

namespace cfqp::oracle {

PointwiseMixture fit_pointwise(const Matrix& samples, int k, const FitOptions& opts) {
    if (k < 1) throw ConfigError("fit_pointwise: k must be positive");
    if (samples.cols() < 10 * static_cast<Eigen::Index>(k))
        throw ConfigError("fit_pointwise: need at least 10 samples per component");
    cluster::GmmOptions g;
    g.max_subsample = static_cast<std::size_t>(samples.cols());
    g.iters = opts.iters;
    g.seed = opts.seed;
    g.var_floor = opts.var_floor;
    const auto fit = cluster::gmm_fit(samples, k, g);
    PointwiseMixture mix;
    mix.weights = fit.weights;
    mix.means = fit.means;
    mix.variances = fit.variances;
    return mix;
}

Vector posterior_weights(const Eigen::Ref<const Vector>& y, const PointwiseMixture& mix, bool* underflow) {
    require_shape(y.size() == mix.means.rows(), "posterior_weights: dimension mismatch");
    if (underflow) *underflow = false;
    const Matrix lj = cluster::gmm_log_joint(mix.weights, mix.means, mix.variances, Matrix(y));
    if (!std::isfinite(lj.maxCoeff())) {
        if (underflow) *underflow = true;
        return Vector::Constant(mix.k(), 1.0 / mix.k());
    }
    return cluster::normalize_log_columns(lj).col(0);
}

metrics::DiscreteDistribution cf_estimator_discrete(const Vector& posterior, const Matrix& means_t_prime) {
    require_shape(posterior.size() == means_t_prime.cols(), "cf_estimator_discrete: K mismatch");
    return {means_t_prime, posterior};
}

metrics::DiscreteDistribution cf_estimator_additive(const Eigen::Ref<const Vector>& y, const PointwiseMixture& at_t,
                                                    const PointwiseMixture& at_t_prime, double var_floor) {
    require_shape(at_t.k() == at_t_prime.k(), "cf_estimator_additive: K mismatch");
    require_shape(at_t.means.rows() == y.size() && at_t_prime.means.rows() == y.size(),
                  "cf_estimator_additive: dimension mismatch");
    if (at_t.variances.minCoeff() < var_floor || at_t_prime.variances.minCoeff() < var_floor)
        throw NumericError("cf_estimator_additive: covariance below floor");
    metrics::DiscreteDistribution out;
    out.atoms.resize(y.size(), at_t.k());
    for (int c = 0; c < at_t.k(); ++c) {
        const Vector ratio = (at_t_prime.variances.col(c).array() / at_t.variances.col(c).array()).sqrt().matrix();
        out.atoms.col(c) = at_t_prime.means.col(c) + ratio.cwiseProduct(y - at_t.means.col(c));
    }
    out.weights = posterior_weights(y, at_t);
    return out;
}

namespace {

double min_separation(const Matrix& means) {
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < means.cols(); ++i)
        for (Eigen::Index j = i + 1; j < means.cols(); ++j) best = std::min(best, (means.col(i) - means.col(j)).norm());
    return best;
}

// match[i] = index in `to` of component i of `from`, or empty when the step is ambiguous.
std::optional<std::vector<int>> match_step(const Matrix& from, const Matrix& to) {
    const auto k = from.cols();
    const Matrix d = metrics::pairwise_distances(from, to);
    std::vector<int> match(static_cast<std::size_t>(k), -1);
    std::vector<char> used(static_cast<std::size_t>(k), 0);
    double drift = 0.0;
    for (Eigen::Index step = 0; step < k; ++step) {
        double best = std::numeric_limits<double>::infinity();
        Eigen::Index bi = -1, bj = -1;
        for (Eigen::Index i = 0; i < k; ++i) {
            if (match[static_cast<std::size_t>(i)] >= 0) continue;
            for (Eigen::Index j = 0; j < k; ++j) {
                if (used[static_cast<std::size_t>(j)]) continue;
                if (d(i, j) < best) {
                    best = d(i, j);
                    bi = i;
                    bj = j;
                }
            }
        }
        match[static_cast<std::size_t>(bi)] = static_cast<int>(bj);
        used[static_cast<std::size_t>(bj)] = 1;
        drift = std::max(drift, best);
    }
    const double sep = std::min(min_separation(from), min_separation(to));
    if (k > 1 && !(drift < 0.5 * sep)) return std::nullopt;
    return match;
}

}  // namespace

AlignmentMap align_components(const std::vector<PointwiseMixture>& path) {
    if (path.empty()) throw ConfigError("align_components: empty path");
    const int k = path.front().k();
    AlignmentMap map;
    std::vector<int> current(static_cast<std::size_t>(k));
    std::iota(current.begin(), current.end(), 0);
    for (std::size_t p = 0; p < path.size(); ++p) {
        if (path[p].k() != k) throw ConfigError("align_components: K changes along the path");
        if (p > 0) {
            const auto step = match_step(path[p - 1].means, path[p].means);
            if (!step) throw Error("align_components: ambiguous matching at grid index " + std::to_string(p));
            for (auto& c : current) c = (*step)[static_cast<std::size_t>(c)];
        }
        map.xs.push_back(path[p].x);
        map.ts.push_back(path[p].t);
        map.perms.push_back(current);
    }
    return map;
}

AlignmentMap align_adaptive(const std::function<PointwiseMixture(double)>& mixture_at, int max_points) {
    if (max_points < 2) throw ConfigError("align_adaptive: need at least two points");
    std::map<double, PointwiseMixture> cache;
    const auto get = [&](double s) -> const PointwiseMixture& {
        auto it = cache.find(s);
        if (it == cache.end()) it = cache.emplace(s, mixture_at(s)).first;
        return it->second;
    };
    for (int intervals = 1; intervals + 1 <= max_points; intervals *= 2) {
        std::vector<PointwiseMixture> path;
        for (int i = 0; i <= intervals; ++i) path.push_back(get(static_cast<double>(i) / intervals));
        try {
            return align_components(path);
        } catch (const ConfigError&) {
            throw;
        } catch (const Error&) {
            // refine
        }
    }
    throw Error("align_adaptive: no consistent alignment within " + std::to_string(max_points) + " points");
}

PointwiseMixture permuted(const PointwiseMixture& mix, const std::vector<int>& perm) {
    require_shape(static_cast<int>(perm.size()) == mix.k(), "permuted: permutation length mismatch");
    PointwiseMixture out = mix;
    for (int i = 0; i < mix.k(); ++i) {
        const int src = perm[static_cast<std::size_t>(i)];
        out.weights[i] = mix.weights[src];
        out.means.col(i) = mix.means.col(src);
        out.variances.col(i) = mix.variances.col(src);
    }
    return out;
}

std::pair<double, double> bootstrap_mean_ci(const std::vector<double>& values, std::size_t reps, std::uint64_t seed,
                                            double level) {
    if (values.empty()) throw ConfigError("bootstrap_mean_ci: no values");
    if (reps < 1) throw ConfigError("bootstrap_mean_ci: reps must be positive");
    Rng rng = make_rng(seed, streams::oracle, 99);
    std::uniform_int_distribution<std::size_t> pick(0, values.size() - 1);
    std::vector<double> means(reps);
    for (auto& m : means) {
        double s = 0.0;
        for (std::size_t i = 0; i < values.size(); ++i) s += values[pick(rng)];
        m = s / static_cast<double>(values.size());
    }
    std::sort(means.begin(), means.end());
    const double alpha = 0.5 * (1.0 - level);
    const auto at = [&](double q) {
        const auto idx = static_cast<std::size_t>(std::clamp(q * static_cast<double>(reps - 1), 0.0, double(reps - 1)));
        return means[idx];
    };
    return {at(alpha), at(1.0 - alpha)};
}

void to_json(nlohmann::json& j, const BoundCheckOptions& o) {
    j = {{"sample_index", o.sample_index}, {"n_samples", o.n_samples}, {"k", o.k},
         {"n_draws", o.n_draws},           {"resamples", o.resamples}, {"bootstrap", o.bootstrap},
         {"seed", o.seed},                 {"eval_seed", o.eval_seed}};
    if (std::isfinite(o.t)) j["t"] = o.t;
    if (std::isfinite(o.t_prime)) j["t_prime"] = o.t_prime;
}

void from_json(const nlohmann::json& j, BoundCheckOptions& o) {
    o.sample_index = j.value("sample_index", o.sample_index);
    if (j.contains("t")) o.t = j.at("t").get<double>();
    if (j.contains("t_prime")) o.t_prime = j.at("t_prime").get<double>();
    o.n_samples = j.value("n_samples", o.n_samples);
    o.k = j.value("k", o.k);
    o.n_draws = j.value("n_draws", o.n_draws);
    o.resamples = j.value("resamples", o.resamples);
    o.bootstrap = j.value("bootstrap", o.bootstrap);
    o.seed = j.value("seed", o.seed);
    o.eval_seed = j.value("eval_seed", o.eval_seed);
    if (o.n_draws < 1 || o.bootstrap < 1 || o.resamples < 1) throw ConfigError("oracle: counts must be positive");
}

nlohmann::json to_json(const BoundReport& r) {
    return {{"x", std::vector<double>(r.x.data(), r.x.data() + r.x.size())},
            {"t", r.t},
            {"t_prime", r.t_prime},
            {"n", r.n},
            {"e_w1", r.e_w1},
            {"delta_hat", r.delta_hat},
            {"ci_low", r.ci_low},
            {"ci_high", r.ci_high},
            {"pass", r.pass}};
}

namespace {

int draw_index(Rng& rng, const Vector& p) {
    std::discrete_distribution<int> d(p.data(), p.data() + p.size());
    return d(rng);
}

// Responsibility-weighted mean distance of the samples to each component mean; the largest.
double max_expected_deviation(const Matrix& samples, const PointwiseMixture& mix) {
    const Matrix resp = cluster::normalize_log_columns(
        cluster::gmm_log_joint(mix.weights, mix.means, mix.variances, samples));
    double worst = 0.0;
    for (int c = 0; c < mix.k(); ++c) {
        const double mass = resp.row(c).sum();
        if (mass <= 0.0) continue;
        const Vector dist = (samples.colwise() - mix.means.col(c)).colwise().norm().transpose();
        worst = std::max(worst, resp.row(c).dot(dist) / mass);
    }
    return worst;
}

// Class posterior under isotropic Gaussian outcome noise of scale sigma; with
// sigma = 0 the classes whose noise-free outcome matches y share the prior mass.
Vector gaussian_class_posterior(const Vector& y, const Matrix& clean_means, const Vector& prior, double sigma) {
    const auto k = clean_means.cols();
    Vector logp(k);
    for (Eigen::Index c = 0; c < k; ++c) {
        const double d2 = (y - clean_means.col(c)).squaredNorm();
        if (sigma > 0.0) logp[c] = std::log(prior[c]) - 0.5 * d2 / (sigma * sigma);
        else logp[c] = d2 == 0.0 ? std::log(prior[c]) : -std::numeric_limits<double>::infinity();
    }
    return cluster::normalize_log_columns(logp);
}

}  // namespace

BoundReport bound_check(const data::GenConfig& cfg_in, const BoundCheckOptions& opts) {
    data::GenConfig cfg = cfg_in;
    cfg.n_train = opts.sample_index + 1;
    cfg.n_val = 0;
    cfg.n_test = 0;
    cfg.validate();
    if (opts.n_draws < 1 || opts.bootstrap < 1 || opts.resamples < 1) throw ConfigError("bound_check: counts must be positive");
    const int k = opts.k > 0 ? opts.k : cfg.k0;
    const auto base = data::generate(cfg);
    const auto col = static_cast<Eigen::Index>(opts.sample_index);
    const Vector x = base.x.col(col);
    const Vector latent0 = base.latents.col(col);
    const auto range = data::treatment_range(cfg);
    const double t = std::isfinite(opts.t) ? opts.t : base.t[col];
    const double t_prime = std::isfinite(opts.t_prime) ? opts.t_prime : range.lo + 0.75 * (range.hi - range.lo);
    const Vector prior = data::class_prior(cfg, std::span(latent0.data(), static_cast<std::size_t>(latent0.size())));
    const auto d_y = static_cast<Eigen::Index>(data::outcome_dim(cfg));
    const bool additive = cfg.noise_mode == data::NoiseMode::additive;

    // Draw one outcome: class, fresh outcome noise, treatment.
    const auto draw = [&](Rng& rng, double tt, int* cls, Vector* lat) {
        Vector l = latent0;
        const int c = draw_index(rng, prior);
        data::redraw_outcome_noise(cfg, std::span(l.data(), static_cast<std::size_t>(l.size())), rng);
        Vector y = data::outcome(cfg, x, std::span<const double>(l.data(), static_cast<std::size_t>(l.size())), c, tt);
        if (cls) *cls = c;
        if (lat) *lat = std::move(l);
        return y;
    };
    const auto sample_at = [&](double tt, std::uint64_t stream_index) {
        Rng rng = make_rng(opts.seed, streams::oracle, stream_index);
        Matrix s(d_y, static_cast<Eigen::Index>(opts.n_samples));
        for (Eigen::Index i = 0; i < s.cols(); ++i) s.col(i) = draw(rng, tt, nullptr, nullptr);
        return s;
    };

    // Mixtures along the straight treatment path from t to t', aligned to the one at t.
    std::map<double, Matrix> samples_at;
    FitOptions fit_opts;
    fit_opts.seed = derive_seed(opts.seed, streams::clustering);
    const auto mixture_at = [&](double s) {
        const double tt = t + s * (t_prime - t);
        Matrix smp = sample_at(tt, static_cast<std::uint64_t>(std::llround(s * 1024.0)));
        auto mix = fit_pointwise(smp, k, fit_opts);
        mix.x = x;
        mix.t = tt;
        samples_at[s] = std::move(smp);
        return mix;
    };
    std::vector<PointwiseMixture> ends;
    const auto align = align_adaptive([&](double s) {
        auto m = mixture_at(s);
        if (s == 0.0 || s == 1.0) ends.push_back(m);
        return m;
    });
    const PointwiseMixture& mix_t = ends.front().t == t ? ends.front() : ends.back();
    const PointwiseMixture& mix_tp_raw = ends.front().t == t ? ends.back() : ends.front();
    const PointwiseMixture mix_tp = permuted(mix_tp_raw, align.last());

    BoundReport rep;
    rep.x = x;
    rep.t = t;
    rep.t_prime = t_prime;
    rep.n = opts.n_samples;
    rep.exact_truth = additive;
    rep.delta_hat = std::max(max_expected_deviation(samples_at.at(0.0), mix_t),
                             max_expected_deviation(samples_at.at(1.0), mix_tp_raw));

    data::GenConfig clean = cfg;
    clean.sigma = 0.0;
    Rng eval = make_rng(opts.eval_seed, streams::oracle, 1u << 20);
    rep.w1_draws.reserve(opts.n_draws);
    for (std::size_t m = 0; m < opts.n_draws; ++m) {
        int cls = 0;
        Vector lat;
        const Vector y = draw(eval, t, &cls, &lat);
        const auto estimate = cf_estimator_discrete(posterior_weights(y, mix_t), mix_tp.means);
        const auto lspan = [](const Vector& v) { return std::span<const double>(v.data(), static_cast<std::size_t>(v.size())); };

        double w1 = 0.0;
        if (additive) {
            // Noise is identified within each class, so the exact counterfactual
            // law given y is a K-atom mixture over the class posterior.
            Vector zero = lat;
            Rng unused(0);
            data::redraw_outcome_noise(clean, std::span(zero.data(), static_cast<std::size_t>(zero.size())), unused);
            Matrix clean_means(d_y, cfg.k0), atoms(d_y, cfg.k0);
            for (int c = 0; c < cfg.k0; ++c) {
                clean_means.col(c) = data::outcome(cfg, x, lspan(zero), c, t);
                atoms.col(c) = data::outcome(cfg, x, lspan(lat), c, t_prime);
            }
            const metrics::DiscreteDistribution truth{atoms,
                                                      gaussian_class_posterior(y, clean_means, prior, cfg.sigma)};
            w1 = metrics::w1_discrete(estimate, truth);
        } else {
            // Class posterior from moment-matched class densities at (x, t), then
            // fresh noise draws at (x, t') for each class.
            const auto r = static_cast<Eigen::Index>(opts.resamples);
            Rng rs = make_rng(opts.eval_seed, streams::counterfactual, m);
            Vector logp(cfg.k0);
            Matrix cf(d_y, r * cfg.k0);
            for (int c = 0; c < cfg.k0; ++c) {
                Matrix at_t(d_y, r);
                for (Eigen::Index i = 0; i < r; ++i) {
                    Vector l = latent0;
                    data::redraw_outcome_noise(cfg, std::span(l.data(), static_cast<std::size_t>(l.size())), rs);
                    at_t.col(i) = data::outcome(cfg, x, lspan(l), c, t);
                    cf.col(c * r + i) = data::outcome(cfg, x, lspan(l), c, t_prime);
                }
                const Vector mu = at_t.rowwise().mean();
                const Vector var =
                    ((at_t.colwise() - mu).array().square().rowwise().sum() / static_cast<double>(r)).max(1e-12).matrix();
                logp[c] = std::log(prior[c]) - 0.5 * (var.array().log().sum() +
                                                      ((y - mu).array().square() / var.array()).sum());
            }
            const Vector post = cluster::normalize_log_columns(logp);
            Vector mass(r * cfg.k0);
            for (int c = 0; c < cfg.k0; ++c) mass.segment(c * r, r).setConstant(post[c] / static_cast<double>(r));
            w1 = metrics::transport_exact(estimate.weights / estimate.weights.sum(), mass / mass.sum(),
                                          metrics::pairwise_distances(estimate.atoms, cf))
                     .cost;
        }
        rep.w1_draws.push_back(w1);
    }
    rep.e_w1 = std::accumulate(rep.w1_draws.begin(), rep.w1_draws.end(), 0.0) / static_cast<double>(opts.n_draws);
    std::tie(rep.ci_low, rep.ci_high) = bootstrap_mean_ci(rep.w1_draws, opts.bootstrap, opts.eval_seed);
    rep.pass = rep.e_w1 <= rep.delta_hat + (rep.ci_high - rep.e_w1) + 1e-12;
    return rep;
}

Vector AdditiveScm::mean(int k, double t) const {
    const double angle = 2.0 * std::numbers::pi * k / this->k() + 0.5 * t;
    return (Vector(2) << (1.0 + t) * std::cos(angle), (1.0 + t) * std::sin(angle)).finished();
}

Vector AdditiveScm::scale(int k, double t) const {
    return (Vector(2) << sigma * (1.0 + 0.5 * t + 0.1 * k), sigma * (1.0 + 0.2 * k - 0.3 * t)).finished();
}

AdditiveScmReport additive_scm_check(const AdditiveScm& scm, std::size_t n, std::size_t n_draws, std::uint64_t seed,
                                     std::uint64_t eval_seed) {
    constexpr double t = 0.3, t_prime = 0.8;
    const int k = scm.k();
    const auto sample_one = [&](Rng& rng, double tt, int* cls, Vector* noise) {
        const int c = draw_index(rng, scm.weights);
        Vector u(2);
        u[0] = normal(rng);
        u[1] = normal(rng);
        if (cls) *cls = c;
        if (noise) *noise = u;
        return Vector(scm.mean(c, tt) + scm.scale(c, tt).cwiseProduct(u));
    };
    FitOptions fo;
    fo.seed = derive_seed(seed, streams::clustering);
    const auto mixture_at = [&](double s) {
        const double tt = t + s * (t_prime - t);
        Rng rng = make_rng(seed, streams::oracle, static_cast<std::uint64_t>(std::llround(s * 1024.0)));
        Matrix smp(2, static_cast<Eigen::Index>(n));
        for (Eigen::Index i = 0; i < smp.cols(); ++i) smp.col(i) = sample_one(rng, tt, nullptr, nullptr);
        auto mix = fit_pointwise(smp, k, fo);
        mix.t = tt;
        return mix;
    };
    const PointwiseMixture mix_t = mixture_at(0.0);
    const auto align = align_adaptive(mixture_at);
    const PointwiseMixture mix_tp = permuted(mixture_at(1.0), align.last());

    Rng eval = make_rng(eval_seed, streams::oracle, 1u << 20);
    std::vector<double> w1(n_draws);
    for (auto& w : w1) {
        const Vector y = sample_one(eval, t, nullptr, nullptr);
        Vector logp(k);
        Matrix atoms(2, k);
        for (int c = 0; c < k; ++c) {
            const Vector s = scm.scale(c, t);
            const Vector u = (y - scm.mean(c, t)).cwiseQuotient(s);
            logp[c] = std::log(scm.weights[c]) - s.array().log().sum() - 0.5 * u.squaredNorm();
            atoms.col(c) = scm.mean(c, t_prime) + scm.scale(c, t_prime).cwiseProduct(u);
        }
        const metrics::DiscreteDistribution truth{atoms, cluster::normalize_log_columns(logp)};
        w = metrics::w1_discrete(cf_estimator_additive(y, mix_t, mix_tp), truth);
    }
    AdditiveScmReport rep;
    rep.n = n;
    rep.e_w1 = std::accumulate(w1.begin(), w1.end(), 0.0) / static_cast<double>(n_draws);
    std::tie(rep.ci_low, rep.ci_high) = bootstrap_mean_ci(w1, 1000, eval_seed);
    return rep;
}

}  // namespace cfqp::oracle
