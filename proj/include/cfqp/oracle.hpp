#pragma once

#include "cfqp/common.hpp"
#include "cfqp/datagen.hpp"
#include "cfqp/metrics.hpp"

#include <nlohmann/json.hpp>

#include <functional>
#include <limits>
#include <vector>

namespace cfqp::oracle {

/// Finite Gaussian mixture describing the outcome distribution at one (x, t).
struct PointwiseMixture {
    Vector x;
    double t = 0.0;
    Vector weights;    // K
    Matrix means;      // d x K
    Matrix variances;  // d x K, diagonal covariances

    int k() const { return static_cast<int>(weights.size()); }
};

struct FitOptions {
    std::uint64_t seed = 0;
    double var_floor = 1e-10;
    int iters = 500;
};

/// Diagonal-covariance GMM fitted on every column of `samples` (d x n). At
/// least 10 samples per component are required.
PointwiseMixture fit_pointwise(const Matrix& samples, int k, const FitOptions& opts = {});

/// Posterior class probabilities of outcome `y` under `mix`. When every
/// component density underflows the result is uniform and `underflow` (if
/// given) is set.
Vector posterior_weights(const Eigen::Ref<const Vector>& y, const PointwiseMixture& mix, bool* underflow = nullptr);

/// Mass `posterior[k]` on the k-th column of `means_t_prime`.
metrics::DiscreteDistribution cf_estimator_discrete(const Vector& posterior, const Matrix& means_t_prime);

/// Additive-noise counterfactual: for each class the standardised residual of
/// y at t is carried over to t', atom_k = mu_k(t') + s_k(t') / s_k(t) * (y -
/// mu_k(t)) with s the per-coordinate standard deviation. Both mixtures must
/// list components in the same class order.
metrics::DiscreteDistribution cf_estimator_additive(const Eigen::Ref<const Vector>& y, const PointwiseMixture& at_t,
                                                    const PointwiseMixture& at_t_prime, double var_floor = 1e-12);

/// Component correspondences along a path of mixtures. perms[p][i] is the
/// index at point p of the component that has index i at point 0.
struct AlignmentMap {
    std::vector<Vector> xs;
    std::vector<double> ts;
    std::vector<std::vector<int>> perms;

    std::size_t size() const { return perms.size(); }
    const std::vector<int>& last() const { return perms.back(); }
};

/// Greedy nearest-mean matching between consecutive mixtures. Throws Error
/// naming the grid index when the largest matched displacement is not below
/// half the smallest distance between components.
AlignmentMap align_components(const std::vector<PointwiseMixture>& path);

/// Alignment along s in [0, 1], refining the grid by halving until every step
/// passes the matching precondition or `max_points` would be exceeded.
AlignmentMap align_adaptive(const std::function<PointwiseMixture(double)>& mixture_at, int max_points = 1024);

/// Reorders the components of `mix` by `perm` (component i of the result is
/// component perm[i] of the input).
PointwiseMixture permuted(const PointwiseMixture& mix, const std::vector<int>& perm);

// --- empirical certification -------------------------------------------------

struct BoundCheckOptions {
    std::size_t sample_index = 0;  // which generated sample supplies x
    double t = std::numeric_limits<double>::quiet_NaN();        // default: the sample's own treatment
    double t_prime = std::numeric_limits<double>::quiet_NaN();  // default: 3/4 of the treatment range
    std::size_t n_samples = 5000;  // draws per (x, t) for the mixture fits
    int k = 0;                     // 0 means the generator's k0
    std::size_t n_draws = 500;     // Monte-Carlo factual draws for E_Y[W1]
    std::size_t resamples = 200;   // per class, for the non-additive ground truth
    std::size_t bootstrap = 1000;
    std::uint64_t seed = 1;
    std::uint64_t eval_seed = 2;   // factual draws; kept apart so runs at different N share them
};

void to_json(nlohmann::json& j, const BoundCheckOptions& o);
void from_json(const nlohmann::json& j, BoundCheckOptions& o);

struct BoundReport {
    Vector x;
    double t = 0.0;
    double t_prime = 0.0;
    std::size_t n = 0;
    double e_w1 = 0.0;
    double delta_hat = 0.0;
    double ci_low = 0.0;
    double ci_high = 0.0;
    bool pass = false;
    std::vector<double> w1_draws;
    bool exact_truth = false;  // additive noise: counterfactuals abducted exactly
};

/// {x, t, t_prime, n, e_w1, delta_hat, ci_low, ci_high, pass}
nlohmann::json to_json(const BoundReport& r);

/// Monte-Carlo estimate of E_Y[W1(nu_t', nu_hat_t')] at one covariate value,
/// with nu_hat from cf_estimator_discrete on mixtures fitted to generator
/// draws, and the clusterability bound delta_hat = max_k E||Y_k - mu_k||
/// estimated from the same fits. Passes when e_w1 <= delta_hat plus the upper
/// half-width of a bootstrap 95% interval.
BoundReport bound_check(const data::GenConfig& cfg, const BoundCheckOptions& opts = {});

/// Closed-form additive Gaussian SCM in two dimensions with three
/// heteroscedastic classes whose means move with t.
struct AdditiveScm {
    Vector weights = (Vector(3) << 0.2, 0.3, 0.5).finished();
    double sigma = 0.1;

    Vector mean(int k, double t) const;
    Vector scale(int k, double t) const;
    int k() const { return static_cast<int>(weights.size()); }
};

struct AdditiveScmReport {
    std::size_t n = 0;
    double e_w1 = 0.0;
    double ci_low = 0.0;
    double ci_high = 0.0;
};

/// Mean W1 between cf_estimator_additive and the exact counterfactual
/// distribution of `scm` at t = 0.3, t' = 0.8, over `n_draws` factual draws.
AdditiveScmReport additive_scm_check(const AdditiveScm& scm, std::size_t n, std::size_t n_draws, std::uint64_t seed,
                                     std::uint64_t eval_seed);

/// Percentile bootstrap interval of the mean.
std::pair<double, double> bootstrap_mean_ci(const std::vector<double>& values, std::size_t reps, std::uint64_t seed,
                                            double level = 0.95);

}  // namespace cfqp::oracle
