#pragma once

#include "cfqp/common.hpp"

#include <cstdint>
#include <vector>

namespace cfqp::cluster {

// All point sets are d x N (one point per column).

struct KmeansOptions {
    int restarts = 10;
    int iters = 100;
    std::uint64_t seed = 0;
};

struct KmeansResult {
    Matrix centroids;  // d x K
    std::vector<int> assignment;
    double inertia = 0.0;
    int iterations = 0;
    std::vector<double> inertia_trace;  // of the winning restart, one entry per Lloyd step
};

/// Best of `restarts` k-means++ initialisations followed by Lloyd iterations.
KmeansResult kmeans_fit(const Matrix& points, int k, const KmeansOptions& opts = {});

/// Index of the nearest column of `centres`; ties go to the lowest index.
int nearest(const Eigen::Ref<const Vector>& point, const Matrix& centres);

struct GmmOptions {
    std::size_t max_subsample = 1000;
    int iters = 200;
    std::uint64_t seed = 0;
    double var_floor = 1e-6;
    double tol = 1e-10;  // relative log-likelihood change that stops EM
};

struct GmmResult {
    Vector weights;    // K
    Matrix means;      // d x K
    Matrix variances;  // d x K, diagonal covariances
    Matrix resp;       // K x N over the full input set
    std::vector<double> loglik_trace;  // mean log-likelihood on the fitted subsample
    std::vector<int> hard_assignment() const;
};

/// EM for a diagonal-covariance Gaussian mixture fitted on at most
/// `max_subsample` randomly chosen points, initialised from k-means.
GmmResult gmm_fit(const Matrix& points, int k, const GmmOptions& opts = {});

/// log(weight_k) + log N(x; mean_k, diag(var_k)) for every component and point (K x N).
Matrix gmm_log_joint(const Vector& weights, const Matrix& means, const Matrix& variances, const Matrix& points);

/// Row-normalised posterior of `log_joint` columns (K x N), computed stably.
Matrix normalize_log_columns(const Matrix& log_joint);

/// argmin_j ||y - predictions.col(j)||^2; ties go to the lowest index.
int assign_by_residual(const Eigen::Ref<const Vector>& y, const Matrix& predictions);

}  // namespace cfqp::cluster
