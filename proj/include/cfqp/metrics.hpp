#pragma once

#include "cfqp/common.hpp"

namespace cfqp::metrics {

// Outcome matrices are d x N, one sample per column.

/// Mean over samples of ||truth - pred||^2 / d.
double cf_mse(const Matrix& truth, const Matrix& pred);

/// sqrt(mean(((y2 - y1) - (yhat2 - yhat1))^2)) over every sample and output dimension.
double pehe(const Matrix& y_t1, const Matrix& y_t2, const Matrix& yhat_t1, const Matrix& yhat_t2);

struct SsimOptions {
    int window = 8;
    double dynamic_range = 1.0;
    double k1 = 0.01;
    double k2 = 0.03;
};

/// SSIM between two images stored as `channels` planes of rows x cols pixels
/// (row-major within a plane). Windows tile the image without overlap; when
/// the size is not a multiple of the window a final tile is anchored at the
/// far edge so every pixel is covered. Averaged over windows and channels.
double ssim(const Eigen::Ref<const Vector>& a, const Eigen::Ref<const Vector>& b, int rows, int cols, int channels,
            const SsimOptions& opts = {});

/// Mean per-sample SSIM for d x N image batches.
double mean_ssim(const Matrix& a, const Matrix& b, int rows, int cols, int channels, const SsimOptions& opts = {});

struct DiscreteDistribution {
    Matrix atoms;    // d x m
    Vector weights;  // m, on the simplex

    Eigen::Index size() const { return weights.size(); }
    Eigen::Index dim() const { return atoms.rows(); }
    void validate(double tol = 1e-9) const;
    Vector mean() const { return atoms * weights; }
};

inline constexpr Eigen::Index kMaxW1Atoms = 32;

/// Exact W1 with Euclidean ground cost. Both supports must have at most
/// kMaxW1Atoms atoms.
double w1_discrete(const DiscreteDistribution& p, const DiscreteDistribution& q);

struct TransportResult {
    double cost = 0.0;
    Matrix plan;  // m x n
};

/// Exact balanced transportation problem min <plan, cost> subject to row sums
/// `supply` and column sums `demand` (both nonnegative with equal totals).
/// Solved by successive shortest paths with reduced-cost potentials, so any
/// size is accepted; work grows roughly as m * n^2 when n >> m.
TransportResult transport_exact(const Vector& supply, const Vector& demand, const Matrix& cost);

/// Euclidean distances between the columns of a (d x m) and b (d x n).
Matrix pairwise_distances(const Matrix& a, const Matrix& b);

}  // namespace cfqp::metrics
