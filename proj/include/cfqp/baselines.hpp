#pragma once

#include "cfqp/common.hpp"
#include "cfqp/model.hpp"

#include <nlohmann/json.hpp>

namespace cfqp::baselines {

/// Deep-ITE: the regressor of the conditional mean response evaluated at the
/// counterfactual treatment. The factual outcome is never consulted.
Matrix deep_ite_predict(const model::InitModel& m0, const Matrix& x, const Vector& t_prime);

/// Same, for a CfqpModel trained with K = 1.
Matrix deep_ite_predict(const model::CfqpModel& single, const Matrix& x, const Vector& t_prime);

/// Euclidean projection onto the probability simplex.
Vector project_simplex(const Vector& v);

struct SimplexLsqOptions {
    double tol = 1e-12;  // stop when an iterate moves less than this (max norm)
    int max_iter = 20000;
};

struct SimplexLsqResult {
    Vector w;
    double objective = 0.0;  // ||A w - b||^2
    int iterations = 0;
};

/// min ||A w - b||^2 over the simplex by accelerated projected gradient with
/// adaptive restart. The returned iterate is the best one seen.
SimplexLsqResult simplex_lsq(const Matrix& a, const Vector& b, const SimplexLsqOptions& opts = {});

/// Same problem solved exactly by a primal active-set method: equality
/// constrained solves on the support, stepping back to the boundary when a
/// weight would go negative, and adding the donor with the most negative
/// reduced gradient until none is left.
SimplexLsqResult simplex_lsq_active_set(const Matrix& a, const Vector& b, const SimplexLsqOptions& opts = {});

enum class ScSolver { active_set, projected_gradient };

struct ScConfig {
    double window = 0.1;  // donor treatments within +-window of t'
    double outcome_weight = 1.0;  // scale of the factual-outcome block relative to the covariates
    ScSolver method = ScSolver::active_set;
    SimplexLsqOptions solver;
};

void to_json(nlohmann::json& j, const ScConfig& c);
void from_json(const nlohmann::json& j, ScConfig& c);

/// Synthetic control over train-set donors: weights fit jointly on covariates
/// and factual outcome among donors treated near t', prediction is the same
/// combination of donor outcomes.
struct ScModel {
    Matrix x;  // d_x x N donors
    Vector t;
    Matrix y;  // d_y x N
    ScConfig config;

    static ScModel fit(const model::Samples& donors, const ScConfig& cfg = {});

    struct Query {
        Vector y_prime;
        std::vector<Eigen::Index> donors;
        Vector weights;
        double window = 0.0;  // after any widening
    };
    Query query(const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Vector>& y, double t_prime) const;

    /// Column-wise predictions for a batch of factual observations.
    Matrix predict(const Matrix& x, const Matrix& y, const Vector& t_prime) const;
};

}  // namespace cfqp::baselines
