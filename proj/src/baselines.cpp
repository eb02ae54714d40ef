#include "cfqp/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace cfqp::baselines {

Matrix deep_ite_predict(const model::InitModel& m0, const Matrix& x, const Vector& t_prime) {
    return m0.predict(x, t_prime);
}

Matrix deep_ite_predict(const model::CfqpModel& single, const Matrix& x, const Vector& t_prime) {
    if (single.k() != 1) throw ConfigError("deep_ite_predict: expected a single-model CfqpModel");
    return single.predict(0, x, t_prime);
}

Vector project_simplex(const Vector& v) {
    require_shape(v.size() >= 1, "project_simplex: empty vector");
    std::vector<double> u(v.data(), v.data() + v.size());
    std::sort(u.begin(), u.end(), std::greater<>());
    double cum = 0.0, theta = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        cum += u[i];
        const double cand = (cum - 1.0) / static_cast<double>(i + 1);
        if (u[i] - cand > 0.0) theta = cand;
    }
    return (v.array() - theta).cwiseMax(0.0).matrix();
}

SimplexLsqResult simplex_lsq(const Matrix& a, const Vector& b, const SimplexLsqOptions& opts) {
    require_shape(a.rows() == b.size(), "simplex_lsq: dimension mismatch");
    require_shape(a.cols() >= 1, "simplex_lsq: no columns");
    const Eigen::Index n = a.cols();
    SimplexLsqResult res;
    if (n == 1) {
        res.w = Vector::Ones(1);
        res.objective = (a.col(0) - b).squaredNorm();
        return res;
    }
    const Matrix g = a.transpose() * a;
    const Vector c = a.transpose() * b;
    const double bb = b.squaredNorm();
    const auto objective = [&](const Vector& w) { return std::max(0.0, w.dot(g * w) - 2.0 * c.dot(w) + bb); };

    Eigen::SelfAdjointEigenSolver<Matrix> eig(g, Eigen::EigenvaluesOnly);
    const double lip = 2.0 * std::max(eig.eigenvalues().maxCoeff(), 1e-300);
    const double step = 1.0 / lip;

    Vector w = Vector::Constant(n, 1.0 / static_cast<double>(n));
    Vector z = w;
    double momentum = 1.0;
    double f = objective(w);
    res.w = w;
    res.objective = f;
    for (int it = 1; it <= opts.max_iter; ++it) {
        const Vector next = project_simplex(z - step * 2.0 * (g * z - c));
        const double f_next = objective(next);
        const double moved = (next - w).lpNorm<Eigen::Infinity>();
        if (f_next > f) {
            // Adaptive restart: drop the momentum and take a plain projected step next time.
            momentum = 1.0;
            z = w;
        } else {
            const double m_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * momentum * momentum));
            z = next + ((momentum - 1.0) / m_next) * (next - w);
            momentum = m_next;
            w = next;
            f = f_next;
        }
        if (f < res.objective) {
            res.objective = f;
            res.w = w;
        }
        res.iterations = it;
        if (moved < opts.tol) break;
    }
    return res;
}

SimplexLsqResult simplex_lsq_active_set(const Matrix& a, const Vector& b, const SimplexLsqOptions& opts) {
    require_shape(a.rows() == b.size(), "simplex_lsq: dimension mismatch");
    require_shape(a.cols() >= 1, "simplex_lsq: no columns");
    const Eigen::Index n = a.cols();
    SimplexLsqResult res;
    // Start from the single best donor, which is a vertex of the simplex.
    Eigen::Index first = 0;
    (a.colwise() - b).colwise().squaredNorm().minCoeff(&first);
    Vector w = Vector::Zero(n);
    w[first] = 1.0;
    std::vector<Eigen::Index> support{first};
    std::vector<char> in_support(static_cast<std::size_t>(n), 0);
    in_support[static_cast<std::size_t>(first)] = 1;
    const double scale = std::max(1.0, a.squaredNorm() / static_cast<double>(n));

    for (int it = 1; it <= opts.max_iter; ++it) {
        res.iterations = it;
        // Equality-constrained least squares on the support through its KKT system.
        const auto p = static_cast<Eigen::Index>(support.size());
        Matrix ap(a.rows(), p);
        for (Eigen::Index j = 0; j < p; ++j) ap.col(j) = a.col(support[static_cast<std::size_t>(j)]);
        Matrix kkt = Matrix::Zero(p + 1, p + 1);
        kkt.topLeftCorner(p, p) = ap.transpose() * ap;
        kkt.topRightCorner(p, 1).setOnes();
        kkt.bottomLeftCorner(1, p).setOnes();
        Vector rhs(p + 1);
        rhs.head(p) = ap.transpose() * b;
        rhs[p] = 1.0;
        const Vector z = kkt.completeOrthogonalDecomposition().solve(rhs).head(p);

        if (z.minCoeff() < 0.0) {
            // Walk from w toward z until the first support weight reaches zero, then drop it.
            double alpha = 1.0;
            for (Eigen::Index j = 0; j < p; ++j) {
                if (z[j] >= 0.0) continue;
                const double cur = w[support[static_cast<std::size_t>(j)]];
                alpha = std::min(alpha, cur / (cur - z[j]));
            }
            std::vector<Eigen::Index> kept;
            for (Eigen::Index j = 0; j < p; ++j) {
                const auto idx = support[static_cast<std::size_t>(j)];
                w[idx] += alpha * (z[j] - w[idx]);
                if (w[idx] <= 1e-15) {
                    w[idx] = 0.0;
                    in_support[static_cast<std::size_t>(idx)] = 0;
                } else {
                    kept.push_back(idx);
                }
            }
            support = std::move(kept);
            w /= w.sum();
            continue;
        }
        for (Eigen::Index j = 0; j < p; ++j) w[support[static_cast<std::size_t>(j)]] = z[j];
        w /= w.sum();

        // Optimality: the gradient must be no smaller off the support than on it.
        const Vector grad = a.transpose() * (a * w - b);
        double level = 0.0;
        for (auto idx : support) level += grad[idx];
        level /= static_cast<double>(support.size());
        Eigen::Index enter = -1;
        double most = -opts.tol * scale;
        for (Eigen::Index j = 0; j < n; ++j) {
            if (in_support[static_cast<std::size_t>(j)]) continue;
            const double reduced = grad[j] - level;
            if (reduced < most) {
                most = reduced;
                enter = j;
            }
        }
        if (enter < 0) break;
        support.push_back(enter);
        in_support[static_cast<std::size_t>(enter)] = 1;
    }
    res.w = w;
    res.objective = (a * w - b).squaredNorm();
    return res;
}

void to_json(nlohmann::json& j, const ScConfig& c) {
    j = {{"window", c.window},
         {"outcome_weight", c.outcome_weight},
         {"solver", c.method == ScSolver::active_set ? "active_set" : "projected_gradient"},
         {"tol", c.solver.tol},
         {"max_iter", c.solver.max_iter}};
}

void from_json(const nlohmann::json& j, ScConfig& c) {
    c.window = j.value("window", c.window);
    c.outcome_weight = j.value("outcome_weight", c.outcome_weight);
    if (!(c.outcome_weight >= 0.0)) throw ConfigError("sc: outcome_weight must be non-negative");
    const auto solver = j.value("solver", std::string("active_set"));
    if (solver == "active_set") c.method = ScSolver::active_set;
    else if (solver == "projected_gradient") c.method = ScSolver::projected_gradient;
    else throw ConfigError("sc: unknown solver '" + solver + "'");
    c.solver.tol = j.value("tol", c.solver.tol);
    c.solver.max_iter = j.value("max_iter", c.solver.max_iter);
    if (!(c.window > 0.0)) throw ConfigError("sc: window must be positive");
    if (c.solver.max_iter < 1) throw ConfigError("sc: max_iter must be positive");
}

ScModel ScModel::fit(const model::Samples& donors, const ScConfig& cfg) {
    if (!(cfg.window > 0.0)) throw ConfigError("ScModel: window must be positive");
    require_shape(donors.x.cols() == donors.t.size() && donors.y.cols() == donors.t.size(),
                  "ScModel: inconsistent donor arrays");
    ScModel sc;
    sc.x = donors.x;
    sc.t = donors.t;
    sc.y = donors.y;
    sc.config = cfg;
    return sc;
}

ScModel::Query ScModel::query(const Eigen::Ref<const Vector>& xq, const Eigen::Ref<const Vector>& yq,
                              double t_prime) const {
    require_shape(xq.size() == x.rows() && yq.size() == y.rows(), "sc_predict: query dimension mismatch");
    if (t.size() == 0) throw ConfigError("sc_predict: empty donor pool");
    const double widest = (t.array() - t_prime).abs().maxCoeff();
    Query q;
    q.window = config.window;
    while (true) {
        q.donors.clear();
        for (Eigen::Index i = 0; i < t.size(); ++i)
            if (std::abs(t[i] - t_prime) <= q.window) q.donors.push_back(i);
        if (!q.donors.empty()) break;
        if (q.window >= widest) throw ConfigError("sc_predict: no donors even with the full pool");
        q.window *= 2.0;
    }
    const Eigen::Index dx = x.rows();
    const auto nd = static_cast<Eigen::Index>(q.donors.size());
    Matrix a(dx + y.rows(), nd);
    for (Eigen::Index j = 0; j < nd; ++j) {
        a.col(j).head(dx) = x.col(q.donors[static_cast<std::size_t>(j)]);
        a.col(j).tail(y.rows()) = config.outcome_weight * y.col(q.donors[static_cast<std::size_t>(j)]);
    }
    Vector b(dx + y.rows());
    b.head(dx) = xq;
    b.tail(y.rows()) = config.outcome_weight * yq;
    q.weights = config.method == ScSolver::active_set ? simplex_lsq_active_set(a, b, config.solver).w
                                                      : simplex_lsq(a, b, config.solver).w;
    q.y_prime = Vector::Zero(y.rows());
    for (Eigen::Index j = 0; j < nd; ++j) q.y_prime += q.weights[j] * y.col(q.donors[static_cast<std::size_t>(j)]);
    return q;
}

Matrix ScModel::predict(const Matrix& xq, const Matrix& yq, const Vector& t_prime) const {
    require_shape(xq.cols() == t_prime.size() && yq.cols() == t_prime.size(), "sc_predict: batch size mismatch");
    Matrix out(y.rows(), t_prime.size());
    for (Eigen::Index i = 0; i < t_prime.size(); ++i) out.col(i) = query(xq.col(i), yq.col(i), t_prime[i]).y_prime;
    return out;
}

}  // namespace cfqp::baselines
