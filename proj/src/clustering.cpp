#include "cfqp/clustering.hpp"

#include "cfqp/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

namespace cfqp::cluster {

int nearest(const Eigen::Ref<const Vector>& point, const Matrix& centres) {
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < centres.cols(); ++j) {
        const double d = (point - centres.col(j)).squaredNorm();
        if (d < best_d) {
            best_d = d;
            best = static_cast<int>(j);
        }
    }
    return best;
}

int assign_by_residual(const Eigen::Ref<const Vector>& y, const Matrix& predictions) {
    require_shape(predictions.cols() >= 1, "assign_by_residual: no predictions");
    require_shape(predictions.rows() == y.size(), "assign_by_residual: dimension mismatch");
    return nearest(y, predictions);
}

namespace {

Matrix kmeanspp_init(const Matrix& points, int k, Rng& rng) {
    const Eigen::Index n = points.cols();
    Matrix centres(points.rows(), k);
    std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
    centres.col(0) = points.col(pick(rng));
    Vector d2 = (points.colwise() - centres.col(0)).colwise().squaredNorm().transpose();
    for (int c = 1; c < k; ++c) {
        const double total = d2.sum();
        Eigen::Index chosen = 0;
        if (total <= 0.0) {
            chosen = pick(rng);
        } else {
            double r = uniform(rng, 0.0, total);
            for (chosen = 0; chosen + 1 < n; ++chosen) {
                r -= d2[chosen];
                if (r < 0.0) break;
            }
        }
        centres.col(c) = points.col(chosen);
        d2 = d2.cwiseMin((points.colwise() - centres.col(c)).colwise().squaredNorm().transpose());
    }
    return centres;
}

KmeansResult lloyd(const Matrix& points, Matrix centres, int iters) {
    const Eigen::Index n = points.cols();
    const int k = static_cast<int>(centres.cols());
    KmeansResult res;
    res.assignment.assign(static_cast<std::size_t>(n), -1);
    Vector dist(n);
    for (int it = 0; it < iters; ++it) {
        bool changed = false;
        double inertia = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            const int a = nearest(points.col(i), centres);
            dist[i] = (points.col(i) - centres.col(a)).squaredNorm();
            inertia += dist[i];
            if (a != res.assignment[static_cast<std::size_t>(i)]) changed = true;
            res.assignment[static_cast<std::size_t>(i)] = a;
        }
        res.inertia_trace.push_back(inertia);
        res.iterations = it + 1;
        if (!changed && it > 0) break;

        Matrix sums = Matrix::Zero(points.rows(), k);
        std::vector<int> counts(static_cast<std::size_t>(k), 0);
        for (Eigen::Index i = 0; i < n; ++i) {
            const int a = res.assignment[static_cast<std::size_t>(i)];
            sums.col(a) += points.col(i);
            ++counts[static_cast<std::size_t>(a)];
        }
        for (int c = 0; c < k; ++c) {
            if (counts[static_cast<std::size_t>(c)] > 0) {
                centres.col(c) = sums.col(c) / counts[static_cast<std::size_t>(c)];
            } else {
                // Empty cluster: move it onto the point currently worst served.
                Eigen::Index far = 0;
                dist.maxCoeff(&far);
                centres.col(c) = points.col(far);
                dist[far] = 0.0;
            }
        }
    }
    // Final assignment against the final centres so assignment and inertia agree exactly.
    res.inertia = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        const int a = nearest(points.col(i), centres);
        res.assignment[static_cast<std::size_t>(i)] = a;
        res.inertia += (points.col(i) - centres.col(a)).squaredNorm();
    }
    res.centroids = std::move(centres);
    return res;
}

}  // namespace

KmeansResult kmeans_fit(const Matrix& points, int k, const KmeansOptions& opts) {
    if (k < 1) throw ConfigError("kmeans_fit: k must be positive");
    if (points.cols() < k) throw ConfigError("kmeans_fit: fewer points than clusters");
    if (opts.restarts < 1 || opts.iters < 1) throw ConfigError("kmeans_fit: restarts and iters must be positive");
    KmeansResult best;
    best.inertia = std::numeric_limits<double>::infinity();
    for (int r = 0; r < opts.restarts; ++r) {
        Rng rng = make_rng(opts.seed, streams::clustering, static_cast<std::uint64_t>(r));
        KmeansResult res = lloyd(points, kmeanspp_init(points, k, rng), opts.iters);
        if (res.inertia < best.inertia) best = std::move(res);
    }
    return best;
}

// ---------------------------------------------------------------------------

Matrix gmm_log_joint(const Vector& weights, const Matrix& means, const Matrix& variances, const Matrix& points) {
    require_shape(means.rows() == points.rows() && variances.rows() == points.rows() &&
                      means.cols() == weights.size() && variances.cols() == weights.size(),
                  "gmm_log_joint: inconsistent shapes");
    const Eigen::Index k = weights.size();
    const double d = static_cast<double>(points.rows());
    Matrix out(k, points.cols());
    for (Eigen::Index c = 0; c < k; ++c) {
        const Vector inv = variances.col(c).cwiseInverse();
        const double norm =
            std::log(weights[c]) - 0.5 * (d * std::log(2.0 * std::numbers::pi) + variances.col(c).array().log().sum());
        out.row(c) = (norm - 0.5 * ((points.colwise() - means.col(c)).array().square().colwise() * inv.array())
                                       .colwise()
                                       .sum())
                         .matrix();
    }
    return out;
}

Matrix normalize_log_columns(const Matrix& log_joint) {
    Matrix out(log_joint.rows(), log_joint.cols());
    for (Eigen::Index i = 0; i < log_joint.cols(); ++i) {
        const double mx = log_joint.col(i).maxCoeff();
        if (!std::isfinite(mx)) {
            out.col(i).setConstant(1.0 / static_cast<double>(log_joint.rows()));
            continue;
        }
        out.col(i) = (log_joint.col(i).array() - mx).exp().matrix();
        out.col(i) /= out.col(i).sum();
    }
    return out;
}

namespace {

double mean_loglik(const Matrix& log_joint) {
    double total = 0.0;
    for (Eigen::Index i = 0; i < log_joint.cols(); ++i) {
        const double mx = log_joint.col(i).maxCoeff();
        total += mx + std::log((log_joint.col(i).array() - mx).exp().sum());
    }
    return total / static_cast<double>(log_joint.cols());
}

}  // namespace

std::vector<int> GmmResult::hard_assignment() const {
    std::vector<int> out(static_cast<std::size_t>(resp.cols()));
    for (Eigen::Index i = 0; i < resp.cols(); ++i) {
        Eigen::Index best = 0;
        resp.col(i).maxCoeff(&best);
        out[static_cast<std::size_t>(i)] = static_cast<int>(best);
    }
    return out;
}

GmmResult gmm_fit(const Matrix& points, int k, const GmmOptions& opts) {
    if (k < 1) throw ConfigError("gmm_fit: k must be positive");
    if (points.cols() < k) throw ConfigError("gmm_fit: fewer points than components");
    const Eigen::Index d = points.rows();

    Matrix sub;
    if (opts.max_subsample > 0 && static_cast<std::size_t>(points.cols()) > opts.max_subsample) {
        std::vector<Eigen::Index> idx(static_cast<std::size_t>(points.cols()));
        std::iota(idx.begin(), idx.end(), Eigen::Index{0});
        Rng rng = make_rng(opts.seed, streams::clustering, 1000003);
        std::shuffle(idx.begin(), idx.end(), rng);
        idx.resize(opts.max_subsample);
        std::sort(idx.begin(), idx.end());
        sub.resize(d, static_cast<Eigen::Index>(idx.size()));
        for (std::size_t j = 0; j < idx.size(); ++j) sub.col(static_cast<Eigen::Index>(j)) = points.col(idx[j]);
    } else {
        sub = points;
    }
    const Eigen::Index n = sub.cols();

    KmeansOptions kopts;
    kopts.restarts = 3;
    kopts.seed = opts.seed;
    const auto km = kmeans_fit(sub, k, kopts);

    GmmResult g;
    g.means = km.centroids;
    g.weights = Vector::Zero(k);
    g.variances = Matrix::Zero(d, k);
    for (Eigen::Index i = 0; i < n; ++i) {
        const int a = km.assignment[static_cast<std::size_t>(i)];
        g.weights[a] += 1.0;
        g.variances.col(a) += (sub.col(i) - g.means.col(a)).cwiseAbs2();
    }
    const Vector global_var =
        ((sub.colwise() - sub.rowwise().mean()).array().square().rowwise().sum() / static_cast<double>(n)).matrix();
    for (int c = 0; c < k; ++c) {
        if (g.weights[c] > 0) g.variances.col(c) /= g.weights[c];
        else g.variances.col(c) = global_var;
        g.variances.col(c) = g.variances.col(c).cwiseMax(opts.var_floor);
    }
    g.weights = (g.weights.array() + 1e-12).matrix();
    g.weights /= g.weights.sum();

    double prev = -std::numeric_limits<double>::infinity();
    for (int it = 0; it < opts.iters; ++it) {
        const Matrix lj = gmm_log_joint(g.weights, g.means, g.variances, sub);
        const double ll = mean_loglik(lj);
        g.loglik_trace.push_back(ll);
        const Matrix r = normalize_log_columns(lj);

        // M-step.
        const Vector nk = r.rowwise().sum();
        for (int c = 0; c < k; ++c) {
            if (nk[c] / static_cast<double>(n) < 1e-6) {
                // Degenerate component: re-seed it on the point the mixture explains worst.
                Eigen::Index worst = 0;
                Vector pointwise(n);
                for (Eigen::Index i = 0; i < n; ++i) pointwise[i] = lj.col(i).maxCoeff();
                pointwise.minCoeff(&worst);
                g.means.col(c) = sub.col(worst);
                g.variances.col(c) = global_var.cwiseMax(opts.var_floor);
                g.weights[c] = 1.0 / static_cast<double>(n);
                continue;
            }
            g.weights[c] = nk[c] / static_cast<double>(n);
            g.means.col(c) = sub * r.row(c).transpose() / nk[c];
            const Matrix centred = sub.colwise() - g.means.col(c);
            g.variances.col(c) =
                (centred.array().square().matrix() * r.row(c).transpose() / nk[c]).cwiseMax(opts.var_floor);
        }
        g.weights /= g.weights.sum();
        if (it > 0 && std::abs(ll - prev) <= opts.tol * std::max(1.0, std::abs(ll))) break;
        prev = ll;
    }
    g.resp = normalize_log_columns(gmm_log_joint(g.weights, g.means, g.variances, points));
    return g;
}

}  // namespace cfqp::cluster
