#include "cfqp/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <queue>
#include <vector>

namespace cfqp::metrics {

double cf_mse(const Matrix& truth, const Matrix& pred) {
    require_shape(truth.rows() == pred.rows() && truth.cols() == pred.cols(), "cf_mse: shape mismatch");
    require_shape(truth.size() > 0, "cf_mse: empty input");
    return (truth - pred).squaredNorm() / static_cast<double>(truth.size());
}

double pehe(const Matrix& y_t1, const Matrix& y_t2, const Matrix& yhat_t1, const Matrix& yhat_t2) {
    const auto same = [&](const Matrix& m) { return m.rows() == y_t1.rows() && m.cols() == y_t1.cols(); };
    require_shape(same(y_t2) && same(yhat_t1) && same(yhat_t2), "pehe: shape mismatch");
    require_shape(y_t1.size() > 0, "pehe: empty input");
    const Matrix err = (y_t2 - y_t1) - (yhat_t2 - yhat_t1);
    return std::sqrt(err.squaredNorm() / static_cast<double>(err.size()));
}

namespace {

std::vector<int> tile_starts(int size, int window) {
    std::vector<int> starts;
    for (int s = 0; s + window <= size; s += window) starts.push_back(s);
    if (size % window != 0) starts.push_back(size - window);
    return starts;
}

}  // namespace

double ssim(const Eigen::Ref<const Vector>& a, const Eigen::Ref<const Vector>& b, int rows, int cols, int channels,
            const SsimOptions& opts) {
    require_shape(a.size() == b.size(), "ssim: image sizes differ");
    require_shape(a.size() == static_cast<Eigen::Index>(rows) * cols * channels, "ssim: size does not match shape");
    if (opts.window < 1) throw ConfigError("ssim: window must be positive");
    if (rows < opts.window || cols < opts.window) throw ShapeError("ssim: image smaller than window");
    const double c1 = std::pow(opts.k1 * opts.dynamic_range, 2);
    const double c2 = std::pow(opts.k2 * opts.dynamic_range, 2);
    const auto rs = tile_starts(rows, opts.window);
    const auto cs = tile_starts(cols, opts.window);
    const double n = static_cast<double>(opts.window) * opts.window;

    double total = 0.0;
    int count = 0;
    for (int ch = 0; ch < channels; ++ch) {
        const Eigen::Index plane = static_cast<Eigen::Index>(ch) * rows * cols;
        for (int r0 : rs) {
            for (int c0 : cs) {
                double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
                for (int r = r0; r < r0 + opts.window; ++r) {
                    for (int c = c0; c < c0 + opts.window; ++c) {
                        const double va = a[plane + r * cols + c];
                        const double vb = b[plane + r * cols + c];
                        sa += va;
                        sb += vb;
                        saa += va * va;
                        sbb += vb * vb;
                        sab += va * vb;
                    }
                }
                const double ma = sa / n, mb = sb / n;
                const double va = saa / n - ma * ma;
                const double vb = sbb / n - mb * mb;
                const double cov = sab / n - ma * mb;
                total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                ++count;
            }
        }
    }
    return total / count;
}

double mean_ssim(const Matrix& a, const Matrix& b, int rows, int cols, int channels, const SsimOptions& opts) {
    require_shape(a.rows() == b.rows() && a.cols() == b.cols(), "mean_ssim: shape mismatch");
    require_shape(a.cols() > 0, "mean_ssim: empty input");
    double total = 0.0;
    for (Eigen::Index i = 0; i < a.cols(); ++i) total += ssim(a.col(i), b.col(i), rows, cols, channels, opts);
    return total / static_cast<double>(a.cols());
}

void DiscreteDistribution::validate(double tol) const {
    require_shape(weights.size() >= 1, "DiscreteDistribution: no atoms");
    require_shape(atoms.cols() == weights.size(), "DiscreteDistribution: atoms and weights differ in count");
    if ((weights.array() < 0.0).any()) throw NumericError("DiscreteDistribution: negative weight");
    if (std::abs(weights.sum() - 1.0) > tol) throw NumericError("DiscreteDistribution: weights do not sum to 1");
}

Matrix pairwise_distances(const Matrix& a, const Matrix& b) {
    require_shape(a.rows() == b.rows(), "pairwise_distances: dimension mismatch");
    Matrix d(a.cols(), b.cols());
    for (Eigen::Index j = 0; j < b.cols(); ++j)
        d.col(j) = (a.colwise() - b.col(j)).colwise().norm().transpose();
    return d;
}

TransportResult transport_exact(const Vector& supply, const Vector& demand, const Matrix& cost) {
    const Eigen::Index m = supply.size(), n = demand.size();
    require_shape(m >= 1 && n >= 1, "transport_exact: empty marginal");
    require_shape(cost.rows() == m && cost.cols() == n, "transport_exact: cost shape mismatch");
    if ((supply.array() < 0).any() || (demand.array() < 0).any())
        throw NumericError("transport_exact: negative mass");
    const double total = supply.sum();
    if (std::abs(total - demand.sum()) > 1e-9 * std::max(1.0, total))
        throw NumericError("transport_exact: unbalanced marginals");

    const double tol = 1e-14 * std::max(1.0, total);
    const double inf = std::numeric_limits<double>::infinity();
    Vector rs = supply, rd = demand;
    Matrix flow = Matrix::Zero(m, n);
    // Node potentials; reduced cost of an edge a -> b with cost w is w + pi(a) - pi(b).
    Vector pu = Vector::Zero(m), pv = Vector::Zero(n);
    Vector du(m), dv(n);
    std::vector<Eigen::Index> pred_u(static_cast<std::size_t>(m)), pred_v(static_cast<std::size_t>(n));
    std::vector<char> done_u(static_cast<std::size_t>(m)), done_v(static_cast<std::size_t>(n));

    // Heap entries encode sinks as m + j.
    using Item = std::pair<double, Eigen::Index>;
    while (rs.sum() > tol) {
        du.setConstant(inf);
        dv.setConstant(inf);
        std::fill(done_u.begin(), done_u.end(), 0);
        std::fill(done_v.begin(), done_v.end(), 0);
        std::priority_queue<Item, std::vector<Item>, std::greater<>> heap;
        for (Eigen::Index i = 0; i < m; ++i) {
            pred_u[static_cast<std::size_t>(i)] = -1;
            if (rs[i] > tol) {
                du[i] = 0.0;
                heap.emplace(0.0, i);
            }
        }
        Eigen::Index target = -1;
        double reach = inf;
        while (!heap.empty()) {
            const auto [d, node] = heap.top();
            heap.pop();
            if (node < m) {
                if (done_u[static_cast<std::size_t>(node)] || d > du[node]) continue;
                done_u[static_cast<std::size_t>(node)] = 1;
                for (Eigen::Index j = 0; j < n; ++j) {
                    if (done_v[static_cast<std::size_t>(j)]) continue;
                    const double nd = d + std::max(0.0, cost(node, j) + pu[node] - pv[j]);
                    if (nd < dv[j]) {
                        dv[j] = nd;
                        pred_v[static_cast<std::size_t>(j)] = node;
                        heap.emplace(nd, m + j);
                    }
                }
            } else {
                const Eigen::Index j = node - m;
                if (done_v[static_cast<std::size_t>(j)] || d > dv[j]) continue;
                done_v[static_cast<std::size_t>(j)] = 1;
                if (rd[j] > tol) {
                    target = j;
                    reach = d;
                    break;
                }
                for (Eigen::Index i = 0; i < m; ++i) {
                    if (done_u[static_cast<std::size_t>(i)] || flow(i, j) <= tol) continue;
                    const double nd = d + std::max(0.0, -cost(i, j) + pv[j] - pu[i]);
                    if (nd < du[i]) {
                        du[i] = nd;
                        pred_u[static_cast<std::size_t>(i)] = j;
                        heap.emplace(nd, i);
                    }
                }
            }
        }
        if (target < 0) break;  // only rounding residue is left

        for (Eigen::Index i = 0; i < m; ++i) pu[i] += std::min(du[i], reach);
        for (Eigen::Index j = 0; j < n; ++j) pv[j] += std::min(dv[j], reach);

        // Walk back to find the bottleneck, then push flow along the path.
        double push = rd[target];
        Eigen::Index j = target;
        Eigen::Index i = pred_v[static_cast<std::size_t>(j)];
        while (true) {
            const Eigen::Index back = pred_u[static_cast<std::size_t>(i)];
            if (back < 0) {
                push = std::min(push, rs[i]);
                break;
            }
            push = std::min(push, flow(i, back));
            j = back;
            i = pred_v[static_cast<std::size_t>(j)];
        }
        j = target;
        i = pred_v[static_cast<std::size_t>(j)];
        rd[target] -= push;
        while (true) {
            flow(i, j) += push;
            const Eigen::Index back = pred_u[static_cast<std::size_t>(i)];
            if (back < 0) {
                rs[i] -= push;
                break;
            }
            flow(i, back) -= push;
            j = back;
            i = pred_v[static_cast<std::size_t>(j)];
        }
    }

    TransportResult res;
    res.cost = (flow.array() * cost.array()).sum();
    res.plan = std::move(flow);
    return res;
}

double w1_discrete(const DiscreteDistribution& p, const DiscreteDistribution& q) {
    p.validate();
    q.validate();
    require_shape(p.dim() == q.dim(), "w1_discrete: atom dimensions differ");
    if (p.size() > kMaxW1Atoms || q.size() > kMaxW1Atoms)
        throw ConfigError("w1_discrete: support larger than " + std::to_string(kMaxW1Atoms) + " atoms");
    // Renormalise so the solver sees exactly balanced marginals.
    const Vector a = p.weights / p.weights.sum();
    const Vector b = q.weights / q.weights.sum();
    return transport_exact(a, b, pairwise_distances(p.atoms, q.atoms)).cost;
}

}  // namespace cfqp::metrics
