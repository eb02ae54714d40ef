#include "cfqp/nn.hpp"

#include "cfqp/io.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace cfqp::nn {

Mlp Mlp::create(const std::vector<int>& sizes, std::uint64_t seed) {
    if (sizes.size() < 2) throw ConfigError("Mlp needs at least an input and an output size");
    for (int s : sizes)
        if (s < 1) throw ConfigError("Mlp layer sizes must be positive");
    Mlp m;
    m.seed = seed;
    Rng rng(derive_seed(seed, streams::model_init));
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
        Layer layer;
        const int fan_in = sizes[l];
        const double limit = std::sqrt(6.0 / fan_in);
        layer.w.resize(sizes[l + 1], fan_in);
        for (Eigen::Index i = 0; i < layer.w.size(); ++i) layer.w.data()[i] = uniform(rng, -limit, limit);
        layer.b = Vector::Zero(sizes[l + 1]);
        m.layers.push_back(std::move(layer));
    }
    return m;
}

std::vector<int> Mlp::sizes() const {
    std::vector<int> s;
    if (layers.empty()) return s;
    s.push_back(d_in());
    for (const auto& l : layers) s.push_back(static_cast<int>(l.w.rows()));
    return s;
}

std::size_t Mlp::num_params() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += static_cast<std::size_t>(l.w.size() + l.b.size());
    return n;
}

Gradients zeros_like(const Mlp& m) {
    Gradients g;
    for (const auto& l : m.layers) g.push_back({Matrix::Zero(l.w.rows(), l.w.cols()), Vector::Zero(l.b.size())});
    return g;
}

Matrix forward(const Mlp& m, const Matrix& x) {
    require_shape(!m.layers.empty(), "forward: empty network");
    require_shape(x.rows() == m.d_in(), "forward: input has " + std::to_string(x.rows()) + " rows, network expects " +
                                            std::to_string(m.d_in()));
    Matrix a = x;
    for (std::size_t l = 0; l < m.layers.size(); ++l) {
        Matrix z = m.layers[l].w * a;
        z.colwise() += m.layers[l].b;
        if (l + 1 < m.layers.size()) z = z.cwiseMax(0.0);
        a = std::move(z);
    }
    return a;
}

double mse_and_grad(const Mlp& m, const Matrix& x, const Matrix& y, Gradients* grad) {
    require_shape(!m.layers.empty(), "mse_and_grad: empty network");
    require_shape(x.rows() == m.d_in() && x.cols() == y.cols() && y.rows() == m.d_out(),
                  "mse_and_grad: batch shapes do not match the network");
    require_shape(x.cols() > 0, "mse_and_grad: empty batch");

    const std::size_t n_layers = m.layers.size();
    std::vector<Matrix> acts;
    acts.reserve(n_layers + 1);
    acts.push_back(x);
    for (std::size_t l = 0; l < n_layers; ++l) {
        Matrix z = m.layers[l].w * acts.back();
        z.colwise() += m.layers[l].b;
        if (l + 1 < n_layers) z = z.cwiseMax(0.0);
        acts.push_back(std::move(z));
    }
    const Matrix diff = acts.back() - y;
    const double count = static_cast<double>(diff.size());
    const double loss = diff.squaredNorm() / count;
    if (!grad) return loss;

    if (grad->size() != n_layers) *grad = zeros_like(m);
    Matrix delta = (2.0 / count) * diff;
    for (std::size_t l = n_layers; l-- > 0;) {
        (*grad)[l].w.noalias() = delta * acts[l].transpose();
        (*grad)[l].b = delta.rowwise().sum();
        if (l == 0) break;
        Matrix back = m.layers[l].w.transpose() * delta;
        // ReLU derivative: post-activation is positive exactly where the unit was active.
        delta = back.cwiseProduct((acts[l].array() > 0.0).cast<double>().matrix());
    }
    return loss;
}

AdamState::AdamState(const Mlp& net, double learning_rate) : lr(learning_rate), m(zeros_like(net)), v(zeros_like(net)) {}

void AdamState::reset() {
    step = 0;
    for (auto& l : m) {
        l.w.setZero();
        l.b.setZero();
    }
    for (auto& l : v) {
        l.w.setZero();
        l.b.setZero();
    }
}

void adam_step(Mlp& net, const Gradients& g, AdamState& s) {
    require_shape(g.size() == net.layers.size() && s.m.size() == net.layers.size(),
                  "adam_step: gradient/state shapes do not match the network");
    ++s.step;
    const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
    const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
    const double lr = s.lr, b1 = s.beta1, b2 = s.beta2, eps = s.eps;
    auto update = [&](auto& param, const auto& grad, auto& m1, auto& m2) {
        m1 = b1 * m1 + (1.0 - b1) * grad;
        m2 = b2 * m2 + (1.0 - b2) * grad.cwiseAbs2();
        param.array() -= lr * (m1.array() / c1) / ((m2.array() / c2).sqrt() + eps);
    };
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        update(net.layers[l].w, g[l].w, s.m[l].w, s.v[l].w);
        update(net.layers[l].b, g[l].b, s.m[l].b, s.v[l].b);
    }
}

std::vector<double> train_epochs(Mlp& net, AdamState& adam, const Matrix& x, const Matrix& y,
                                 const TrainConfig& cfg) {
    if (x.cols() == 0) throw ConfigError("train_epochs: no training data");
    require_shape(x.cols() == y.cols(), "train_epochs: x and y sample counts differ");
    if (cfg.batch_size < 1) throw ConfigError("train_epochs: batch_size must be positive");
    if (cfg.epochs < 0) throw ConfigError("train_epochs: epochs must be non-negative");
    if (adam.m.size() != net.layers.size()) adam = AdamState(net, adam.lr);

    const auto n = static_cast<std::size_t>(x.cols());
    const auto bs = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size), n);
    std::vector<Eigen::Index> order(n);
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    Rng rng(derive_seed(cfg.seed, streams::shuffle));

    Gradients grad = zeros_like(net);
    Matrix xb(x.rows(), static_cast<Eigen::Index>(bs));
    Matrix yb(y.rows(), static_cast<Eigen::Index>(bs));
    std::vector<double> trace;
    trace.reserve(static_cast<std::size_t>(cfg.epochs));
    for (int e = 0; e < cfg.epochs; ++e) {
        std::shuffle(order.begin(), order.end(), rng);
        double total = 0.0;
        for (std::size_t start = 0; start < n; start += bs) {
            const auto len = static_cast<Eigen::Index>(std::min(bs, n - start));
            xb.resize(x.rows(), len);
            yb.resize(y.rows(), len);
            for (Eigen::Index j = 0; j < len; ++j) {
                xb.col(j) = x.col(order[start + static_cast<std::size_t>(j)]);
                yb.col(j) = y.col(order[start + static_cast<std::size_t>(j)]);
            }
            const double loss = mse_and_grad(net, xb, yb, &grad);
            if (!std::isfinite(loss)) throw NumericError("train_epochs: loss became non-finite");
            total += loss * static_cast<double>(len);
            adam_step(net, grad, adam);
            if (cfg.weight_decay > 0.0)
                for (auto& l : net.layers) l.w *= 1.0 - adam.lr * cfg.weight_decay;
        }
        trace.push_back(total / static_cast<double>(n));
    }
    return trace;
}

// ---------------------------------------------------------------------------

std::string to_string(InputScaling m) {
    switch (m) {
        case InputScaling::none: return "none";
        case InputScaling::center: return "center";
        case InputScaling::zscore: return "zscore";
    }
    return "?";
}

InputScaling parse_input_scaling(const std::string& s) {
    if (s == "none") return InputScaling::none;
    if (s == "center") return InputScaling::center;
    if (s == "zscore") return InputScaling::zscore;
    throw ConfigError("unknown input scaling '" + s + "'");
}

Standardizer Standardizer::fit(const Matrix& inputs, const Matrix& outputs, InputScaling mode, double floor) {
    require_shape(inputs.cols() > 0 && inputs.cols() == outputs.cols(), "Standardizer::fit: bad shapes");
    Standardizer s;
    const double n = static_cast<double>(inputs.cols());
    s.in_mean = Vector::Zero(inputs.rows());
    s.in_scale = Vector::Ones(inputs.rows());
    if (mode != InputScaling::none) s.in_mean = inputs.rowwise().mean();
    if (mode == InputScaling::zscore) {
        s.in_scale = ((inputs.colwise() - s.in_mean).array().square().rowwise().sum() / n).sqrt().matrix();
        for (Eigen::Index i = 0; i < s.in_scale.size(); ++i)
            if (s.in_scale[i] < floor) s.in_scale[i] = 1.0;
    }
    s.out_mean = outputs.rowwise().mean();
    const double var = (outputs.colwise() - s.out_mean).squaredNorm() / (n * static_cast<double>(outputs.rows()));
    s.out_scale = std::sqrt(var) < floor ? 1.0 : std::sqrt(var);
    return s;
}

Standardizer Standardizer::identity(int d_in, int d_out) {
    Standardizer s;
    s.in_mean = Vector::Zero(d_in);
    s.in_scale = Vector::Ones(d_in);
    s.out_mean = Vector::Zero(d_out);
    return s;
}

Matrix Standardizer::input(const Matrix& raw) const {
    require_shape(raw.rows() == in_mean.size(), "Standardizer: input width mismatch");
    return (raw.colwise() - in_mean).array().colwise() / in_scale.array();
}

Matrix Standardizer::output(const Matrix& raw) const {
    require_shape(raw.rows() == out_mean.size(), "Standardizer: output width mismatch");
    return (raw.colwise() - out_mean) / out_scale;
}

Matrix Standardizer::output_inverse(const Matrix& scaled) const {
    require_shape(scaled.rows() == out_mean.size(), "Standardizer: output width mismatch");
    return (scaled * out_scale).colwise() + out_mean;
}

namespace {
std::vector<double> to_vec(const Vector& v) { return {v.data(), v.data() + v.size()}; }
Vector from_vec(const std::vector<double>& v) { return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size())); }
}  // namespace

void to_json(nlohmann::json& j, const Standardizer& s) {
    j = nlohmann::json{{"in_mean", to_vec(s.in_mean)},
                       {"in_scale", to_vec(s.in_scale)},
                       {"out_mean", to_vec(s.out_mean)},
                       {"out_scale", s.out_scale}};
}

void from_json(const nlohmann::json& j, Standardizer& s) {
    s.in_mean = from_vec(j.at("in_mean").get<std::vector<double>>());
    s.in_scale = from_vec(j.at("in_scale").get<std::vector<double>>());
    s.out_mean = from_vec(j.at("out_mean").get<std::vector<double>>());
    s.out_scale = j.at("out_scale").get<double>();
    if (s.in_mean.size() != s.in_scale.size()) throw ParseError("standardizer: inconsistent input sizes", 0);
}

// ---------------------------------------------------------------------------

void save_mlp(const Mlp& m, long adam_step, const std::filesystem::path& json_path,
              const std::filesystem::path& blob_path) {
    std::vector<std::uint8_t> blob;
    for (const auto& l : m.layers) {
        io::append_f32_le(blob, l.w.data(), static_cast<std::size_t>(l.w.size()));
        io::append_f32_le(blob, l.b.data(), static_cast<std::size_t>(l.b.size()));
    }
    const nlohmann::json header{{"format", "cfqp-mlp"},
                                {"version", 1},
                                {"sizes", m.sizes()},
                                {"seed", m.seed},
                                {"step", adam_step},
                                {"activation", "relu"},
                                {"blob", blob_path.filename().string()},
                                {"checksum", io::sha1_hex(blob)}};
    io::write_bytes(blob_path, blob);
    io::write_text(json_path, header.dump(2) + "\n");
}

Mlp load_mlp(const std::filesystem::path& json_path, const std::filesystem::path& blob_path) {
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(io::read_text(json_path));
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(std::string("model header: ") + e.what(), e.byte);
    }
    if (header.value("format", std::string()) != "cfqp-mlp") throw ParseError("not a cfqp model header", 0);
    const auto sizes = header.at("sizes").get<std::vector<int>>();
    const auto blob = io::read_bytes(blob_path);
    if (io::sha1_hex(blob) != header.at("checksum").get<std::string>()) throw ParseError("model blob checksum mismatch", 0);
    const auto values = io::decode_f32_le(blob);

    Mlp m = Mlp::create(sizes, header.value("seed", std::uint64_t{0}));
    std::size_t pos = 0;
    for (auto& l : m.layers) {
        const auto nw = static_cast<std::size_t>(l.w.size());
        const auto nb = static_cast<std::size_t>(l.b.size());
        if (pos + nw + nb > values.size()) throw ParseError("model blob too short", 4 * values.size());
        std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(pos), nw, l.w.data());
        pos += nw;
        std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(pos), nb, l.b.data());
        pos += nb;
    }
    if (pos != values.size()) throw ParseError("model blob has trailing data", 4 * pos);
    return m;
}

}  // namespace cfqp::nn
