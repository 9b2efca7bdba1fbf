#pragma once

// Fully-connected autoencoder authenticator. Hidden layers use tanh, the
// output layer is linear; loss is the mean squared reconstruction error
// averaged over samples and features.

#include <Eigen/Dense>

#include "common.hpp"

namespace canid {

class TrainingDiverged : public ModelError {
public:
    TrainingDiverged(std::size_t epoch, double lr)
        : ModelError("autoencoder training diverged at epoch " + std::to_string(epoch) + " (learning rate " +
                     std::to_string(lr) + ")"),
          epoch_(epoch), lr_(lr) {}
    std::size_t epoch() const { return epoch_; }
    double learning_rate() const { return lr_; }

private:
    std::size_t epoch_;
    double lr_;
};

struct AutoencoderOptions {
    /// Hidden widths from input side to bottleneck; mirrored on the way out.
    std::vector<std::size_t> encoder = {32, 8};
    std::size_t epochs = 200;
    double learning_rate = 0.01;
    std::size_t batch_size = 16;
    std::uint64_t seed = 1;
    double quantile = 0.99;
};

struct Layer {
    Eigen::MatrixXd weight;  // out x in
    Eigen::VectorXd bias;
};

struct AutoencoderModel {
    Schema schema;
    std::vector<std::size_t> sizes;  // input, hidden..., output
    std::vector<Layer> layers;
    double threshold = 0.0;
    double quantile = 0.99;
    std::vector<double> loss_history;
    std::vector<double> training_errors;

    std::size_t input_dim() const { return sizes.front(); }
    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& l : layers) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
        return n;
    }
};

/// Full layer widths for a given input dimension, e.g. d -> 32 -> 8 -> 32 -> d.
inline std::vector<std::size_t> mirrored_layout(std::size_t input, const std::vector<std::size_t>& encoder) {
    std::vector<std::size_t> s{input};
    s.insert(s.end(), encoder.begin(), encoder.end());
    for (auto it = encoder.rbegin() + 1; it < encoder.rend(); ++it) s.push_back(*it);
    s.push_back(input);
    return s;
}

/// Layers with weights uniform in (-1/sqrt(fan_in), 1/sqrt(fan_in)) and zero biases.
inline AutoencoderModel init_autoencoder(std::vector<std::size_t> sizes, std::uint64_t seed) {
    if (sizes.size() < 3) throw UsageError("autoencoder needs at least one hidden layer");
    if (sizes.front() != sizes.back()) throw UsageError("autoencoder output width must equal input width");
    AutoencoderModel m;
    m.sizes = std::move(sizes);
    Rng rng(seed);
    for (std::size_t l = 0; l + 1 < m.sizes.size(); ++l) {
        auto in = static_cast<Eigen::Index>(m.sizes[l]), out = static_cast<Eigen::Index>(m.sizes[l + 1]);
        double r = 1.0 / std::sqrt(static_cast<double>(in));
        Layer layer{Eigen::MatrixXd(out, in), Eigen::VectorXd::Zero(out)};
        for (Eigen::Index i = 0; i < out; ++i)
            for (Eigen::Index j = 0; j < in; ++j) layer.weight(i, j) = rng.uniform(-r, r);
        m.layers.push_back(std::move(layer));
    }
    return m;
}

/// Activations of every layer for a batch stored column-wise (features x samples).
inline std::vector<Eigen::MatrixXd> forward(const AutoencoderModel& m, const Eigen::MatrixXd& x) {
    std::vector<Eigen::MatrixXd> acts{x};
    for (std::size_t l = 0; l < m.layers.size(); ++l) {
        Eigen::MatrixXd z = (m.layers[l].weight * acts.back()).colwise() + m.layers[l].bias;
        if (l + 1 < m.layers.size()) z = z.array().tanh().matrix();
        acts.push_back(std::move(z));
    }
    return acts;
}

inline double reconstruction_loss(const AutoencoderModel& m, const Eigen::MatrixXd& x) {
    Eigen::MatrixXd y = forward(m, x).back();
    return (y - x).squaredNorm() / static_cast<double>(x.size());
}

/// Loss and analytic gradients (same layout as m.layers) over a batch.
inline double loss_and_gradient(const AutoencoderModel& m, const Eigen::MatrixXd& x, std::vector<Layer>& grad) {
    auto acts = forward(m, x);
    const double scale = 1.0 / static_cast<double>(x.size());
    Eigen::MatrixXd delta = 2.0 * scale * (acts.back() - x);
    double loss = (acts.back() - x).squaredNorm() * scale;
    grad.resize(m.layers.size());
    for (std::size_t l = m.layers.size(); l-- > 0;) {
        grad[l].weight = delta * acts[l].transpose();
        grad[l].bias = delta.rowwise().sum();
        if (l > 0) {
            Eigen::MatrixXd back = m.layers[l].weight.transpose() * delta;
            delta = back.array() * (1.0 - acts[l].array().square());
        }
    }
    return loss;
}

/// Per-sample mean squared reconstruction error.
inline double reconstruction_error(const AutoencoderModel& m, std::span<const double> x) {
    Eigen::Map<const Eigen::VectorXd> xv(x.data(), static_cast<Eigen::Index>(x.size()));
    Eigen::MatrixXd col = xv;
    return reconstruction_loss(m, col);
}

inline Eigen::MatrixXd to_columns(const std::vector<FeatureVector>& vectors) {
    return to_matrix(vectors).transpose();
}

inline AutoencoderModel autoencoder_train(const std::vector<FeatureVector>& vectors, const AutoencoderOptions& opt) {
    if (vectors.empty()) throw DataError("autoencoder needs training data");
    const std::size_t d = vectors.front().values.size();
    if (opt.encoder.empty()) throw UsageError("autoencoder needs at least one hidden layer");
    auto sizes = mirrored_layout(d, opt.encoder);
    if (opt.encoder.back() > d) throw UsageError("autoencoder bottleneck must not exceed the input dimension");
    if (opt.batch_size < 1 || !(opt.learning_rate > 0)) throw UsageError("autoencoder batch size and learning rate must be positive");
    for (const auto& v : vectors) {
        require_schema(*vectors.front().schema, *v.schema, "autoencoder_train");
        require_finite(v.values, "autoencoder_train");
    }

    AutoencoderModel m = init_autoencoder(sizes, opt.seed);
    m.schema = *vectors.front().schema;
    m.quantile = opt.quantile;
    const Eigen::MatrixXd x = to_columns(vectors);
    const auto n = static_cast<std::size_t>(x.cols());
    Rng rng(opt.seed ^ 0x9E3779B97F4A7C15ull);
    std::vector<Eigen::Index> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = static_cast<Eigen::Index>(i);
    std::vector<Layer> grad;

    for (std::size_t epoch = 1; epoch <= opt.epochs; ++epoch) {
        rng.shuffle(order);
        for (std::size_t s = 0; s < n; s += opt.batch_size) {
            std::size_t e = std::min(n, s + opt.batch_size);
            Eigen::MatrixXd batch(x.rows(), static_cast<Eigen::Index>(e - s));
            for (std::size_t i = s; i < e; ++i) batch.col(static_cast<Eigen::Index>(i - s)) = x.col(order[i]);
            loss_and_gradient(m, batch, grad);
            for (std::size_t l = 0; l < m.layers.size(); ++l) {
                m.layers[l].weight -= opt.learning_rate * grad[l].weight;
                m.layers[l].bias -= opt.learning_rate * grad[l].bias;
            }
        }
        double loss = reconstruction_loss(m, x);
        if (!std::isfinite(loss)) throw TrainingDiverged(epoch, opt.learning_rate);
        m.loss_history.push_back(loss);
    }
    m.training_errors.reserve(n);
    for (const auto& v : vectors) m.training_errors.push_back(reconstruction_error(m, v.values));
    m.threshold = quantile_threshold(m.training_errors, opt.quantile);
    return m;
}

inline AuthDecision autoencoder_decide(const AutoencoderModel& m, std::span<const double> x) {
    if (x.size() != m.input_dim()) throw ModelError("autoencoder_decide: feature schema mismatch");
    AuthDecision d;
    d.score = reconstruction_error(m, x);
    d.threshold = m.threshold;
    d.verdict = d.score <= m.threshold ? Verdict::authorized : Verdict::unauthorized;
    return d;
}

}  // namespace canid
