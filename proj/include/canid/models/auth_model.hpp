#pragma once

// A trained authenticator bundled with the feature pipeline and standardizer
// it expects, plus the on-disk record format.

#include <fstream>
#include <variant>

#include "autoencoder.hpp"
#include "kmeans.hpp"
#include "knn.hpp"
#include "metrics.hpp"

namespace canid {

enum class ModelKind { knn, kmeans, autoencoder };

inline const char* to_string(ModelKind k) {
    switch (k) {
        case ModelKind::knn: return "knn";
        case ModelKind::kmeans: return "kmeans";
        case ModelKind::autoencoder: return "autoencoder";
    }
    return "?";
}

inline std::optional<ModelKind> parse_model_kind(std::string_view s) {
    for (auto k : {ModelKind::knn, ModelKind::kmeans, ModelKind::autoencoder})
        if (s == to_string(k)) return k;
    return std::nullopt;
}

struct TrainOptions {
    ModelKind kind = ModelKind::kmeans;
    std::set<std::string> authorized;
    std::uint64_t seed = 1;
    std::size_t knn_k = 5;
    KmeansOptions kmeans;
    AutoencoderOptions autoencoder;
};

struct AuthModel {
    static constexpr int kFormatVersion = 1;
    inline static const std::string kFormatName = "canid-auth-model";

    ModelKind kind = ModelKind::kmeans;
    FeaturePipeline pipeline;
    /// Schema of the vectors the model consumes (pipeline output).
    Schema schema;
    Standardizer standardizer;
    std::set<std::string> authorized;
    std::uint64_t seed = 1;
    std::variant<KnnModel, KmeansAuthenticator, AutoencoderModel> model;

    /// Decision for one pipeline-output vector.
    AuthDecision decide(const FeatureVector& v) const {
        require_schema(schema, *v.schema, "AuthModel::decide");
        auto z = standardizer.apply(v.values);
        AuthDecision d;
        std::visit(
            [&](const auto& m) {
                using M = std::decay_t<decltype(m)>;
                if constexpr (std::is_same_v<M, KnnModel>) {
                    double mean = 0.0;
                    d.predicted_label = knn_predict(m, std::span<const double>(z), &mean);
                    d.score = mean;
                    d.threshold = std::numeric_limits<double>::quiet_NaN();
                    d.verdict = authorized.count(*d.predicted_label) ? Verdict::authorized : Verdict::unauthorized;
                } else if constexpr (std::is_same_v<M, KmeansAuthenticator>) {
                    d = kmeans_decide(m, std::span<const double>(z));
                } else {
                    d = autoencoder_decide(m, std::span<const double>(z));
                }
            },
            model);
        d.window_start = v.window_start;
        d.time = v.window_start + pipeline.window.length_us();
        return d;
    }
};

/// Trains on pipeline-output vectors. Owner-only models (k-means,
/// autoencoder) reject any window whose label is not in the authorized set.
inline AuthModel train_model(const std::vector<FeatureVector>& vectors, const FeaturePipeline& pipeline,
                             const TrainOptions& opt) {
    if (vectors.empty()) throw DataError("no training vectors");
    if (opt.authorized.empty()) throw UsageError("at least one authorized driver label is required");
    for (const auto& v : vectors) {
        if (!v.label || *v.label == kUnknownDriver)
            throw DataError("training windows must carry a driver label (mixed/unknown traces are not trainable)");
        if (is_mixed_only_driver(*v.label))
            throw DataError("driver " + *v.label + " only appears in mixed traces and cannot be trained on");
    }
    AuthModel m;
    m.kind = opt.kind;
    m.pipeline = pipeline;
    m.schema = *vectors.front().schema;
    m.authorized = opt.authorized;
    m.seed = opt.seed;

    std::vector<FeatureVector> train = vectors;
    if (opt.kind != ModelKind::knn) {
        for (const auto& v : vectors)
            if (!opt.authorized.count(*v.label))
                throw DataError("owner-only training received a window labeled '" + *v.label +
                                "' outside the authorized set");
    }
    m.standardizer = fit_standardizer(train);
    auto z = apply_standardizer(m.standardizer, train);
    switch (opt.kind) {
        case ModelKind::knn: m.model = knn_train(z, opt.knn_k); break;
        case ModelKind::kmeans: {
            auto ko = opt.kmeans;
            ko.seed = opt.seed;
            m.model = kmeans_fit(z, ko);
            break;
        }
        case ModelKind::autoencoder: {
            auto ao = opt.autoencoder;
            ao.seed = opt.seed;
            m.model = autoencoder_train(z, ao);
            break;
        }
    }
    return m;
}

/// Keeps only windows labeled with one of `labels`.
inline std::vector<FeatureVector> filter_labels(const std::vector<FeatureVector>& v, const std::set<std::string>& labels) {
    std::vector<FeatureVector> out;
    for (const auto& x : v)
        if (x.label && labels.count(*x.label)) out.push_back(x);
    return out;
}

inline std::vector<LabeledDecision> decide_all(const AuthModel& m, const std::vector<FeatureVector>& vectors) {
    std::vector<LabeledDecision> out;
    out.reserve(vectors.size());
    for (const auto& v : vectors) {
        LabeledDecision ld;
        ld.decision = m.decide(v);
        ld.truly_authorized = v.label && m.authorized.count(*v.label);
        ld.session = v.session;
        out.push_back(std::move(ld));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Record format (JSON)
// ---------------------------------------------------------------------------

namespace detail {

inline nlohmann::json matrix_json(const Eigen::MatrixXd& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        std::vector<double> r(static_cast<std::size_t>(m.cols()));
        for (Eigen::Index j = 0; j < m.cols(); ++j) r[static_cast<std::size_t>(j)] = m(i, j);
        rows.push_back(r);
    }
    return rows;
}

inline Eigen::MatrixXd matrix_from_json(const nlohmann::json& j, std::size_t rows, std::size_t cols) {
    auto v = j.get<std::vector<std::vector<double>>>();
    if (v.size() != rows) throw ModelError("weight matrix has wrong row count");
    Eigen::MatrixXd m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (std::size_t i = 0; i < rows; ++i) {
        if (v[i].size() != cols) throw ModelError("weight matrix has wrong column count");
        for (std::size_t k = 0; k < cols; ++k) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = v[i][k];
    }
    return m;
}

}  // namespace detail

inline nlohmann::json to_json(const AuthModel& m) {
    nlohmann::json j = {{"format", AuthModel::kFormatName},
                        {"version", AuthModel::kFormatVersion},
                        {"kind", to_string(m.kind)},
                        {"seed", m.seed},
                        {"schema", m.schema},
                        {"authorized", m.authorized},
                        {"pipeline", to_json(m.pipeline)},
                        {"standardizer", to_json(m.standardizer)}};
    nlohmann::json p;
    std::visit(
        [&](const auto& mm) {
            using M = std::decay_t<decltype(mm)>;
            if constexpr (std::is_same_v<M, KnnModel>) {
                p = {{"k", mm.k}, {"points", mm.points}, {"labels", mm.labels}};
            } else if constexpr (std::is_same_v<M, KmeansAuthenticator>) {
                p = {{"centroids", mm.centroids},
                     {"threshold", mm.threshold},
                     {"quantile", mm.quantile},
                     {"iterations", mm.iterations},
                     {"inertia_history", mm.inertia_history},
                     {"training_distances", mm.training_distances}};
            } else {
                nlohmann::json layers = nlohmann::json::array();
                for (const auto& l : mm.layers)
                    layers.push_back({{"weight", detail::matrix_json(l.weight)},
                                      {"bias", std::vector<double>(l.bias.data(), l.bias.data() + l.bias.size())}});
                p = {{"sizes", mm.sizes},
                     {"layers", layers},
                     {"threshold", mm.threshold},
                     {"quantile", mm.quantile},
                     {"loss_history", mm.loss_history},
                     {"training_errors", mm.training_errors}};
            }
        },
        m.model);
    j["parameters"] = p;
    return j;
}

inline AuthModel auth_model_from_json(const nlohmann::json& j) {
    try {
        if (j.at("format").get<std::string>() != AuthModel::kFormatName) throw ModelError("not a model record");
        if (j.at("version").get<int>() != AuthModel::kFormatVersion)
            throw ModelError("unsupported model record version " + j.at("version").dump());
        AuthModel m;
        auto kind = parse_model_kind(j.at("kind").get<std::string>());
        if (!kind) throw ModelError("unknown model kind " + j.at("kind").dump());
        m.kind = *kind;
        m.seed = j.at("seed").get<std::uint64_t>();
        m.schema = j.at("schema").get<Schema>();
        m.authorized = j.at("authorized").get<std::set<std::string>>();
        m.pipeline = pipeline_from_json(j.at("pipeline"));
        m.standardizer = standardizer_from_json(j.at("standardizer"));
        require_schema(m.schema, m.standardizer.schema, "model record standardizer");
        require_schema(m.schema, *m.pipeline.output_schema(), "model record pipeline");
        const auto& p = j.at("parameters");
        switch (m.kind) {
            case ModelKind::knn: {
                KnnModel k;
                k.k = p.at("k").get<std::size_t>();
                k.schema = m.schema;
                k.points = p.at("points").get<std::vector<std::vector<double>>>();
                k.labels = p.at("labels").get<std::vector<std::string>>();
                if (k.points.size() != k.labels.size() || k.k < 1 || k.k > k.points.size())
                    throw ModelError("inconsistent k-NN record");
                m.model = std::move(k);
                break;
            }
            case ModelKind::kmeans: {
                KmeansAuthenticator k;
                k.schema = m.schema;
                k.centroids = p.at("centroids").get<std::vector<std::vector<double>>>();
                k.threshold = p.at("threshold").get<double>();
                k.quantile = p.at("quantile").get<double>();
                k.iterations = p.at("iterations").get<std::size_t>();
                k.inertia_history = p.at("inertia_history").get<std::vector<double>>();
                k.training_distances = p.at("training_distances").get<std::vector<double>>();
                for (const auto& c : k.centroids)
                    if (c.size() != m.schema.size()) throw ModelError("centroid width does not match the schema");
                m.model = std::move(k);
                break;
            }
            case ModelKind::autoencoder: {
                AutoencoderModel a;
                a.schema = m.schema;
                a.sizes = p.at("sizes").get<std::vector<std::size_t>>();
                if (a.sizes.size() < 3 || a.sizes.front() != m.schema.size() || a.sizes.back() != m.schema.size())
                    throw ModelError("autoencoder layout does not match the schema");
                const auto& layers = p.at("layers");
                if (layers.size() + 1 != a.sizes.size()) throw ModelError("autoencoder layer count mismatch");
                for (std::size_t l = 0; l < layers.size(); ++l) {
                    Layer layer;
                    layer.weight = detail::matrix_from_json(layers[l].at("weight"), a.sizes[l + 1], a.sizes[l]);
                    auto b = layers[l].at("bias").get<std::vector<double>>();
                    if (b.size() != a.sizes[l + 1]) throw ModelError("autoencoder bias width mismatch");
                    layer.bias = Eigen::Map<Eigen::VectorXd>(b.data(), static_cast<Eigen::Index>(b.size()));
                    a.layers.push_back(std::move(layer));
                }
                a.threshold = p.at("threshold").get<double>();
                a.quantile = p.at("quantile").get<double>();
                a.loss_history = p.at("loss_history").get<std::vector<double>>();
                a.training_errors = p.at("training_errors").get<std::vector<double>>();
                m.model = std::move(a);
                break;
            }
        }
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw ModelError(std::string("malformed model record: ") + e.what());
    }
}

inline void save_model(const std::string& path, const AuthModel& m) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path);
    out << to_json(m).dump() << '\n';
}

inline AuthModel load_model(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ModelError(path + ": " + e.what());
    }
    return auth_model_from_json(j);
}

/// Hard error unless the model consumes exactly `schema`.
inline void check_model_schema(const AuthModel& m, const Schema& schema) {
    require_schema(m.schema, schema, "model");
}

}  // namespace canid
