#pragma once

// Window features over raw CAN traffic: per-ID rate, inter-arrival and
// byte statistics, lag stacking, standardization and PCA.

#include <cmath>
#include <cstdio>
#include <deque>
#include <fstream>
#include <memory>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "trace.hpp"

namespace canid {

using Schema = std::vector<std::string>;
using SchemaPtr = std::shared_ptr<const Schema>;

struct WindowSpec {
    double length = 60.0;  // seconds
    double stride = 10.0;  // seconds
    std::size_t min_frames = 100;
    /// Skip windows that run past the last frame of the trace.
    bool complete_only = true;

    std::int64_t length_us() const { return static_cast<std::int64_t>(std::llround(length * 1e6)); }
    std::int64_t stride_us() const { return static_cast<std::int64_t>(std::llround(stride * 1e6)); }

    void validate() const {
        if (!(length > 0) || !(stride > 0) || stride > length)
            throw UsageError("window spec requires 0 < stride <= length");
        if (min_frames < 1) throw UsageError("window spec requires min_frames >= 1");
    }
};

struct FeatureVector {
    std::vector<double> values;
    SchemaPtr schema;
    Timestamp window_start;
    std::optional<std::string> label;
    /// Identifies the trace/session the window came from.
    std::string session;
};

inline constexpr int kStatsPerByte = 2;
inline constexpr int kFeaturesPerId = 4 + kStatsPerByte * static_cast<int>(kMaxDataBytes);

inline SchemaPtr window_schema(const std::vector<std::uint32_t>& vocab) {
    auto s = std::make_shared<Schema>();
    s->reserve(vocab.size() * kFeaturesPerId);
    for (auto id : vocab) {
        auto p = format_id(id) + ".";
        s->push_back(p + "present");
        s->push_back(p + "rate");
        s->push_back(p + "ia_mean");
        s->push_back(p + "ia_sd");
        for (std::size_t b = 0; b < kMaxDataBytes; ++b) {
            s->push_back(p + "b" + std::to_string(b) + "_mean");
            s->push_back(p + "b" + std::to_string(b) + "_sd");
        }
    }
    return s;
}

namespace detail {

inline double pop_sd(double sum, double sq, double n) {
    if (n <= 0) return 0.0;
    double m = sum / n;
    double v = sq / n - m * m;
    return v > 0 ? std::sqrt(v) : 0.0;
}

}  // namespace detail

/// Features of one window's frames. Bytes are treated as unsigned 0-255;
/// IDs missing from the window contribute zeros with present = 0.
inline std::vector<double> featurize_window(std::span<const CanFrame> frames, double window_length_s,
                                            const std::vector<std::uint32_t>& vocab) {
    struct Acc {
        std::size_t n = 0;
        Timestamp last;
        double ia_sum = 0, ia_sq = 0, ia_n = 0;
        std::array<double, kMaxDataBytes> bsum{}, bsq{}, bn{};
    };
    std::vector<Acc> acc(vocab.size());
    for (const auto& f : frames) {
        auto it = std::lower_bound(vocab.begin(), vocab.end(), f.arb_id);
        if (it == vocab.end() || *it != f.arb_id) continue;
        auto& a = acc[static_cast<std::size_t>(it - vocab.begin())];
        if (a.n > 0) {
            double dt = (f.timestamp - a.last) * 1e-6;
            a.ia_sum += dt;
            a.ia_sq += dt * dt;
            a.ia_n += 1;
        }
        a.last = f.timestamp;
        ++a.n;
        for (std::size_t b = 0; b < f.dlc; ++b) {
            double v = f.bytes[b];
            a.bsum[b] += v;
            a.bsq[b] += v * v;
            a.bn[b] += 1;
        }
    }
    std::vector<double> out;
    out.reserve(vocab.size() * kFeaturesPerId);
    for (const auto& a : acc) {
        out.push_back(a.n > 0 ? 1.0 : 0.0);
        out.push_back(static_cast<double>(a.n) / window_length_s);
        out.push_back(a.ia_n > 0 ? a.ia_sum / a.ia_n : 0.0);
        out.push_back(detail::pop_sd(a.ia_sum, a.ia_sq, a.ia_n));
        for (std::size_t b = 0; b < kMaxDataBytes; ++b) {
            out.push_back(a.bn[b] > 0 ? a.bsum[b] / a.bn[b] : 0.0);
            out.push_back(detail::pop_sd(a.bsum[b], a.bsq[b], a.bn[b]));
        }
    }
    return out;
}

/// Sliding windows anchored at the first frame. Window k covers
/// (t0 + k*stride, t0 + k*stride + length]; the very first frame belongs to
/// window 0. A frame on a boundary therefore lands in the earlier window.
inline std::vector<FeatureVector> extract_windows(const Trace& trace, const WindowSpec& spec,
                                                  const std::vector<std::uint32_t>& id_vocab) {
    spec.validate();
    if (id_vocab.empty()) throw UsageError("feature extraction needs a non-empty ID vocabulary");
    if (!std::is_sorted(id_vocab.begin(), id_vocab.end())) throw UsageError("ID vocabulary must be ascending");
    std::vector<FeatureVector> out;
    const auto& fr = trace.frames;
    if (fr.empty()) return out;
    auto schema = window_schema(id_vocab);
    const Timestamp t0 = fr.front().timestamp;
    const Timestamp tl = fr.back().timestamp;
    const auto len = spec.length_us(), stride = spec.stride_us();
    std::optional<std::string> label;
    if (trace.meta.driver_label != kUnknownDriver) label = trace.meta.driver_label;

    std::size_t lo = 0;
    for (std::int64_t k = 0;; ++k) {
        Timestamp lower = t0 + k * stride;
        Timestamp upper = lower + len;
        if (spec.complete_only ? upper > tl : lower >= tl && k > 0) break;
        while (lo < fr.size() && fr[lo].timestamp <= lower && !(k == 0 && fr[lo].timestamp == t0)) ++lo;
        std::size_t hi = lo;
        while (hi < fr.size() && fr[hi].timestamp <= upper) ++hi;
        if (hi - lo >= spec.min_frames) {
            FeatureVector v;
            v.values = featurize_window(std::span(fr).subspan(lo, hi - lo), spec.length, id_vocab);
            v.schema = schema;
            v.window_start = lower;
            v.label = label;
            v.session = trace.meta.source_path;
            out.push_back(std::move(v));
        }
        if (!spec.complete_only && upper >= tl) break;
    }
    return out;
}

/// Incremental counterpart of extract_windows for live traffic. Frames must
/// arrive in time order; advance(now) asserts nothing at or before `now` is
/// still in flight.
class WindowAccumulator {
public:
    WindowAccumulator(WindowSpec spec, std::vector<std::uint32_t> vocab)
        : spec_(spec), vocab_(std::move(vocab)), schema_(window_schema(vocab_)) {
        spec_.validate();
        if (vocab_.empty()) throw UsageError("feature extraction needs a non-empty ID vocabulary");
    }

    void add(const CanFrame& f) {
        if (!t0_) t0_ = f.timestamp;
        buf_.push_back(f);
    }

    /// Closes every window whose upper edge is at or before `now`.
    std::vector<FeatureVector> advance(Timestamp now) {
        std::vector<FeatureVector> out;
        if (!t0_) return out;
        const auto len = spec_.length_us(), stride = spec_.stride_us();
        for (;;) {
            Timestamp lower = *t0_ + next_k_ * stride;
            Timestamp upper = lower + len;
            if (now < upper) break;
            while (!buf_.empty() && buf_.front().timestamp <= lower && !(next_k_ == 0 && buf_.front().timestamp == *t0_))
                buf_.pop_front();
            std::size_t hi = 0;
            while (hi < buf_.size() && buf_[hi].timestamp <= upper) ++hi;
            if (hi >= spec_.min_frames) {
                std::vector<CanFrame> w(buf_.begin(), buf_.begin() + static_cast<std::ptrdiff_t>(hi));
                FeatureVector v;
                v.values = featurize_window(w, spec_.length, vocab_);
                v.schema = schema_;
                v.window_start = lower;
                out.push_back(std::move(v));
            }
            ++next_k_;
        }
        return out;
    }

    const SchemaPtr& schema() const { return schema_; }

private:
    WindowSpec spec_;
    std::vector<std::uint32_t> vocab_;
    SchemaPtr schema_;
    std::optional<Timestamp> t0_;
    std::deque<CanFrame> buf_;
    std::int64_t next_k_ = 0;
};

// ---------------------------------------------------------------------------
// Lag features
// ---------------------------------------------------------------------------

inline void validate_lags(const std::vector<int>& lags) {
    if (lags.empty()) throw UsageError("lag list is empty");
    for (int l : lags)
        if (l <= 0) throw UsageError("lags must be positive integers");
}

inline SchemaPtr lagged_schema(const Schema& base, const std::vector<int>& lags) {
    auto s = std::make_shared<Schema>(base);
    for (int l : lags)
        for (const auto& n : base) s->push_back(n + "@lag" + std::to_string(l));
    return s;
}

/// Appends the values of the windows `lag` positions earlier. The first
/// max(lags) windows have no history and are dropped.
inline std::vector<FeatureVector> add_lag_features(const std::vector<FeatureVector>& vectors,
                                                   const std::vector<int>& lags) {
    validate_lags(lags);
    std::size_t max_lag = static_cast<std::size_t>(*std::max_element(lags.begin(), lags.end()));
    if (max_lag >= vectors.size())
        throw UsageError("largest lag (" + std::to_string(max_lag) + ") must be below the window count (" +
                         std::to_string(vectors.size()) + ")");
    auto schema = lagged_schema(*vectors.front().schema, lags);
    std::vector<FeatureVector> out;
    out.reserve(vectors.size() - max_lag);
    for (std::size_t i = max_lag; i < vectors.size(); ++i) {
        FeatureVector v = vectors[i];
        for (int l : lags) {
            const auto& prev = vectors[i - static_cast<std::size_t>(l)].values;
            v.values.insert(v.values.end(), prev.begin(), prev.end());
        }
        v.schema = schema;
        out.push_back(std::move(v));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Standardization
// ---------------------------------------------------------------------------

inline void require_schema(const Schema& expected, const Schema& got, const char* what) {
    if (expected != got)
        throw ModelError(std::string(what) + ": feature schema mismatch (" + std::to_string(expected.size()) +
                         " expected vs " + std::to_string(got.size()) + " given)");
}

struct Standardizer {
    static constexpr double kStddevFloor = 1e-12;
    Schema schema;
    std::vector<double> mean;
    std::vector<double> stddev;

    std::vector<double> apply(std::span<const double> x) const {
        std::vector<double> y(x.size());
        for (std::size_t j = 0; j < x.size(); ++j) {
            double sd = stddev[j];
            y[j] = sd > kStddevFloor ? (x[j] - mean[j]) / sd : 0.0;
        }
        return y;
    }
};

inline Standardizer fit_standardizer(const std::vector<FeatureVector>& vectors) {
    if (vectors.size() < 2) throw DataError("standardizer needs at least 2 vectors");
    Standardizer s;
    s.schema = *vectors.front().schema;
    const std::size_t d = s.schema.size();
    s.mean.assign(d, 0.0);
    s.stddev.assign(d, 0.0);
    const double n = static_cast<double>(vectors.size());
    for (const auto& v : vectors) {
        require_schema(s.schema, *v.schema, "fit_standardizer");
        for (std::size_t j = 0; j < d; ++j) s.mean[j] += v.values[j];
    }
    for (auto& m : s.mean) m /= n;
    for (const auto& v : vectors)
        for (std::size_t j = 0; j < d; ++j) {
            double c = v.values[j] - s.mean[j];
            s.stddev[j] += c * c;
        }
    for (auto& sd : s.stddev) sd = std::sqrt(sd / n);
    return s;
}

inline std::vector<FeatureVector> apply_standardizer(const Standardizer& s, const std::vector<FeatureVector>& vectors) {
    std::vector<FeatureVector> out;
    out.reserve(vectors.size());
    for (const auto& v : vectors) {
        require_schema(s.schema, *v.schema, "apply_standardizer");
        FeatureVector w = v;
        w.values = s.apply(v.values);
        out.push_back(std::move(w));
    }
    return out;
}

// ---------------------------------------------------------------------------
// PCA
// ---------------------------------------------------------------------------

struct PcaModel {
    Schema input_schema;
    Eigen::VectorXd mean;
    /// Rows are principal directions, unit length, mutually orthogonal.
    Eigen::MatrixXd components;
    Eigen::VectorXd explained_variance;
    double total_variance = 0.0;

    std::size_t n_components() const { return static_cast<std::size_t>(components.rows()); }

    Eigen::VectorXd explained_variance_ratio() const { return explained_variance / total_variance; }

    std::vector<double> project(std::span<const double> x) const {
        Eigen::Map<const Eigen::VectorXd> xv(x.data(), static_cast<Eigen::Index>(x.size()));
        Eigen::VectorXd z = components * (xv - mean);
        return {z.data(), z.data() + z.size()};
    }

    std::vector<double> reconstruct(std::span<const double> z) const {
        Eigen::Map<const Eigen::VectorXd> zv(z.data(), static_cast<Eigen::Index>(z.size()));
        Eigen::VectorXd x = components.transpose() * zv + mean;
        return {x.data(), x.data() + x.size()};
    }

    SchemaPtr output_schema() const {
        auto s = std::make_shared<Schema>();
        for (std::size_t i = 0; i < n_components(); ++i) s->push_back("pc" + std::to_string(i + 1));
        return s;
    }
};

inline Eigen::MatrixXd to_matrix(const std::vector<FeatureVector>& vectors) {
    if (vectors.empty()) return {};
    Eigen::MatrixXd m(static_cast<Eigen::Index>(vectors.size()), static_cast<Eigen::Index>(vectors.front().values.size()));
    for (std::size_t i = 0; i < vectors.size(); ++i)
        for (std::size_t j = 0; j < vectors[i].values.size(); ++j)
            m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = vectors[i].values[j];
    return m;
}

/// PCA by eigendecomposition of the sample covariance (n-1 denominator).
/// Each component's largest-magnitude entry is made positive.
inline PcaModel fit_pca(const std::vector<FeatureVector>& vectors, std::size_t n_components) {
    if (vectors.size() < 2) throw DataError("PCA needs at least 2 vectors");
    const Eigen::Index d = static_cast<Eigen::Index>(vectors.front().values.size());
    if (n_components < 1 || static_cast<Eigen::Index>(n_components) > d)
        throw UsageError("PCA n_components must be in [1, " + std::to_string(d) + "]");
    Eigen::MatrixXd x = to_matrix(vectors);
    PcaModel m;
    m.input_schema = *vectors.front().schema;
    m.mean = x.colwise().mean().transpose();
    Eigen::MatrixXd c = x.rowwise() - m.mean.transpose();
    Eigen::MatrixXd cov = (c.transpose() * c) / static_cast<double>(x.rows() - 1);
    m.total_variance = cov.trace();
    if (!(m.total_variance > 0)) throw DataError("PCA input is rank-deficient: all vectors identical");

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
    if (es.info() != Eigen::Success) throw DataError("PCA eigendecomposition failed");
    // Eigen returns ascending eigenvalues.
    m.components.resize(static_cast<Eigen::Index>(n_components), d);
    m.explained_variance.resize(static_cast<Eigen::Index>(n_components));
    for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(n_components); ++i) {
        Eigen::Index src = d - 1 - i;
        Eigen::VectorXd v = es.eigenvectors().col(src);
        Eigen::Index arg = 0;
        v.cwiseAbs().maxCoeff(&arg);
        if (v(arg) < 0) v = -v;
        m.components.row(i) = v.transpose();
        m.explained_variance(i) = std::max(0.0, es.eigenvalues()(src));
    }
    return m;
}

inline std::vector<FeatureVector> project(const PcaModel& m, const std::vector<FeatureVector>& vectors) {
    auto schema = m.output_schema();
    std::vector<FeatureVector> out;
    out.reserve(vectors.size());
    for (const auto& v : vectors) {
        require_schema(m.input_schema, *v.schema, "pca project");
        FeatureVector w = v;
        w.values = m.project(v.values);
        w.schema = schema;
        out.push_back(std::move(w));
    }
    return out;
}

/// Mean squared reconstruction error of projecting onto the model's components.
inline double pca_reconstruction_error(const PcaModel& m, const std::vector<FeatureVector>& vectors) {
    double err = 0.0;
    std::size_t n = 0;
    for (const auto& v : vectors) {
        auto r = m.reconstruct(m.project(v.values));
        for (std::size_t j = 0; j < r.size(); ++j) {
            double e = r[j] - v.values[j];
            err += e * e;
            ++n;
        }
    }
    return n ? err / static_cast<double>(n) : 0.0;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

inline nlohmann::json to_json(const WindowSpec& s) {
    return {{"length", s.length}, {"stride", s.stride}, {"min_frames", s.min_frames}, {"complete_only", s.complete_only}};
}

inline WindowSpec window_spec_from_json(const nlohmann::json& j) {
    WindowSpec s;
    s.length = j.at("length").get<double>();
    s.stride = j.at("stride").get<double>();
    s.min_frames = j.at("min_frames").get<std::size_t>();
    s.complete_only = j.value("complete_only", true);
    return s;
}

inline nlohmann::json to_json(const Standardizer& s) {
    return {{"schema", s.schema}, {"mean", s.mean}, {"stddev", s.stddev}};
}

inline Standardizer standardizer_from_json(const nlohmann::json& j) {
    Standardizer s;
    s.schema = j.at("schema").get<Schema>();
    s.mean = j.at("mean").get<std::vector<double>>();
    s.stddev = j.at("stddev").get<std::vector<double>>();
    if (s.mean.size() != s.schema.size() || s.stddev.size() != s.schema.size())
        throw ModelError("standardizer record has inconsistent sizes");
    return s;
}

inline nlohmann::json to_json(const PcaModel& m) {
    std::vector<std::vector<double>> comps;
    for (Eigen::Index i = 0; i < m.components.rows(); ++i) {
        Eigen::VectorXd r = m.components.row(i).transpose();
        comps.emplace_back(r.data(), r.data() + r.size());
    }
    return {{"input_schema", m.input_schema},
            {"mean", std::vector<double>(m.mean.data(), m.mean.data() + m.mean.size())},
            {"components", comps},
            {"explained_variance",
             std::vector<double>(m.explained_variance.data(), m.explained_variance.data() + m.explained_variance.size())},
            {"total_variance", m.total_variance}};
}

inline PcaModel pca_from_json(const nlohmann::json& j) {
    PcaModel m;
    m.input_schema = j.at("input_schema").get<Schema>();
    auto mean = j.at("mean").get<std::vector<double>>();
    auto comps = j.at("components").get<std::vector<std::vector<double>>>();
    auto ev = j.at("explained_variance").get<std::vector<double>>();
    m.total_variance = j.at("total_variance").get<double>();
    m.mean = Eigen::Map<Eigen::VectorXd>(mean.data(), static_cast<Eigen::Index>(mean.size()));
    m.explained_variance = Eigen::Map<Eigen::VectorXd>(ev.data(), static_cast<Eigen::Index>(ev.size()));
    m.components.resize(static_cast<Eigen::Index>(comps.size()), static_cast<Eigen::Index>(mean.size()));
    for (std::size_t i = 0; i < comps.size(); ++i) {
        if (comps[i].size() != mean.size()) throw ModelError("PCA record has ragged components");
        for (std::size_t k = 0; k < mean.size(); ++k)
            m.components(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = comps[i][k];
    }
    return m;
}

/// Everything needed to turn raw frames into the vectors a model was trained
/// on: window spec, ID vocabulary, lags, and optional standardize+PCA stage.
struct FeaturePipeline {
    WindowSpec window;
    std::vector<std::uint32_t> vocab;
    std::vector<int> lags;
    std::optional<Standardizer> pre_pca_standardizer;
    std::optional<PcaModel> pca;

    std::size_t max_lag() const { return lags.empty() ? 0 : static_cast<std::size_t>(*std::max_element(lags.begin(), lags.end())); }

    /// Schema of the pipeline's final output.
    SchemaPtr output_schema() const {
        if (pca) return pca->output_schema();
        auto base = window_schema(vocab);
        return lags.empty() ? base : lagged_schema(*base, lags);
    }

    /// Batch path: raw windows (already extracted) to final vectors.
    std::vector<FeatureVector> transform(std::vector<FeatureVector> v) const {
        if (!lags.empty()) v = v.size() > max_lag() ? add_lag_features(v, lags) : std::vector<FeatureVector>{};
        if (pre_pca_standardizer) v = apply_standardizer(*pre_pca_standardizer, v);
        if (pca) v = project(*pca, v);
        return v;
    }

    std::vector<FeatureVector> run(const Trace& t) const { return transform(extract_windows(t, window, vocab)); }
};

inline nlohmann::json to_json(const FeaturePipeline& p) {
    nlohmann::json j = {{"window", to_json(p.window)}, {"lags", p.lags}};
    std::vector<std::string> ids;
    for (auto id : p.vocab) ids.push_back(format_id(id));
    j["vocab"] = ids;
    if (p.pre_pca_standardizer) j["standardizer"] = to_json(*p.pre_pca_standardizer);
    if (p.pca) j["pca"] = to_json(*p.pca);
    return j;
}

inline FeaturePipeline pipeline_from_json(const nlohmann::json& j) {
    FeaturePipeline p;
    p.window = window_spec_from_json(j.at("window"));
    p.lags = j.value("lags", std::vector<int>{});
    for (const auto& s : j.at("vocab").get<std::vector<std::string>>()) p.vocab.push_back(std::stoul(s, nullptr, 16));
    if (j.contains("standardizer")) p.pre_pca_standardizer = standardizer_from_json(j["standardizer"]);
    if (j.contains("pca")) p.pca = pca_from_json(j["pca"]);
    return p;
}

/// Online pipeline: frames in, final-stage vectors out as windows close.
class OnlineFeaturizer {
public:
    explicit OnlineFeaturizer(FeaturePipeline p) : pipe_(std::move(p)), acc_(pipe_.window, pipe_.vocab) {}

    void add(const CanFrame& f) { acc_.add(f); }

    std::vector<FeatureVector> advance(Timestamp now) {
        std::vector<FeatureVector> out;
        for (auto& raw : acc_.advance(now)) {
            history_.push_back(raw);
            if (history_.size() > pipe_.max_lag() + 1) history_.pop_front();
            if (history_.size() < pipe_.max_lag() + 1) continue;
            std::vector<FeatureVector> batch(history_.begin(), history_.end());
            auto t = pipe_.transform(std::move(batch));
            if (!t.empty()) out.push_back(std::move(t.back()));
        }
        return out;
    }

    const FeaturePipeline& pipeline() const { return pipe_; }

private:
    FeaturePipeline pipe_;
    WindowAccumulator acc_;
    std::deque<FeatureVector> history_;
};

// ---------------------------------------------------------------------------
// Feature CSV: window_start,label,session followed by one column per schema entry.
// ---------------------------------------------------------------------------

inline constexpr const char* kFeatureMetaColumns[] = {"window_start", "label", "session"};

inline void write_features_csv(std::ostream& out, const std::vector<FeatureVector>& vectors, const Schema& schema) {
    out << "window_start,label,session";
    for (const auto& n : schema) out << ',' << n;
    out << '\n';
    char buf[32];
    for (const auto& v : vectors) {
        out << format_timestamp(v.window_start) << ',' << v.label.value_or("") << ',' << v.session;
        for (double x : v.values) {
            std::snprintf(buf, sizeof buf, "%.17g", x);
            out << ',' << buf;
        }
        out << '\n';
    }
}

inline std::vector<FeatureVector> read_features_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw DataError("feature CSV is empty");
    auto head = detail::split_csv(line);
    if (head.size() < 3 || head[0] != "window_start" || head[1] != "label" || head[2] != "session")
        throw DataError("feature CSV header must start with window_start,label,session");
    auto schema = std::make_shared<Schema>();
    for (std::size_t i = 3; i < head.size(); ++i) schema->emplace_back(head[i]);
    std::vector<FeatureVector> out;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto cells = detail::split_csv(line);
        if (cells.size() != head.size())
            throw DataError("feature CSV line " + std::to_string(line_no) + ": expected " +
                            std::to_string(head.size()) + " columns");
        FeatureVector v;
        v.schema = schema;
        v.window_start = detail::parse_csv_timestamp(cells[0], line_no, 1);
        if (!cells[1].empty()) v.label = std::string(cells[1]);
        v.session = std::string(cells[2]);
        v.values.reserve(schema->size());
        for (std::size_t i = 3; i < cells.size(); ++i) {
            std::string s(cells[i]);
            char* end = nullptr;
            double x = std::strtod(s.c_str(), &end);
            if (end == s.c_str() || *end != '\0' || !std::isfinite(x))
                throw DataError("feature CSV line " + std::to_string(line_no) + ": bad value '" + s + "'");
            v.values.push_back(x);
        }
        out.push_back(std::move(v));
    }
    return out;
}

}  // namespace canid
