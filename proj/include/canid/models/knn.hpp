#pragma once

#include <map>

#include "common.hpp"

namespace canid {

struct KnnModel {
    std::size_t k = 1;
    Schema schema;
    std::vector<std::vector<double>> points;
    std::vector<std::string> labels;
};

struct Neighbor {
    double distance = 0.0;
    std::size_t index = 0;
};

inline KnnModel knn_train(const std::vector<FeatureVector>& data, std::size_t k) {
    if (data.empty()) throw DataError("k-NN needs training data");
    if (k < 1 || k > data.size())
        throw UsageError("k-NN k=" + std::to_string(k) + " must be in [1, " + std::to_string(data.size()) + "]");
    KnnModel m;
    m.k = k;
    m.schema = *data.front().schema;
    for (const auto& v : data) {
        require_schema(m.schema, *v.schema, "knn_train");
        if (!v.label) throw DataError("k-NN training vector without a driver label");
        require_finite(v.values, "knn_train");
        m.points.push_back(v.values);
        m.labels.push_back(*v.label);
    }
    return m;
}

/// The k nearest training points. Equal distances are ordered by label and
/// then by the point's coordinates so the result never depends on the order
/// of the training set.
inline std::vector<Neighbor> knn_neighbors(const KnnModel& m, std::span<const double> q) {
    std::vector<Neighbor> all(m.points.size());
    for (std::size_t i = 0; i < m.points.size(); ++i) all[i] = {squared_distance(m.points[i], q), i};
    auto less = [&](const Neighbor& a, const Neighbor& b) {
        if (a.distance != b.distance) return a.distance < b.distance;
        if (m.labels[a.index] != m.labels[b.index]) return m.labels[a.index] < m.labels[b.index];
        return m.points[a.index] < m.points[b.index];
    };
    std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(m.k), all.end(), less);
    all.resize(m.k);
    for (auto& n : all) n.distance = std::sqrt(n.distance);
    return all;
}

/// Majority label among the k nearest; ties go to the smaller summed
/// distance, then to the lexicographically smaller label.
inline std::string knn_predict(const KnnModel& m, std::span<const double> q, double* mean_distance = nullptr) {
    if (q.size() != m.schema.size()) throw ModelError("knn_predict: feature schema mismatch");
    auto nb = knn_neighbors(m, q);
    std::map<std::string, std::pair<std::size_t, double>> votes;
    double total = 0.0;
    for (const auto& n : nb) {
        auto& v = votes[m.labels[n.index]];
        v.first += 1;
        v.second += n.distance;
        total += n.distance;
    }
    if (mean_distance) *mean_distance = total / static_cast<double>(nb.size());
    const std::string* best = nullptr;
    std::pair<std::size_t, double> bv{0, 0.0};
    for (const auto& [label, v] : votes) {
        if (!best || v.first > bv.first || (v.first == bv.first && v.second < bv.second)) {
            best = &label;
            bv = v;
        }
    }
    return *best;
}

inline std::string knn_predict(const KnnModel& m, const FeatureVector& v) {
    require_schema(m.schema, *v.schema, "knn_predict");
    return knn_predict(m, std::span<const double>(v.values));
}

}  // namespace canid
