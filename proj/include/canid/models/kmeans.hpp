#pragma once

// Owner-only clustering authenticator: Lloyd's k-means with k-means++
// seeding, and a distance threshold calibrated on the training windows.

#include <limits>

#include "common.hpp"

namespace canid {

struct KmeansOptions {
    std::size_t k = 4;
    std::uint64_t seed = 1;
    double quantile = 0.99;
    std::size_t max_iterations = 300;
    double tolerance = 1e-6;
};

struct KmeansAuthenticator {
    Schema schema;
    std::vector<std::vector<double>> centroids;
    double threshold = 0.0;
    double quantile = 0.99;
    /// Inertia after each assignment step; non-increasing.
    std::vector<double> inertia_history;
    std::size_t iterations = 0;
    /// Nearest-centroid distances of the training set, kept for recalibration.
    std::vector<double> training_distances;

    double inertia() const { return inertia_history.empty() ? 0.0 : inertia_history.back(); }
};

namespace detail {

inline std::pair<std::size_t, double> nearest_centroid(const std::vector<std::vector<double>>& c,
                                                      std::span<const double> x) {
    std::size_t best = 0;
    double bd = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < c.size(); ++j) {
        double d = squared_distance(c[j], x);
        if (d < bd) {
            bd = d;
            best = j;
        }
    }
    return {best, bd};
}

inline std::vector<std::vector<double>> kmeanspp_seed(const std::vector<std::vector<double>>& x, std::size_t k, Rng& rng) {
    std::vector<std::vector<double>> c;
    c.push_back(x[rng.index(x.size())]);
    std::vector<double> d2(x.size(), std::numeric_limits<double>::infinity());
    while (c.size() < k) {
        double total = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            d2[i] = std::min(d2[i], squared_distance(x[i], c.back()));
            total += d2[i];
        }
        std::size_t pick = 0;
        if (total <= 0.0) {
            pick = rng.index(x.size());
        } else {
            double r = rng.uniform() * total;
            double acc = 0.0;
            pick = x.size() - 1;
            for (std::size_t i = 0; i < x.size(); ++i) {
                acc += d2[i];
                if (r < acc && d2[i] > 0) {
                    pick = i;
                    break;
                }
            }
        }
        c.push_back(x[pick]);
    }
    return c;
}

}  // namespace detail

/// Fits k centroids. An empty cluster is re-seeded at the training point
/// farthest from its assigned centroid.
inline KmeansAuthenticator kmeans_fit(const std::vector<FeatureVector>& vectors, const KmeansOptions& opt) {
    if (opt.k < 1) throw UsageError("k-means k must be >= 1");
    if (vectors.size() < opt.k)
        throw DataError("k-means needs at least k=" + std::to_string(opt.k) + " vectors, got " +
                        std::to_string(vectors.size()));
    KmeansAuthenticator m;
    m.schema = *vectors.front().schema;
    m.quantile = opt.quantile;
    std::vector<std::vector<double>> x;
    x.reserve(vectors.size());
    for (const auto& v : vectors) {
        require_schema(m.schema, *v.schema, "kmeans_fit");
        require_finite(v.values, "kmeans_fit");
        x.push_back(v.values);
    }
    const std::size_t n = x.size(), d = m.schema.size();
    Rng rng(opt.seed);
    auto c = detail::kmeanspp_seed(x, opt.k, rng);

    std::vector<std::size_t> assign(n);
    std::vector<double> dist(n);
    for (std::size_t it = 0; it < opt.max_iterations; ++it) {
        double inertia = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            auto [j, d2] = detail::nearest_centroid(c, x[i]);
            assign[i] = j;
            dist[i] = d2;
            inertia += d2;
        }
        m.inertia_history.push_back(inertia);
        m.iterations = it + 1;

        std::vector<std::vector<double>> next(opt.k, std::vector<double>(d, 0.0));
        std::vector<std::size_t> count(opt.k, 0);
        for (std::size_t i = 0; i < n; ++i) {
            ++count[assign[i]];
            for (std::size_t t = 0; t < d; ++t) next[assign[i]][t] += x[i][t];
        }
        std::vector<bool> taken(n, false);
        for (std::size_t j = 0; j < opt.k; ++j) {
            if (count[j] > 0) {
                for (auto& v : next[j]) v /= static_cast<double>(count[j]);
                continue;
            }
            // empty cluster: farthest point from its own centroid
            std::size_t far = 0;
            double fd = -1.0;
            for (std::size_t i = 0; i < n; ++i)
                if (!taken[i] && dist[i] > fd) {
                    fd = dist[i];
                    far = i;
                }
            taken[far] = true;
            next[j] = x[far];
        }
        double movement = 0.0;
        for (std::size_t j = 0; j < opt.k; ++j) movement = std::max(movement, std::sqrt(squared_distance(next[j], c[j])));
        c = std::move(next);
        if (movement < opt.tolerance) break;
    }
    // Final assignment against the converged centroids.
    double inertia = 0.0;
    m.training_distances.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        auto [_, d2] = detail::nearest_centroid(c, x[i]);
        inertia += d2;
        m.training_distances[i] = std::sqrt(d2);
    }
    if (inertia < m.inertia_history.back()) m.inertia_history.push_back(inertia);
    m.centroids = std::move(c);
    m.threshold = quantile_threshold(m.training_distances, opt.quantile);
    return m;
}

inline void recalibrate(KmeansAuthenticator& m, double quantile) {
    m.quantile = quantile;
    m.threshold = quantile_threshold(m.training_distances, quantile);
}

inline AuthDecision kmeans_decide(const KmeansAuthenticator& m, std::span<const double> x) {
    if (x.size() != m.schema.size()) throw ModelError("kmeans_decide: feature schema mismatch");
    AuthDecision d;
    d.score = std::sqrt(detail::nearest_centroid(m.centroids, x).second);
    d.threshold = m.threshold;
    d.verdict = d.score <= m.threshold ? Verdict::authorized : Verdict::unauthorized;
    return d;
}

inline AuthDecision kmeans_decide(const KmeansAuthenticator& m, const FeatureVector& v) {
    require_schema(m.schema, *v.schema, "kmeans_decide");
    auto d = kmeans_decide(m, std::span<const double>(v.values));
    d.window_start = v.window_start;
    return d;
}

}  // namespace canid
