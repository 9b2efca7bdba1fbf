#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "../features.hpp"

namespace canid {

enum class Verdict { authorized, unauthorized };

inline const char* to_string(Verdict v) { return v == Verdict::authorized ? "authorized" : "unauthorized"; }

struct AuthDecision {
    Verdict verdict = Verdict::authorized;
    /// Distance (k-means), reconstruction error (autoencoder) or mean neighbor distance (k-NN).
    double score = 0.0;
    /// Threshold used; NaN for label-based models.
    double threshold = 0.0;
    Timestamp window_start;
    /// Bus time at which the decision became available (window end).
    Timestamp time;
    std::optional<std::string> predicted_label;
};

/// Seeded generator with platform-independent derived draws.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}
    std::uint64_t next() { return eng_(); }
    /// Uniform in [0, 1).
    double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    /// Uniform integer in [0, n).
    std::size_t index(std::size_t n) { return static_cast<std::size_t>(uniform() * static_cast<double>(n)); }
    /// Standard normal via Box-Muller.
    double normal() {
        double u1 = uniform(), u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
    }
    template <class T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[index(i)]);
    }

private:
    std::mt19937_64 eng_;
};

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

/// Nearest-rank quantile: the smallest value with at least q of the sample at or below it.
inline double quantile_threshold(std::vector<double> values, double q) {
    if (values.empty()) throw DataError("quantile of an empty sample");
    if (!(q > 0.0 && q <= 1.0)) throw UsageError("calibration quantile must be in (0, 1]");
    std::sort(values.begin(), values.end());
    auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(values.size()) - 1e-12));
    rank = std::clamp<std::size_t>(rank, 1, values.size());
    return values[rank - 1];
}

inline void require_finite(std::span<const double> v, const char* what) {
    for (double x : v)
        if (!std::isfinite(x)) throw DataError(std::string(what) + ": non-finite feature value");
}

}  // namespace canid
