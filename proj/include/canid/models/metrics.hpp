#pragma once

#include <deque>
#include <map>

#include "common.hpp"

namespace canid {

/// A decision paired with ground truth and the session it belongs to.
struct LabeledDecision {
    AuthDecision decision;
    bool truly_authorized = true;
    std::string session;
};

/// Positive class is "unauthorized" (a detected thief). Metrics whose
/// denominator is empty are left unset rather than reported as 0.
struct Metrics {
    std::size_t total = 0;
    std::size_t true_positive = 0;   // thief rejected
    std::size_t false_positive = 0;  // owner rejected
    std::size_t true_negative = 0;   // owner accepted
    std::size_t false_negative = 0;  // thief accepted
    std::optional<double> accuracy, precision, recall, f1, far, frr;
    /// Mean over unauthorized sessions of (first correct rejection time - session start), seconds.
    std::optional<double> mean_time_to_detection;
    std::size_t sessions_detected = 0;
    std::size_t unauthorized_sessions = 0;
};

inline Metrics evaluate(const std::vector<LabeledDecision>& decisions) {
    if (decisions.empty()) throw DataError("evaluate needs at least one decision");
    Metrics m;
    m.total = decisions.size();
    struct Session {
        Timestamp start;
        std::optional<Timestamp> detected;
        bool unauthorized = false;
    };
    std::map<std::string, Session> sessions;
    for (const auto& ld : decisions) {
        bool rejected = ld.decision.verdict == Verdict::unauthorized;
        if (!ld.truly_authorized && rejected) ++m.true_positive;
        if (ld.truly_authorized && rejected) ++m.false_positive;
        if (ld.truly_authorized && !rejected) ++m.true_negative;
        if (!ld.truly_authorized && !rejected) ++m.false_negative;

        auto [it, fresh] = sessions.try_emplace(ld.session, Session{ld.decision.window_start, {}, false});
        auto& s = it->second;
        if (!fresh) s.start = std::min(s.start, ld.decision.window_start);
        if (!ld.truly_authorized) {
            s.unauthorized = true;
            if (rejected && (!s.detected || ld.decision.time < *s.detected)) s.detected = ld.decision.time;
        }
    }
    auto ratio = [](std::size_t a, std::size_t b) -> std::optional<double> {
        if (b == 0) return std::nullopt;
        return static_cast<double>(a) / static_cast<double>(b);
    };
    const std::size_t pos = m.true_positive + m.false_negative;
    const std::size_t neg = m.true_negative + m.false_positive;
    m.accuracy = ratio(m.true_positive + m.true_negative, m.total);
    m.precision = ratio(m.true_positive, m.true_positive + m.false_positive);
    m.recall = ratio(m.true_positive, pos);
    if (m.precision && m.recall && (*m.precision + *m.recall) > 0)
        m.f1 = 2.0 * *m.precision * *m.recall / (*m.precision + *m.recall);
    else if (m.precision && m.recall)
        m.f1 = 0.0;
    m.far = ratio(m.false_negative, pos);
    m.frr = ratio(m.false_positive, neg);

    double ttd = 0.0;
    for (const auto& [_, s] : sessions) {
        if (!s.unauthorized) continue;
        ++m.unauthorized_sessions;
        if (s.detected) {
            ++m.sessions_detected;
            ttd += (*s.detected - s.start) * 1e-6;
        }
    }
    if (m.sessions_detected > 0) m.mean_time_to_detection = ttd / static_cast<double>(m.sessions_detected);
    return m;
}

inline nlohmann::json to_json(const Metrics& m) {
    auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
    return {{"total", m.total},
            {"tp", m.true_positive},
            {"fp", m.false_positive},
            {"tn", m.true_negative},
            {"fn", m.false_negative},
            {"accuracy", opt(m.accuracy)},
            {"precision", opt(m.precision)},
            {"recall", opt(m.recall)},
            {"f1", opt(m.f1)},
            {"far", opt(m.far)},
            {"frr", opt(m.frr)},
            {"mean_time_to_detection", opt(m.mean_time_to_detection)},
            {"unauthorized_sessions", m.unauthorized_sessions},
            {"sessions_detected", m.sessions_detected}};
}

/// Majority vote over the last N per-window verdicts. Reports nothing until
/// N verdicts have been seen.
class DecisionSmoother {
public:
    explicit DecisionSmoother(std::size_t n = 5) : n_(n) {
        if (n_ < 1) throw UsageError("smoothing window must be >= 1");
    }

    std::optional<Verdict> push(Verdict v) {
        recent_.push_back(v);
        if (recent_.size() > n_) recent_.pop_front();
        return current();
    }

    std::optional<Verdict> current() const {
        if (recent_.size() < n_) return std::nullopt;
        std::size_t ok = static_cast<std::size_t>(std::count(recent_.begin(), recent_.end(), Verdict::authorized));
        return 2 * ok > n_ ? Verdict::authorized : Verdict::unauthorized;
    }

    void clear() { recent_.clear(); }
    std::size_t window() const { return n_; }
    const std::deque<Verdict>& recent() const { return recent_; }

private:
    std::size_t n_;
    std::deque<Verdict> recent_;
};

}  // namespace canid
