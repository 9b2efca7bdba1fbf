#pragma once

// Anti-theft guard: a pure transition function over GuardState, override
// codes, and the bus node that windows live traffic, asks the model, and
// injects the disable payload while the vehicle is Disabled.

#include <condition_variable>
#include <cstring>
#include <deque>
#include <mutex>
#include <ostream>

#include <openssl/crypto.h>
#include <openssl/evp.h>
#include <openssl/hmac.h>

#include "models/auth_model.hpp"
#include "sim.hpp"

namespace canid::guard {

enum class Phase { pending, authenticated, warning, disabled };
enum class Led { yellow, green, flashing_red, solid_red };

inline constexpr Led led_for(Phase p) {
    switch (p) {
        case Phase::pending: return Led::yellow;
        case Phase::authenticated: return Led::green;
        case Phase::warning: return Led::flashing_red;
        case Phase::disabled: return Led::solid_red;
    }
    return Led::yellow;
}

inline const char* to_string(Phase p) {
    switch (p) {
        case Phase::pending: return "pending";
        case Phase::authenticated: return "authenticated";
        case Phase::warning: return "warning";
        case Phase::disabled: return "disabled";
    }
    return "?";
}

inline const char* to_string(Led l) {
    switch (l) {
        case Led::yellow: return "yellow";
        case Led::green: return "green";
        case Led::flashing_red: return "flashing_red";
        case Led::solid_red: return "solid_red";
    }
    return "?";
}

enum class EventKind {
    decision,
    phase_change,
    warning_issued,
    injection_started,
    injection_stopped,
    override_accepted,
    override_rejected,
    restriction_violation
};

inline const char* to_string(EventKind k) {
    switch (k) {
        case EventKind::decision: return "decision";
        case EventKind::phase_change: return "phase_change";
        case EventKind::warning_issued: return "warning_issued";
        case EventKind::injection_started: return "injection_started";
        case EventKind::injection_stopped: return "injection_stopped";
        case EventKind::override_accepted: return "override_accepted";
        case EventKind::override_rejected: return "override_rejected";
        case EventKind::restriction_violation: return "restriction_violation";
    }
    return "?";
}

// ---------------------------------------------------------------------------
// Override codes
// ---------------------------------------------------------------------------

struct OverrideGrant {
    std::string code;  // 8 decimal digits
    Timestamp expiry;
    std::string issuer;  // owner key identifier
};

/// Owner secret plus the parameters both issuer and guard agree on. Expiries
/// are whole multiples of slot_s so the guard can verify a bare code by
/// trying the few slots inside max_validity_s.
struct OverrideKey {
    std::vector<std::uint8_t> secret;
    std::string vehicle_id = "vehicle";
    std::int64_t slot_s = 3600;
    std::int64_t max_validity_s = 8 * 3600;

    void validate() const {
        if (secret.empty()) throw UsageError("override secret must not be empty");
        if (slot_s <= 0 || max_validity_s <= 0) throw UsageError("override slot and validity must be > 0");
        if (max_validity_s / slot_s > 16) throw UsageError("override validity spans too many slots (max 16)");
    }
};

namespace detail {

inline std::array<std::uint8_t, 32> hmac_sha256(std::span<const std::uint8_t> key, std::string_view msg) {
    std::array<std::uint8_t, 32> out{};
    unsigned int len = 0;
    if (!HMAC(EVP_sha256(), key.data(), static_cast<int>(key.size()),
              reinterpret_cast<const unsigned char*>(msg.data()), msg.size(), out.data(), &len) ||
        len != out.size())
        throw std::runtime_error("HMAC-SHA256 failed");
    return out;
}

}  // namespace detail

/// Short identifier of the owner key, safe to log.
inline std::string key_id(std::span<const std::uint8_t> secret) {
    auto mac = detail::hmac_sha256(secret, "canid-key-id");
    return to_hex(std::span<const std::uint8_t>(mac.data(), 4));
}

/// Code for (vehicle, expiry): dynamic truncation of HMAC-SHA256 to 8 digits.
inline std::string override_code(std::span<const std::uint8_t> secret, std::string_view vehicle_id, Timestamp expiry) {
    std::string msg(vehicle_id);
    msg += '|';
    msg += std::to_string(expiry.us / 1000000);
    auto mac = detail::hmac_sha256(secret, msg);
    std::size_t off = mac[31] & 0x0F;
    std::uint32_t bin = (static_cast<std::uint32_t>(mac[off] & 0x7F) << 24) | (static_cast<std::uint32_t>(mac[off + 1]) << 16) |
                        (static_cast<std::uint32_t>(mac[off + 2]) << 8) | mac[off + 3];
    char buf[9];
    std::snprintf(buf, sizeof buf, "%08u", bin % 100000000u);
    return buf;
}

/// Grant valid for at least `validity_s` (rounded up to the slot grid, capped at max validity).
inline OverrideGrant issue_override(const OverrideKey& key, double validity_s, Timestamp now) {
    key.validate();
    if (!(validity_s > 0)) throw UsageError("override validity must be > 0");
    const std::int64_t now_s = now.us / 1000000;
    auto want = static_cast<std::int64_t>(std::ceil(validity_s));
    want = std::min(want, key.max_validity_s);
    std::int64_t expiry_s = ((now_s + want + key.slot_s - 1) / key.slot_s) * key.slot_s;
    if (expiry_s <= now_s) expiry_s += key.slot_s;
    OverrideGrant g;
    g.expiry = Timestamp{expiry_s * 1000000};
    g.code = override_code(key.secret, key.vehicle_id, g.expiry);
    g.issuer = key_id(key.secret);
    return g;
}

inline bool well_formed_code(std::string_view code) {
    return code.size() == 8 && std::all_of(code.begin(), code.end(), [](char c) { return c >= '0' && c <= '9'; });
}

/// The unexpired grant matching `code`, if any.
inline std::optional<OverrideGrant> verify_override(const OverrideKey& key, std::string_view code, Timestamp now) {
    key.validate();
    if (!well_formed_code(code)) return std::nullopt;
    const std::int64_t now_s = now.us / 1000000;
    const std::int64_t first = (now_s / key.slot_s + 1) * key.slot_s;
    std::optional<OverrideGrant> found;
    for (std::int64_t e = first; e <= now_s + key.max_validity_s + key.slot_s; e += key.slot_s) {
        Timestamp expiry{e * 1000000};
        if (!(now < expiry)) continue;
        auto expect = override_code(key.secret, key.vehicle_id, expiry);
        // constant-time compare; keep scanning so timing does not reveal the slot
        if (CRYPTO_memcmp(expect.data(), code.data(), 8) == 0 && !found)
            found = OverrideGrant{std::string(code), expiry, key_id(key.secret)};
    }
    return found;
}

/// Parses a secret given as hex ("hex:...") or raw text.
inline std::vector<std::uint8_t> parse_secret(const std::string& s) {
    if (s.rfind("hex:", 0) == 0) return from_hex(s.substr(4));
    return {s.begin(), s.end()};
}

// ---------------------------------------------------------------------------
// Config, state, events
// ---------------------------------------------------------------------------

struct RestrictionPolicy {
    double max_speed_mph = 45.0;
};

struct GuardConfig {
    double initial_window = 60.0;
    double grace_period = 300.0;
    std::size_t smoothing = 5;
    CanFrame injection_payload = sim::disable_frame();
    double injection_period = 0.001;
    std::optional<RestrictionPolicy> restriction;
    /// How often the latest decoded speed is checked against the policy.
    double restriction_check_period = 1.0;
    /// Joystick mode: simulated verdicts replace model decisions.
    bool simulated_verdicts = false;
    OverrideKey override_key{parse_secret("owner-secret"), "vehicle", 3600, 8 * 3600};

    void validate() const {
        if (!(grace_period > 0)) throw UsageError("grace period must be > 0");
        if (!(injection_period > 0)) throw UsageError("injection period must be > 0");
        if (initial_window < 0) throw UsageError("initial window must be >= 0");
        if (smoothing < 1) throw UsageError("smoothing window must be >= 1");
        if (!(restriction_check_period > 0)) throw UsageError("restriction check period must be > 0");
        if (!injection_payload.valid()) throw UsageError("injection payload is not a valid frame");
        override_key.validate();
    }

    /// Desk-demo preset: 10 s grace.
    static GuardConfig demo() {
        GuardConfig c;
        c.grace_period = 10.0;
        return c;
    }
};

inline std::string warning_text(double grace_s) {
    char buf[160];
    std::snprintf(buf, sizeof buf,
                  "Driver check failed. Throttle cuts out in %.0f s unless an owner code is entered; "
                  "pull over when safe.",
                  grace_s);
    return buf;
}

struct GuardState {
    Phase phase = Phase::pending;
    Timestamp phase_entered_at;
    std::optional<Timestamp> grace_deadline;
    std::optional<OverrideGrant> active_override;
    std::set<std::string> used_codes;
    DecisionSmoother smoother{5};
    Timestamp session_start;
    Timestamp last_step;
    std::optional<double> last_score;

    Led led() const { return led_for(phase); }
};

inline GuardState initial_state(const GuardConfig& cfg, Timestamp start) {
    cfg.validate();
    GuardState s;
    s.phase_entered_at = s.session_start = s.last_step = start;
    s.smoother = DecisionSmoother(cfg.smoothing);
    return s;
}

struct GuardEvent {
    Timestamp time;
    std::uint64_t seq = 0;
    EventKind kind = EventKind::decision;
    std::string detail;
    std::optional<double> score;
    /// Phase after the step that produced the event.
    Phase phase = Phase::pending;
};

struct GuardInputs {
    std::optional<std::string> override_attempt;
    std::optional<Verdict> simulated_verdict;
};

struct StepResult {
    GuardState state;
    std::vector<GuardEvent> events;
};

/// One transition step. Pure: same (state, now, decision, inputs, config) in, same result out.
inline StepResult guard_step(GuardState s, Timestamp now, const std::optional<AuthDecision>& decision,
                             const GuardInputs& in, const GuardConfig& cfg) {
    if (now < s.last_step) throw UsageError("guard_step requires monotone time");
    s.last_step = now;
    std::vector<GuardEvent> ev;
    auto emit = [&](EventKind k, std::string detail, std::optional<double> score = {}) {
        ev.push_back(GuardEvent{now, 0, k, std::move(detail), score, s.phase});
    };
    auto enter = [&](Phase p) {
        if (s.phase == p) return;
        std::string from = to_string(s.phase);
        const bool was_disabled = s.phase == Phase::disabled;
        s.phase = p;
        s.phase_entered_at = now;
        s.grace_deadline.reset();
        emit(EventKind::phase_change, from + "->" + to_string(p));
        if (was_disabled) emit(EventKind::injection_stopped, format_id_data(cfg.injection_payload));
        if (p == Phase::warning) {
            s.grace_deadline = now + static_cast<std::int64_t>(std::llround(cfg.grace_period * 1e6));
            emit(EventKind::warning_issued, warning_text(cfg.grace_period));
        }
        if (p == Phase::disabled) emit(EventKind::injection_started, format_id_data(cfg.injection_payload));
    };

    if (s.active_override && !(now < s.active_override->expiry)) s.active_override.reset();

    if (in.override_attempt) {
        const std::string& code = *in.override_attempt;
        auto grant = s.used_codes.count(code) ? std::nullopt : verify_override(cfg.override_key, code, now);
        if (grant) {
            s.used_codes.insert(code);
            s.active_override = grant;
            s.smoother.clear();
            emit(EventKind::override_accepted, "expires " + format_timestamp(grant->expiry));
            enter(Phase::authenticated);
        } else {
            emit(EventKind::override_rejected, well_formed_code(code) ? "invalid or used code" : "malformed code");
        }
    }

    std::optional<Verdict> smoothed;
    if (cfg.simulated_verdicts) {
        if (in.simulated_verdict) {
            smoothed = *in.simulated_verdict;
            emit(EventKind::decision, std::string("simulated ") + to_string(*in.simulated_verdict));
        }
    } else if (decision) {
        s.last_score = decision->score;
        smoothed = s.smoother.push(decision->verdict);
        emit(EventKind::decision, to_string(decision->verdict), decision->score);
    }

    if (smoothed) {
        const bool pass = *smoothed == Verdict::authorized;
        switch (s.phase) {
            case Phase::pending:
                if (pass)
                    enter(Phase::authenticated);
                else if ((now - s.session_start) >= static_cast<std::int64_t>(std::llround(cfg.initial_window * 1e6)))
                    enter(Phase::warning);
                break;
            case Phase::authenticated:
                if (!pass && !s.active_override) enter(Phase::warning);
                break;
            case Phase::warning:
                if (pass) enter(Phase::authenticated);
                break;
            case Phase::disabled: break;
        }
    }

    if (s.phase == Phase::warning && s.grace_deadline && now >= *s.grace_deadline) enter(Phase::disabled);
    return {std::move(s), std::move(ev)};
}

/// Reporting-only speed policy check.
inline std::optional<GuardEvent> check_restriction(const GuardState& s, double speed_mph,
                                                   const std::optional<RestrictionPolicy>& policy, Timestamp now) {
    if (!policy || !(speed_mph > policy->max_speed_mph)) return std::nullopt;
    char buf[96];
    std::snprintf(buf, sizeof buf, "speed %.2f mph exceeds %.2f mph", speed_mph, policy->max_speed_mph);
    return GuardEvent{now, 0, EventKind::restriction_violation, buf, speed_mph, s.phase};
}

// ---------------------------------------------------------------------------
// Snapshots and the shared event log
// ---------------------------------------------------------------------------

struct Snapshot {
    Timestamp time;
    Phase phase = Phase::pending;
    std::optional<double> grace_remaining;
    std::optional<Timestamp> grace_deadline;
    std::optional<double> last_score;
    bool simulated = false;
};

inline Snapshot snapshot(const GuardState& s, const GuardConfig& cfg, Timestamp now) {
    Snapshot n;
    n.time = now;
    n.phase = s.phase;
    n.grace_deadline = s.grace_deadline;
    if (s.grace_deadline) n.grace_remaining = std::max<double>(0.0, (*s.grace_deadline - now) * 1e-6);
    n.last_score = s.last_score;
    n.simulated = cfg.simulated_verdicts;
    return n;
}

struct ApiEvent {
    GuardEvent event;
    Snapshot snapshot;
};

inline nlohmann::json to_json(const Snapshot& s) {
    auto opt = [](const auto& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
    return {{"time", format_timestamp(s.time)},
            {"phase", to_string(s.phase)},
            {"led", to_string(led_for(s.phase))},
            {"grace_remaining", opt(s.grace_remaining)},
            {"grace_deadline", s.grace_deadline ? nlohmann::json(format_timestamp(*s.grace_deadline)) : nlohmann::json(nullptr)},
            {"last_score", opt(s.last_score)},
            {"mode", s.simulated ? "simulated" : "model"}};
}

inline nlohmann::json to_json(const GuardEvent& e) {
    return {{"time", format_timestamp(e.time)},
            {"seq", e.seq},
            {"kind", to_string(e.kind)},
            {"detail", e.detail},
            {"score", e.score ? nlohmann::json(*e.score) : nlohmann::json(nullptr)},
            {"phase", to_string(e.phase)}};
}

inline nlohmann::json to_json(const ApiEvent& e) {
    auto j = to_json(e.event);
    j["state"] = to_json(e.snapshot);
    return j;
}

/// Append-only, concurrently readable event log. Sequence numbers are
/// assigned on append; readers block on wait_next until a later event or close.
class EventLog {
public:
    void set_sink(std::ostream* ndjson) {
        std::lock_guard lk(mu_);
        sink_ = ndjson;
    }

    std::uint64_t append(GuardEvent e, const Snapshot& snap) {
        std::lock_guard lk(mu_);
        e.seq = events_.size() + 1;
        if (!events_.empty() && e.time < events_.back().event.time)
            throw std::logic_error("guard events must be appended in time order");
        events_.push_back(ApiEvent{std::move(e), snap});
        snapshot_ = snap;
        if (sink_) *sink_ << to_json(events_.back()).dump() << '\n' << std::flush;
        cv_.notify_all();
        return events_.back().event.seq;
    }

    /// Refreshes the state snapshot without an event (e.g. grace countdown).
    void update_snapshot(const Snapshot& snap) {
        std::lock_guard lk(mu_);
        snapshot_ = snap;
    }

    Snapshot current() const {
        std::lock_guard lk(mu_);
        return snapshot_;
    }

    std::size_t size() const {
        std::lock_guard lk(mu_);
        return events_.size();
    }

    std::vector<ApiEvent> events() const {
        std::lock_guard lk(mu_);
        return {events_.begin(), events_.end()};
    }

    /// Event at `index` (0-based), waiting up to `timeout`; nullopt on timeout or when closed and drained.
    std::optional<ApiEvent> wait_next(std::size_t index, std::chrono::milliseconds timeout) {
        std::unique_lock lk(mu_);
        cv_.wait_for(lk, timeout, [&] { return index < events_.size() || closed_; });
        if (index < events_.size()) return events_[index];
        return std::nullopt;
    }

    void close() {
        {
            std::lock_guard lk(mu_);
            closed_ = true;
        }
        cv_.notify_all();
    }

    bool closed() const {
        std::lock_guard lk(mu_);
        return closed_;
    }

private:
    mutable std::mutex mu_;
    std::condition_variable cv_;
    std::deque<ApiEvent> events_;
    Snapshot snapshot_;
    std::ostream* sink_ = nullptr;
    bool closed_ = false;
};

/// Thread-safe queue of operator inputs (override codes, joystick verdicts).
class CommandQueue {
public:
    void push(GuardInputs in) {
        std::lock_guard lk(mu_);
        q_.push_back(std::move(in));
    }
    void push_override(std::string code) { push(GuardInputs{std::move(code), std::nullopt}); }
    void push_verdict(Verdict v) { push(GuardInputs{std::nullopt, v}); }

    std::vector<GuardInputs> drain() {
        std::lock_guard lk(mu_);
        std::vector<GuardInputs> out(q_.begin(), q_.end());
        q_.clear();
        return out;
    }

private:
    std::mutex mu_;
    std::deque<GuardInputs> q_;
};

// ---------------------------------------------------------------------------
// Bus node
// ---------------------------------------------------------------------------

/// The guard attached to a bus. Register it before other co-simulation
/// participants so its injections carry the tick time.
class GuardNode : public sim::Participant {
public:
    /// `model` may be null only in simulated-verdict mode.
    GuardNode(VirtualBus& bus, const AuthModel* model, GuardConfig cfg, EventLog& log, CommandQueue* commands,
              Timestamp start, std::string node_id = "guard")
        : cfg_(std::move(cfg)), log_(log), commands_(commands),
          featurizer_(model ? model->pipeline : FeaturePipeline{WindowSpec{}, {0x0C9}, {}, {}, {}}), model_(model),
          state_(initial_state(cfg_, start)) {
        if (!model_ && !cfg_.simulated_verdicts) throw UsageError("guard needs a model unless verdicts are simulated");
        if (model_) check_model_schema(*model_, *model_->pipeline.output_schema());
        cfg_.injection_payload.channel = cfg_.injection_payload.channel.empty() ? "can0" : cfg_.injection_payload.channel;
        node_ = bus.attach(node_id);
        log_.update_snapshot(snapshot(state_, cfg_, start));
    }

    void tick(Timestamp now) override {
        for (auto& d : node_->poll()) {
            if (d.source == node_->id()) continue;
            if (auto v = sim::decode_speed(d.frame)) latest_speed_ = *v;
            featurizer_.add(d.frame);
        }
        bool stepped = false;
        // Frames of this tick are not all in yet; close windows up to the previous tick.
        for (auto& v : featurizer_.advance(now - 1)) {
            if (!model_ || cfg_.simulated_verdicts) continue;
            step(now, model_->decide(v), {});
            stepped = true;
        }
        if (commands_) {
            for (auto& in : commands_->drain()) {
                step(now, std::nullopt, in);
                stepped = true;
            }
        }
        if (!stepped) step(now, std::nullopt, {});

        if (cfg_.restriction && latest_speed_ && (!next_restriction_check_ || now >= *next_restriction_check_)) {
            if (auto e = check_restriction(state_, *latest_speed_, cfg_.restriction, now)) record(*e, now);
            next_restriction_check_ = now + static_cast<std::int64_t>(std::llround(cfg_.restriction_check_period * 1e6));
        }

        if (state_.phase == Phase::disabled) {
            const auto period = static_cast<std::int64_t>(std::llround(cfg_.injection_period * 1e6));
            if (!next_injection_) next_injection_ = now;
            while (*next_injection_ <= now) {
                node_->inject(cfg_.injection_payload);
                ++injected_;
                *next_injection_ = *next_injection_ + period;
            }
        } else {
            next_injection_.reset();
        }
        log_.update_snapshot(snapshot(state_, cfg_, now));
    }

    const GuardState& state() const { return state_; }
    const GuardConfig& config() const { return cfg_; }
    std::uint64_t injected() const { return injected_; }

private:
    void step(Timestamp now, const std::optional<AuthDecision>& d, const GuardInputs& in) {
        auto r = guard_step(std::move(state_), now, d, in, cfg_);
        state_ = std::move(r.state);
        for (auto& e : r.events) record(e, now);
    }

    // The snapshot shows the phase the event was emitted in.
    void record(const GuardEvent& e, Timestamp now) {
        auto snap = snapshot(state_, cfg_, now);
        if (snap.phase != e.phase && e.phase != Phase::warning) snap.grace_deadline.reset(), snap.grace_remaining.reset();
        snap.phase = e.phase;
        log_.append(e, snap);
    }

    GuardConfig cfg_;
    EventLog& log_;
    CommandQueue* commands_;
    OnlineFeaturizer featurizer_;
    const AuthModel* model_;
    GuardState state_;
    std::shared_ptr<BusNode> node_;
    std::optional<Timestamp> next_injection_;
    std::optional<Timestamp> next_restriction_check_;
    std::optional<double> latest_speed_;
    std::uint64_t injected_ = 0;
};

}  // namespace canid::guard
