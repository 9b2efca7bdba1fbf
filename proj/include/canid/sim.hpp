#pragma once

// Synthetic vehicle: a longitudinal plant, a profile-driven driver model,
// the fictional ID map it broadcasts on, and the bus-time co-simulation loop
// that lets plant, guard and injectors share one virtual bus.

#include <cmath>
#include <deque>
#include <fstream>
#include <functional>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bus.hpp"
#include "models/common.hpp"
#include "trace.hpp"

namespace canid::sim {

// ---------------------------------------------------------------------------
// Synthetic ID map
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kPowertrainId = 0x0C9;
inline constexpr std::uint32_t kSpeedId = 0x3E9;
inline constexpr std::uint32_t kAcceleratorId = 0x1A1;
inline constexpr std::uint32_t kBrakeId = 0x0F1;

/// The acceleration-disable command: cansend can0 0C9#0000000000001800
inline CanFrame disable_frame(Timestamp ts = {}, std::string channel = "can0") {
    return make_frame(ts, kPowertrainId, {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x18, 0x00}, std::move(channel));
}

inline bool is_disable_frame(const CanFrame& f) { return f.same_payload(disable_frame()); }

enum class Signal { powertrain, speed, accelerator, brake, constant };

struct IdSchedule {
    std::uint32_t id;
    std::int64_t period_ms;
    Signal signal;
    std::vector<std::uint8_t> constant;  // payload for constant fillers
};

/// Three behavior-carrying IDs plus twenty periodic fillers. Aggregate rate
/// is 1095 frames/s.
inline const std::vector<IdSchedule>& synthetic_id_map() {
    static const std::vector<IdSchedule> map = {
        {kPowertrainId, 10, Signal::powertrain, {}},
        {kSpeedId, 10, Signal::speed, {}},
        {kAcceleratorId, 25, Signal::accelerator, {}},
        {kBrakeId, 20, Signal::brake, {}},
        {0x0C1, 20, Signal::constant, {0x10, 0x5F, 0x36, 0xE6, 0x10, 0x65, 0x93, 0xA7}},
        {0x0C5, 20, Signal::constant, {0x10, 0x24, 0x4F, 0xBB, 0x10, 0x25, 0xE9, 0xAE}},
        {0x0C7, 20, Signal::constant, {0x01, 0xCD, 0x51, 0x9E}},
        {0x0F9, 20, Signal::constant, {0x01, 0x69, 0x40, 0x06, 0xAB, 0x53, 0x19, 0x12}},
        {0x17D, 20, Signal::constant, {0x04, 0xE0, 0x00, 0x00, 0x7D, 0x00, 0x01, 0x00}},
        {0x17F, 20, Signal::constant, {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00}},
        {0x189, 20, Signal::constant, {0x0F, 0xFF, 0x0F, 0xFF, 0x30, 0x01, 0x19, 0x12}},
        {0x191, 20, Signal::constant, {0x07, 0x5B, 0x07, 0x5B, 0x07, 0x5B, 0x24, 0x93}},
        {0x199, 20, Signal::constant, {0x0F, 0xFF, 0x0E, 0x70, 0xF1, 0x90, 0x00, 0xFF}},
        {0x19D, 20, Signal::constant, {0x00, 0x00, 0x00, 0x00, 0x00, 0x1D, 0xD3, 0x2D}},
        {0x1AF, 20, Signal::constant, {0x00, 0x00, 0x20}},
        {0x1C3, 20, Signal::constant, {0x07, 0x5B, 0x07, 0x49, 0x00, 0x00, 0x00, 0x00}},
        {0x1CB, 20, Signal::constant, {0x10, 0x0D, 0x00}},
        {0x1E5, 20, Signal::constant, {0x46, 0xFF, 0xBF, 0xCE, 0xD4, 0x00, 0x3F, 0x00}},
        {0x1EB, 25, Signal::constant, {0x01, 0x8C}},
        {0x1ED, 25, Signal::constant, {0x41, 0x74, 0x06, 0x66, 0x07, 0x4E, 0x08, 0x00}},
        {0x1EF, 40, Signal::constant, {0x00, 0x00, 0x09, 0xF6}},
        {0x1F3, 50, Signal::constant, {0x00, 0x20}},
        {0x1F5, 50, Signal::constant, {0x44, 0x04, 0x00, 0x04, 0x00, 0x00, 0x09, 0x00}},
        {0x348, 100, Signal::constant, {0x07, 0xAC, 0x07, 0xAA}},
    };
    return map;
}

inline double synthetic_nominal_rate() {
    double hz = 0.0;
    for (const auto& s : synthetic_id_map()) hz += 1000.0 / static_cast<double>(s.period_ms);
    return hz;
}

/// Vocabulary (ascending) of the synthetic vehicle.
inline std::vector<std::uint32_t> synthetic_vocabulary() {
    std::vector<std::uint32_t> v;
    for (const auto& s : synthetic_id_map()) v.push_back(s.id);
    std::sort(v.begin(), v.end());
    return v;
}

/// Decoded vehicle speed from a synthetic 0x3E9 frame (mph).
inline std::optional<double> decode_speed(const CanFrame& f) {
    if (f.arb_id != kSpeedId || f.dlc < 2) return std::nullopt;
    return (256.0 * f.bytes[0] + f.bytes[1]) / 100.0;
}

/// Decoded engine speed from a 0x0C9 frame (bytes 2-3, rpm x 4).
inline std::optional<double> decode_rpm(const CanFrame& f) {
    if (f.arb_id != kPowertrainId || f.dlc < 4) return std::nullopt;
    return (256.0 * f.bytes[2] + f.bytes[3]) / 4.0;
}

// ---------------------------------------------------------------------------
// Driver profile
// ---------------------------------------------------------------------------

struct DriverProfile {
    std::string name = "driver";
    /// Label written into generated trace metadata.
    std::string driver_label = kUnknownDriver;
    double pedal_aggressiveness = 0.5;  // 0-1, accelerator ramp rate
    double target_speed_mean = 30.0;    // mph
    double target_speed_stddev = 5.0;   // mph
    double brake_intensity = 0.5;       // 0-1
    double pedal_jitter = 0.02;         // >= 0, high-frequency pedal noise amplitude
    double stop_frequency = 0.5;        // stops per minute

    void validate() const {
        auto in01 = [](double v) { return v >= 0.0 && v <= 1.0; };
        if (!in01(pedal_aggressiveness) || !in01(brake_intensity))
            throw UsageError("profile " + name + ": aggressiveness and brake intensity must be in [0, 1]");
        if (target_speed_mean < 0 || target_speed_stddev < 0 || pedal_jitter < 0 || stop_frequency < 0)
            throw UsageError("profile " + name + ": speeds, jitter and stop frequency must be >= 0");
        if (driver_label != kUnknownDriver && !matches_label_pattern(driver_label))
            throw UsageError("profile " + name + ": driver label '" + driver_label + "' is not in the taxonomy");
    }
};

inline nlohmann::json to_json(const DriverProfile& p) {
    return {{"name", p.name},
            {"driver_label", p.driver_label},
            {"pedal_aggressiveness", p.pedal_aggressiveness},
            {"target_speed", {{"mean", p.target_speed_mean}, {"stddev", p.target_speed_stddev}}},
            {"brake_intensity", p.brake_intensity},
            {"pedal_jitter", p.pedal_jitter},
            {"stop_frequency", p.stop_frequency}};
}

inline DriverProfile profile_from_json(const nlohmann::json& j) {
    DriverProfile p;
    try {
        p.name = j.value("name", p.name);
        p.driver_label = j.value("driver_label", p.driver_label);
        p.pedal_aggressiveness = j.value("pedal_aggressiveness", p.pedal_aggressiveness);
        if (j.contains("target_speed")) {
            p.target_speed_mean = j["target_speed"].value("mean", p.target_speed_mean);
            p.target_speed_stddev = j["target_speed"].value("stddev", p.target_speed_stddev);
        }
        p.brake_intensity = j.value("brake_intensity", p.brake_intensity);
        p.pedal_jitter = j.value("pedal_jitter", p.pedal_jitter);
        p.stop_frequency = j.value("stop_frequency", p.stop_frequency);
    } catch (const nlohmann::json::exception& e) {
        throw UsageError(std::string("bad profile: ") + e.what());
    }
    p.validate();
    return p;
}

/// A calm owner and an aggressive second driver, far apart in every parameter.
inline DriverProfile calm_profile() {
    DriverProfile p;
    p.name = "calm";
    p.driver_label = "female-all-ages-5";
    p.pedal_aggressiveness = 0.15;
    p.target_speed_mean = 25.0;
    p.target_speed_stddev = 3.0;
    p.brake_intensity = 0.25;
    p.pedal_jitter = 0.01;
    p.stop_frequency = 0.5;
    return p;
}

inline DriverProfile aggressive_profile() {
    DriverProfile p;
    p.name = "aggressive";
    p.driver_label = "male-under30-2";
    p.pedal_aggressiveness = 0.9;
    p.target_speed_mean = 45.0;
    p.target_speed_stddev = 8.0;
    p.brake_intensity = 0.9;
    p.pedal_jitter = 0.12;
    p.stop_frequency = 1.5;
    return p;
}

inline std::optional<DriverProfile> builtin_profile(std::string_view name) {
    if (name == "calm") return calm_profile();
    if (name == "aggressive") return aggressive_profile();
    return std::nullopt;
}

/// Loads a profile from a JSON file, or "builtin:<calm|aggressive>".
inline DriverProfile load_profile(const std::string& spec) {
    if (spec.rfind("builtin:", 0) == 0) {
        auto p = builtin_profile(spec.substr(8));
        if (!p) throw UsageError("unknown builtin profile " + spec);
        return *p;
    }
    std::ifstream in(spec);
    if (!in) throw DataError("cannot read profile " + spec);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(spec + ": " + e.what());
    }
    return profile_from_json(j);
}

// ---------------------------------------------------------------------------
// Command scripts: one "time action value" per line, '#' comments.
// ---------------------------------------------------------------------------

struct ScriptCommand {
    double time = 0.0;  // seconds from simulation start
    std::string action;
    std::optional<double> value;  // nullopt for "auto"
};

struct Script {
    std::vector<ScriptCommand> commands;

    static Script parse(std::istream& in) {
        static const std::set<std::string> known = {"pedal", "brake", "inject"};
        Script s;
        std::string line;
        std::size_t no = 0;
        while (std::getline(in, line)) {
            ++no;
            if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
            std::istringstream ls(line);
            ScriptCommand c;
            std::string value;
            if (!(ls >> c.time)) {
                if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
                throw DataError("script line " + std::to_string(no) + ": expected 'time action value'");
            }
            if (!(ls >> c.action >> value) || !known.count(c.action) || c.time < 0)
                throw DataError("script line " + std::to_string(no) + ": expected 'time pedal|brake|inject value'");
            if (value != "auto") {
                try {
                    c.value = std::stod(value);
                } catch (...) {
                    throw DataError("script line " + std::to_string(no) + ": bad value '" + value + "'");
                }
                if (*c.value < 0 || *c.value > 1)
                    throw DataError("script line " + std::to_string(no) + ": value must be in [0, 1]");
            }
            s.commands.push_back(c);
        }
        std::stable_sort(s.commands.begin(), s.commands.end(),
                         [](const ScriptCommand& a, const ScriptCommand& b) { return a.time < b.time; });
        return s;
    }

    static Script load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw DataError("cannot read script " + path);
        return parse(in);
    }
};

// ---------------------------------------------------------------------------
// Plant
// ---------------------------------------------------------------------------

struct PlantParams {
    double coast_half_life = 8.0;      // s, exponential drag
    double max_accel = 8.0;            // mph/s at full pedal
    double max_brake = 20.0;           // mph/s at full brake
    double idle_rpm = 700.0;
    double rpm_per_mph = 30.0;
    double rev_rpm = 2500.0;           // extra rpm at full pedal (revs even when disabled)
    double injection_threshold_hz = 500.0;
    double injection_window_s = 0.1;
    /// Highest speed the latch/coast behaviour was checked at on the road; above it
    /// the model is extrapolated.
    double validated_speed = 35.0;

    double drag() const { return std::log(2.0) / coast_half_life; }
    /// Terminal speed at full pedal.
    double ceiling() const { return max_accel / drag(); }
};

struct PlantInput {
    double pedal = 0.0;  // 0-1
    double brake = 0.0;  // 0-1
};

struct PlantState {
    double speed = 0.0;  // mph
    double rpm = 700.0;
    double accelerator = 0.0;
    double brake = 0.0;
    bool accel_disabled = false;
    Timestamp clock;
    /// Value a gauge reading 0x0C9 shows: the latest powertrain frame on the bus.
    double gauge_rpm = 700.0;
    bool injection_active = false;
    std::deque<Timestamp> recent_disable;  // disable frames inside the rate window
    /// Latched at some point above PlantParams::validated_speed.
    bool extrapolated = false;
};

/// Advances the plant by dt. Disable frames observed at >= the threshold rate
/// form an injection regime; a pedal release inside that regime latches
/// accel_disabled until the regime ends. While latched the pedal is ignored
/// and speed decays exponentially; braking always acts.
inline PlantState plant_step(PlantState s, PlantInput in, std::span<const CanFrame> observed, double dt,
                             const PlantParams& p = {}) {
    if (!(dt > 0)) throw UsageError("plant_step needs dt > 0");
    const Timestamp now = s.clock + static_cast<std::int64_t>(std::llround(dt * 1e6));
    for (const auto& f : observed) {
        if (is_disable_frame(f)) {
            s.recent_disable.push_back(f.timestamp);
            s.gauge_rpm = 0.0;
        }
    }
    const auto window_us = static_cast<std::int64_t>(p.injection_window_s * 1e6);
    while (!s.recent_disable.empty() && now - s.recent_disable.front() > window_us) s.recent_disable.pop_front();
    const double rate = static_cast<double>(s.recent_disable.size()) / p.injection_window_s;
    s.injection_active = rate >= p.injection_threshold_hz;

    s.accelerator = std::clamp(in.pedal, 0.0, 1.0);
    s.brake = std::clamp(in.brake, 0.0, 1.0);
    if (!s.injection_active)
        s.accel_disabled = false;
    else if (s.accelerator == 0.0)
        s.accel_disabled = true;

    const double decay = std::exp(-p.drag() * dt);
    double v = s.speed * decay;
    if (!s.accel_disabled) v += s.accelerator * p.max_accel / p.drag() * (1.0 - decay);
    v -= s.brake * p.max_brake * dt;
    s.speed = std::max(0.0, v);
    if (s.accel_disabled && s.speed > p.validated_speed) s.extrapolated = true;
    s.rpm = p.idle_rpm + s.speed * p.rpm_per_mph + s.accelerator * p.rev_rpm;
    s.clock = now;
    return s;
}

// ---------------------------------------------------------------------------
// Driver model
// ---------------------------------------------------------------------------

/// Turns a profile into pedal/brake commands: piecewise target speeds,
/// Poisson stops, a ramp-limited pedal controller and smoothed pedal noise.
class DriverModel {
public:
    DriverModel(DriverProfile p, std::uint64_t seed) : p_(std::move(p)), rng_(seed) { p_.validate(); }

    void set_profile(DriverProfile p) {
        p.validate();
        p_ = std::move(p);
        segment_end_ = 0.0;
    }
    const DriverProfile& profile() const { return p_; }

    PlantInput step(double t, double dt, double speed) {
        if (t >= segment_end_) {
            target_ = std::max(0.0, p_.target_speed_mean + p_.target_speed_stddev * rng_.normal());
            segment_end_ = t + rng_.uniform(8.0, 20.0);
        }
        if (t >= stop_end_ && rng_.uniform() < p_.stop_frequency / 60.0 * dt) stop_end_ = t + rng_.uniform(3.0, 8.0);
        const double target = t < stop_end_ ? 0.0 : target_;
        const double err = target - speed;

        double desired = std::clamp((0.05 + 0.25 * p_.pedal_aggressiveness) * err, 0.0, 1.0);
        double ramp = (0.2 + 2.0 * p_.pedal_aggressiveness) * dt;
        base_pedal_ = std::clamp(desired, base_pedal_ - ramp, base_pedal_ + ramp);

        // Ornstein-Uhlenbeck noise with a 0.2 s time constant.
        noise_ += -noise_ * dt / 0.2 + std::sqrt(2.0 * dt / 0.2) * rng_.normal();
        PlantInput in;
        in.pedal = desired > 0.0 ? std::clamp(base_pedal_ + p_.pedal_jitter * noise_, 0.0, 1.0) : 0.0;
        if (desired == 0.0) base_pedal_ = 0.0;
        in.brake = err < -3.0 ? std::clamp(p_.brake_intensity * (-err) / 10.0, 0.0, 1.0) : 0.0;
        return in;
    }

private:
    DriverProfile p_;
    Rng rng_;
    double target_ = 0.0;
    double segment_end_ = 0.0;
    double stop_end_ = -1.0;
    double base_pedal_ = 0.0;
    double noise_ = 0.0;
};

// ---------------------------------------------------------------------------
// Plant simulator: plant + driver + emitter, advanced in 1 ms ticks.
// ---------------------------------------------------------------------------

inline constexpr std::int64_t kTickUs = 1000;
/// Default start of synthetic bus time (2023-11-14T22:13:20Z).
inline constexpr Timestamp kDefaultStart{1700000000LL * 1000000LL};

class PlantSimulator {
public:
    PlantSimulator(DriverProfile profile, std::uint64_t seed, Timestamp start = kDefaultStart, PlantParams params = {},
                   Script script = {}, std::string channel = "can0")
        : driver_(std::move(profile), seed), params_(params), script_(std::move(script)), start_(start),
          channel_(std::move(channel)) {
        state_.clock = start;
        state_.rpm = state_.gauge_rpm = params_.idle_rpm;
        const auto& map = synthetic_id_map();
        for (std::size_t i = 0; i < map.size(); ++i) {
            // Stagger IDs inside the tick so timestamps are distinct.
            offsets_.push_back({static_cast<std::int64_t>(i % static_cast<std::size_t>(map[i].period_ms)),
                                static_cast<std::int64_t>(i) * 37});
        }
    }

    /// Advances to `now` (a multiple of the tick after start) given frames
    /// other nodes put on the bus since the previous tick; returns the frames
    /// the vehicle emits during this tick.
    std::vector<CanFrame> tick(Timestamp now, std::span<const CanFrame> observed = {}) {
        std::vector<CanFrame> out;
        if (now < state_.clock) return out;
        if (now > state_.clock) {
            const double dt = (now - state_.clock) * 1e-6;
            const double t = (state_.clock - start_) * 1e-6;
            apply_script(t);
            PlantInput in = driver_.step(t, dt, state_.speed);
            if (pedal_override_) in.pedal = *pedal_override_;
            if (brake_override_) in.brake = *brake_override_;
            state_ = plant_step(std::move(state_), in, observed, dt, params_);
            if (state_.accel_disabled) assert_monotone();
        } else if (!observed.empty()) {
            for (const auto& f : observed)
                if (is_disable_frame(f)) state_.recent_disable.push_back(f.timestamp), state_.gauge_rpm = 0.0;
        }
        last_speed_ = state_.speed;
        emit(now, out);
        return out;
    }

    void set_profile(DriverProfile p) { driver_.set_profile(std::move(p)); }
    const DriverProfile& profile() const { return driver_.profile(); }
    const PlantState& state() const { return state_; }
    const PlantParams& params() const { return params_; }
    Timestamp start() const { return start_; }
    /// True while a scripted "inject" command is active.
    bool script_injection() const { return script_inject_; }

    void set_pedal_override(std::optional<double> v) { pedal_override_ = v; }
    void set_brake_override(std::optional<double> v) { brake_override_ = v; }

private:
    void apply_script(double t) {
        while (next_cmd_ < script_.commands.size() && script_.commands[next_cmd_].time <= t) {
            const auto& c = script_.commands[next_cmd_++];
            if (c.action == "pedal") pedal_override_ = c.value;
            if (c.action == "brake") brake_override_ = c.value;
            if (c.action == "inject") script_inject_ = c.value.value_or(0.0) > 0.5;
        }
    }

    void assert_monotone() {
        if (state_.speed > last_speed_ + 1e-12)
            throw std::logic_error("plant gained speed while acceleration was disabled");
    }

    void emit(Timestamp now, std::vector<CanFrame>& out) {
        const auto& map = synthetic_id_map();
        const std::int64_t tick_index = (now - start_) / kTickUs;
        for (std::size_t i = 0; i < map.size(); ++i) {
            const auto& s = map[i];
            if ((tick_index - offsets_[i].first) % s.period_ms != 0 || tick_index < offsets_[i].first) continue;
            CanFrame f;
            f.timestamp = now + offsets_[i].second;
            f.channel = channel_;
            f.arb_id = s.id;
            switch (s.signal) {
                case Signal::powertrain: {
                    auto raw = static_cast<std::uint16_t>(std::clamp(state_.rpm * 4.0, 0.0, 65535.0));
                    auto ped = static_cast<std::uint8_t>(std::lround(state_.accelerator * 255.0));
                    f.set_data(std::vector<std::uint8_t>{0x80, ped, static_cast<std::uint8_t>(raw >> 8),
                                                         static_cast<std::uint8_t>(raw & 0xFF), 0x24, 0, 0, 0});
                    state_.gauge_rpm = state_.rpm;
                    break;
                }
                case Signal::speed: {
                    auto raw = static_cast<std::uint16_t>(std::clamp(state_.speed * 100.0, 0.0, 65535.0));
                    f.set_data(std::vector<std::uint8_t>{static_cast<std::uint8_t>(raw >> 8),
                                                         static_cast<std::uint8_t>(raw & 0xFF), 0, 0});
                    break;
                }
                case Signal::accelerator: {
                    auto ped = static_cast<std::uint8_t>(std::lround(state_.accelerator * 255.0));
                    f.set_data(std::vector<std::uint8_t>{0, 0, ped, 0x40, 0, 0, 0x24, 0});
                    break;
                }
                case Signal::brake: {
                    auto b = static_cast<std::uint8_t>(std::lround(state_.brake * 255.0));
                    f.set_data(std::vector<std::uint8_t>{b, 0x07, 0x00, 0x40});
                    break;
                }
                case Signal::constant: f.set_data(s.constant); break;
            }
            out.push_back(std::move(f));
        }
    }

    DriverModel driver_;
    PlantParams params_;
    Script script_;
    std::size_t next_cmd_ = 0;
    Timestamp start_;
    std::string channel_;
    PlantState state_;
    double last_speed_ = 0.0;
    std::vector<std::pair<std::int64_t, std::int64_t>> offsets_;  // (tick offset, sub-tick us)
    std::optional<double> pedal_override_, brake_override_;
    bool script_inject_ = false;
};

struct GenerateOptions {
    Timestamp start = kDefaultStart;
    PlantParams params;
    Script script;
    std::string channel = "can0";
};

/// Synthetic trace for one driver; identical (profile, seed, duration, script) give identical traces.
inline Trace generate_traffic(const DriverProfile& profile, double duration_s, std::uint64_t seed,
                              const GenerateOptions& opt = {}) {
    if (!(duration_s > 0)) throw UsageError("traffic duration must be > 0");
    Trace t;
    t.meta.driver_label = profile.driver_label;
    t.meta.vehicle = "synthetic";
    t.meta.device = Device::synthetic;
    t.meta.route_type = RouteType::daily;
    t.meta.source_path = "synthetic:" + profile.name + ":seed" + std::to_string(seed);
    PlantSimulator plant(profile, seed, opt.start, opt.params, opt.script, opt.channel);
    const auto ticks = static_cast<std::int64_t>(std::llround(duration_s * 1e6)) / kTickUs;
    t.frames.reserve(static_cast<std::size_t>(static_cast<double>(ticks) * synthetic_nominal_rate() / 1000.0) + 64);
    std::vector<CanFrame> injected;
    for (std::int64_t k = 0; k < ticks; ++k) {
        Timestamp now = opt.start + k * kTickUs;
        injected.clear();
        if (plant.script_injection()) injected.push_back(disable_frame(now, opt.channel));
        auto frames = plant.tick(now, injected);
        t.frames.insert(t.frames.end(), injected.begin(), injected.end());
        t.frames.insert(t.frames.end(), frames.begin(), frames.end());
    }
    finalize_trace(t);
    return t;
}

// ---------------------------------------------------------------------------
// Co-simulation on a virtual bus
// ---------------------------------------------------------------------------

class Participant {
public:
    virtual ~Participant() = default;
    /// Called once per bus tick, in registration order.
    virtual void tick(Timestamp now) = 0;
};

/// Plant as a live bus node: consumes injections, emits per the ID map.
class PlantNode : public Participant {
public:
    PlantNode(VirtualBus& bus, DriverProfile profile, std::uint64_t seed, Timestamp start = kDefaultStart,
              std::string node_id = "vehicle", PlantParams params = {}, Script script = {})
        : bus_(bus), node_(bus.attach(node_id)), plant_(std::move(profile), seed, start, params, std::move(script)) {}

    void tick(Timestamp now) override {
        std::vector<CanFrame> observed;
        for (auto& d : node_->poll())
            if (d.source != node_->id()) observed.push_back(std::move(d.frame));
        for (const auto& f : plant_.tick(now, observed)) bus_.publish(f, node_->id());
        speed_trace_.emplace_back(now, plant_.state().speed);
    }

    PlantSimulator& plant() { return plant_; }
    const std::vector<std::pair<Timestamp, double>>& speed_trace() const { return speed_trace_; }

private:
    VirtualBus& bus_;
    std::shared_ptr<BusNode> node_;
    PlantSimulator plant_;
    std::vector<std::pair<Timestamp, double>> speed_trace_;
};

/// Replays a recorded trace onto the bus in step with the tick clock.
class TraceSourceNode : public Participant {
public:
    TraceSourceNode(VirtualBus& bus, const Trace& trace) : bus_(bus), trace_(trace) {}
    void tick(Timestamp now) override {
        while (next_ < trace_.frames.size() && trace_.frames[next_].timestamp <= now + (kTickUs - 1))
            bus_.publish(trace_.frames[next_++], VirtualBus::kReplaySource);
    }
    bool done() const { return next_ >= trace_.frames.size(); }

private:
    VirtualBus& bus_;
    const Trace& trace_;
    std::size_t next_ = 0;
};

/// Repeats one frame at a fixed period while active (the cansend loop).
class InjectorNode : public Participant {
public:
    InjectorNode(VirtualBus& bus, CanFrame payload, double period_s, std::string node_id = "injector")
        : node_(bus.attach(node_id)), payload_(std::move(payload)),
          period_us_(static_cast<std::int64_t>(std::llround(period_s * 1e6))) {
        if (period_us_ <= 0) throw UsageError("injection period must be > 0");
    }
    void set_active(bool on) { active_ = on; }
    void tick(Timestamp now) override {
        node_->poll();
        if (!active_) {
            next_.reset();
            return;
        }
        if (!next_) next_ = now;
        while (*next_ <= now) {
            node_->inject(payload_);
            ++sent_;
            *next_ = *next_ + period_us_;
        }
    }
    std::uint64_t sent() const { return sent_; }

private:
    std::shared_ptr<BusNode> node_;
    CanFrame payload_;
    std::int64_t period_us_;
    bool active_ = false;
    std::optional<Timestamp> next_;
    std::uint64_t sent_ = 0;
};

/// Advances bus time in fixed ticks and lets each participant act. With an
/// instant clock the run is fully deterministic; realtime/scaled clocks pace
/// ticks against the wall clock.
class CoSimulation {
public:
    CoSimulation(VirtualBus& bus, Timestamp start, BusClock pacing = BusClock::instant())
        : bus_(bus), now_(start), start_(start), pacing_(pacing) {
        pacing_.validate();
        bus_.set_time(start);
    }

    void add(Participant& p) { parts_.push_back(&p); }

    /// Runs ticks up to and including `end`. `before_tick` may script events.
    void run_until(Timestamp end, const std::function<void(Timestamp)>& before_tick = {}) {
        using clk = std::chrono::steady_clock;
        if (!wall0_) wall0_ = clk::now();
        while (now_ <= end) {
            if (pacing_.mode != BusClock::Mode::instant) {
                auto due = *wall0_ + std::chrono::duration_cast<clk::duration>(
                                         std::chrono::duration<double>((now_ - start_) * 1e-6 * pacing_.wall_factor()));
                VirtualBus::sleep_until_precise(due);
            }
            bus_.set_time(now_);
            if (before_tick) before_tick(now_);
            for (auto* p : parts_) p->tick(now_);
            now_ = now_ + kTickUs;
            if (stop_requested_) break;
        }
    }

    void request_stop() { stop_requested_ = true; }
    Timestamp now() const { return now_; }

private:
    VirtualBus& bus_;
    Timestamp now_, start_;
    BusClock pacing_;
    std::vector<Participant*> parts_;
    std::optional<std::chrono::steady_clock::time_point> wall0_;
    bool stop_requested_ = false;
};

}  // namespace canid::sim
