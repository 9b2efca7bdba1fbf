#pragma once

// End-to-end runs on a virtual bus: plant or recorded trace as the traffic
// source, the guard, scheduled operator inputs and an optional driver swap.
// Used by the CLI guard/demo commands and by the acceptance suite.

#include "guard.hpp"

namespace canid::scenario {

struct ScheduledInput {
    double at = 0.0;  // seconds after start
    guard::GuardInputs input;
};

struct SimSource {
    sim::DriverProfile driver = sim::calm_profile();
    /// Second driver takes over at swap_at (seconds after start).
    std::optional<sim::DriverProfile> swap_to;
    double swap_at = 0.0;
    sim::Script script;
    sim::PlantParams params;
};

struct ScenarioConfig {
    guard::GuardConfig guard;
    std::variant<SimSource, const Trace*> source = SimSource{};
    double duration = 300.0;
    std::uint64_t seed = 1;
    Timestamp start = sim::kDefaultStart;
    BusClock pacing = BusClock::instant();
    std::vector<ScheduledInput> inputs;
    /// Called once per tick after all participants (e.g. to check a stop condition).
    std::function<bool(Timestamp, const guard::GuardNode&)> stop_when;
};

struct ScenarioResult {
    std::vector<guard::ApiEvent> events;
    /// Every frame the guard put on the bus.
    std::vector<CanFrame> injected;
    /// (bus time, speed mph) per tick, sim source only.
    std::vector<std::pair<Timestamp, double>> speed;
    std::vector<std::pair<Timestamp, bool>> latched;
    /// The plant latched above its validated speed; the coast-down is extrapolated.
    bool extrapolated = false;
    guard::Phase final_phase = guard::Phase::pending;
    Timestamp end;
    std::uint64_t frames_on_bus = 0;
};

/// Runs a scenario; `log` and `commands` may be shared with a live service.
inline ScenarioResult run_scenario(const AuthModel* model, const ScenarioConfig& cfg, guard::EventLog& log,
                                   guard::CommandQueue& commands) {
    if (!(cfg.duration > 0)) throw UsageError("scenario duration must be > 0");
    VirtualBus bus;
    const Timestamp start = cfg.source.index() == 1 && !std::get<1>(cfg.source)->empty()
                                ? std::get<1>(cfg.source)->frames.front().timestamp
                                : cfg.start;
    guard::GuardNode g(bus, model, cfg.guard, log, &commands, start);
    auto tap = bus.attach("audit");

    std::optional<sim::PlantNode> plant;
    std::optional<sim::TraceSourceNode> replay;
    const SimSource* simsrc = std::get_if<SimSource>(&cfg.source);
    if (simsrc) {
        plant.emplace(bus, simsrc->driver, cfg.seed, start, "vehicle", simsrc->params, simsrc->script);
    } else {
        replay.emplace(bus, *std::get<1>(cfg.source));
    }

    sim::CoSimulation cosim(bus, start, cfg.pacing);
    cosim.add(g);
    if (plant) cosim.add(*plant);
    if (replay) cosim.add(*replay);

    ScenarioResult r;
    std::size_t next_input = 0;
    auto inputs = cfg.inputs;
    std::stable_sort(inputs.begin(), inputs.end(), [](const auto& a, const auto& b) { return a.at < b.at; });
    bool swapped = false;
    const Timestamp end = start + static_cast<std::int64_t>(std::llround(cfg.duration * 1e6)) - sim::kTickUs;

    cosim.run_until(end, [&](Timestamp now) {
        const double t = (now - start) * 1e-6;
        while (next_input < inputs.size() && inputs[next_input].at <= t) commands.push(inputs[next_input++].input);
        if (simsrc && simsrc->swap_to && !swapped && t >= simsrc->swap_at) {
            plant->plant().set_profile(*simsrc->swap_to);
            swapped = true;
        }
        for (auto& d : tap->poll()) {
            ++r.frames_on_bus;
            if (d.source == "guard") r.injected.push_back(d.frame);
        }
        if (plant) {
            r.speed.emplace_back(now, plant->plant().state().speed);
            r.latched.emplace_back(now, plant->plant().state().accel_disabled);
        }
        if (cfg.stop_when && cfg.stop_when(now, g)) cosim.request_stop();
    });
    for (auto& d : tap->poll()) {
        ++r.frames_on_bus;
        if (d.source == "guard") r.injected.push_back(d.frame);
    }
    r.events = log.events();
    if (plant) r.extrapolated = plant->plant().state().extrapolated;
    r.final_phase = g.state().phase;
    r.end = cosim.now();
    return r;
}

/// Window settings used by the synthetic experiments: 60 s windows, 10 s stride.
inline FeaturePipeline synthetic_pipeline() {
    FeaturePipeline p;
    p.window = WindowSpec{60.0, 10.0, 100, true};
    p.vocab = sim::synthetic_vocabulary();
    return p;
}

/// Owner-only k-means model trained on generated owner traffic.
inline AuthModel train_owner_model(const sim::DriverProfile& owner, double minutes, std::uint64_t seed,
                                   std::size_t k = 2) {
    auto p = synthetic_pipeline();
    auto trace = sim::generate_traffic(owner, minutes * 60.0, seed);
    auto v = p.run(trace);
    TrainOptions o;
    o.kind = ModelKind::kmeans;
    o.authorized = {owner.driver_label};
    o.seed = seed;
    o.kmeans.k = k;
    o.kmeans.quantile = 0.99;
    return train_model(v, p, o);
}

}  // namespace canid::scenario
