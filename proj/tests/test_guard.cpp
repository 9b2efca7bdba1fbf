#include <gtest/gtest.h>

#include <sstream>

#include "canid/scenario.hpp"

using namespace canid;
using namespace canid::guard;

namespace {

const Timestamp T0 = sim::kDefaultStart;

Timestamp at(double s) { return T0 + static_cast<std::int64_t>(std::llround(s * 1e6)); }

AuthDecision verdict(Verdict v, double score = 1.0) {
    AuthDecision d;
    d.verdict = v;
    d.score = score;
    return d;
}

GuardConfig quick_config() {
    GuardConfig c;
    c.initial_window = 0;
    c.grace_period = 10;
    c.smoothing = 1;
    return c;
}

bool has(const std::vector<GuardEvent>& ev, EventKind k) {
    return std::any_of(ev.begin(), ev.end(), [&](const GuardEvent& e) { return e.kind == k; });
}

StepResult step(GuardState s, double t, std::optional<Verdict> v, const GuardConfig& c,
                std::optional<std::string> code = {}) {
    std::optional<AuthDecision> d;
    if (v) d = verdict(*v);
    return guard_step(std::move(s), at(t), d, GuardInputs{std::move(code), std::nullopt}, c);
}

}  // namespace

TEST(Led, TotalMappingOfFourPhases) {
    EXPECT_EQ(led_for(Phase::pending), Led::yellow);
    EXPECT_EQ(led_for(Phase::authenticated), Led::green);
    EXPECT_EQ(led_for(Phase::warning), Led::flashing_red);
    EXPECT_EQ(led_for(Phase::disabled), Led::solid_red);
}

TEST(GuardStep, PendingPassBecomesAuthenticated) {
    auto c = quick_config();
    auto r = step(initial_state(c, T0), 1, Verdict::authorized, c);
    EXPECT_EQ(r.state.phase, Phase::authenticated);
    EXPECT_EQ(r.state.led(), Led::green);
    EXPECT_TRUE(has(r.events, EventKind::decision));
    EXPECT_TRUE(has(r.events, EventKind::phase_change));
}

TEST(GuardStep, PendingFailWaitsForInitialWindow) {
    auto c = quick_config();
    c.initial_window = 60;
    auto r = step(initial_state(c, T0), 30, Verdict::unauthorized, c);
    EXPECT_EQ(r.state.phase, Phase::pending);
    r = step(r.state, 60, Verdict::unauthorized, c);
    EXPECT_EQ(r.state.phase, Phase::warning);
    EXPECT_TRUE(has(r.events, EventKind::warning_issued));
    ASSERT_TRUE(r.state.grace_deadline);
    EXPECT_EQ(*r.state.grace_deadline, at(70));
}

TEST(GuardStep, SmoothingNeedsMajorityOfN) {
    auto c = quick_config();
    c.smoothing = 5;
    auto s = initial_state(c, T0);
    for (int i = 0; i < 4; ++i) {
        s = step(s, i, Verdict::authorized, c).state;
        EXPECT_EQ(s.phase, Phase::pending);
    }
    s = step(s, 4, Verdict::unauthorized, c).state;
    EXPECT_EQ(s.phase, Phase::authenticated);
    // two failures out of five do not demote
    s = step(s, 5, Verdict::unauthorized, c).state;
    EXPECT_EQ(s.phase, Phase::authenticated);
    s = step(s, 6, Verdict::unauthorized, c).state;
    EXPECT_EQ(s.phase, Phase::warning);
}

TEST(GuardStep, WarningRecoversOrDisablesAtDeadline) {
    auto c = quick_config();
    auto s = step(initial_state(c, T0), 1, Verdict::unauthorized, c).state;
    ASSERT_EQ(s.phase, Phase::warning);
    auto rec = step(s, 5, Verdict::authorized, c);
    EXPECT_EQ(rec.state.phase, Phase::authenticated);
    EXPECT_FALSE(rec.state.grace_deadline);

    auto before = step(s, 10.999, std::nullopt, c);
    EXPECT_EQ(before.state.phase, Phase::warning);
    auto r = step(before.state, 11, std::nullopt, c);
    EXPECT_EQ(r.state.phase, Phase::disabled);
    EXPECT_EQ(r.state.led(), Led::solid_red);
    EXPECT_TRUE(has(r.events, EventKind::injection_started));
    EXPECT_FALSE(r.state.grace_deadline);
}

TEST(GuardStep, DeadlineNeverExtendedByMoreFailures) {
    auto c = quick_config();
    auto s = step(initial_state(c, T0), 1, Verdict::unauthorized, c).state;
    auto deadline = *s.grace_deadline;
    for (double t = 2; t < 11; t += 0.5) {
        s = step(s, t, Verdict::unauthorized, c).state;
        ASSERT_EQ(*s.grace_deadline, deadline);
    }
    s = step(s, 11, Verdict::unauthorized, c).state;
    EXPECT_EQ(s.phase, Phase::disabled);
}

TEST(GuardStep, DisabledIgnoresDecisionsButAcceptsOverride) {
    auto c = quick_config();
    auto s = step(initial_state(c, T0), 1, Verdict::unauthorized, c).state;
    s = step(s, 11, std::nullopt, c).state;
    ASSERT_EQ(s.phase, Phase::disabled);
    s = step(s, 12, Verdict::authorized, c).state;
    EXPECT_EQ(s.phase, Phase::disabled);
    auto grant = issue_override(c.override_key, 3600, at(12));
    auto r = step(s, 13, std::nullopt, c, grant.code);
    EXPECT_EQ(r.state.phase, Phase::authenticated);
    EXPECT_TRUE(has(r.events, EventKind::override_accepted));
    EXPECT_TRUE(has(r.events, EventKind::injection_stopped));
}

TEST(GuardStep, InvalidOverrideChangesNothing) {
    auto c = quick_config();
    auto s = step(initial_state(c, T0), 1, Verdict::unauthorized, c).state;
    for (const char* bad : {"12345678", "1234", "abcdefgh", ""}) {
        auto r = step(s, 2, std::nullopt, c, std::string(bad));
        EXPECT_EQ(r.state.phase, Phase::warning);
        EXPECT_EQ(r.state.grace_deadline, s.grace_deadline);
        ASSERT_EQ(r.events.size(), 1u);
        EXPECT_EQ(r.events[0].kind, EventKind::override_rejected);
    }
}

TEST(GuardStep, OverrideIsSingleUseAndSuppressesDemotion) {
    auto c = quick_config();
    auto grant = issue_override(c.override_key, 3600, T0);
    auto s = step(initial_state(c, T0), 1, Verdict::unauthorized, c).state;
    s = step(s, 2, std::nullopt, c, grant.code).state;
    ASSERT_EQ(s.phase, Phase::authenticated);
    s = step(s, 3, Verdict::unauthorized, c).state;
    EXPECT_EQ(s.phase, Phase::authenticated);  // override active
    auto r = step(s, 4, std::nullopt, c, grant.code);
    EXPECT_TRUE(has(r.events, EventKind::override_rejected));
}

TEST(GuardStep, SimulatedVerdictsReplaceModel) {
    auto c = quick_config();
    c.smoothing = 5;
    c.simulated_verdicts = true;
    auto s = initial_state(c, T0);
    s = step(s, 1, Verdict::unauthorized, c).state;  // model decision ignored
    EXPECT_EQ(s.phase, Phase::pending);
    auto r = guard_step(s, at(2), std::nullopt, GuardInputs{std::nullopt, Verdict::authorized}, c);
    EXPECT_EQ(r.state.phase, Phase::authenticated);
    r = guard_step(r.state, at(3), std::nullopt, GuardInputs{std::nullopt, Verdict::unauthorized}, c);
    EXPECT_EQ(r.state.phase, Phase::warning);
}

TEST(GuardStep, RejectsTimeGoingBackward) {
    auto c = quick_config();
    auto s = step(initial_state(c, T0), 5, std::nullopt, c).state;
    EXPECT_THROW(step(s, 4, std::nullopt, c), UsageError);
}

// Random input sequences: structural invariants hold after every step.
TEST(GuardStep, RandomSequencesKeepInvariants) {
    Rng rng(99);
    for (int trial = 0; trial < 200; ++trial) {
        auto c = quick_config();
        c.smoothing = 1 + rng.index(5);
        c.initial_window = rng.uniform(0, 5);
        c.grace_period = rng.uniform(0.5, 5);
        auto s = initial_state(c, T0);
        double t = 0;
        std::optional<Timestamp> deadline;
        for (int i = 0; i < 80; ++i) {
            t += rng.uniform(0, 1);
            std::optional<Verdict> v;
            double u = rng.uniform();
            if (u < 0.4) v = Verdict::authorized;
            else if (u < 0.8) v = Verdict::unauthorized;
            std::optional<std::string> code;
            bool valid = false;
            if (rng.uniform() < 0.05) {
                valid = rng.uniform() < 0.5;
                code = valid ? issue_override(c.override_key, 60, at(t)).code : std::string("00000000");
            }
            Phase before = s.phase;
            auto r = step(s, t, v, c, code);
            const auto& n = r.state;
            ASSERT_EQ(n.grace_deadline.has_value(), n.phase == Phase::warning);
            if (before == Phase::warning && n.phase == Phase::warning) {
                ASSERT_EQ(n.grace_deadline, deadline);
            }
            if (valid) {
                ASSERT_EQ(n.phase, Phase::authenticated);
            }
            std::size_t changes = std::count_if(r.events.begin(), r.events.end(),
                                                [](const GuardEvent& e) { return e.kind == EventKind::phase_change; });
            ASSERT_EQ(changes > 0, before != n.phase);
            if (before != Phase::disabled && n.phase == Phase::disabled) {
                ASSERT_TRUE(has(r.events, EventKind::injection_started));
            }
            if (before == Phase::disabled && n.phase != Phase::disabled) {
                ASSERT_TRUE(has(r.events, EventKind::injection_stopped));
            }
            for (const auto& e : r.events) ASSERT_EQ(e.time, at(t));
            deadline = n.grace_deadline;
            s = n;
        }
    }
}

TEST(Override, IssueVerifyAndExpiry) {
    OverrideKey key{parse_secret("hex:00112233445566778899AABBCCDDEEFF"), "car-7"};
    auto g = issue_override(key, 90 * 60, T0);
    EXPECT_EQ(g.code.size(), 8u);
    EXPECT_TRUE(well_formed_code(g.code));
    EXPECT_GE(g.expiry, at(90 * 60));
    EXPECT_EQ(g.expiry.us % 3600000000LL, 0);
    EXPECT_EQ(g.issuer, key_id(key.secret));
    auto ok = verify_override(key, g.code, at(60));
    ASSERT_TRUE(ok);
    EXPECT_EQ(ok->expiry, g.expiry);
    EXPECT_FALSE(verify_override(key, g.code, g.expiry));
    EXPECT_FALSE(verify_override(key, g.code, g.expiry + 1));
    OverrideKey other = key;
    other.vehicle_id = "car-8";
    EXPECT_FALSE(verify_override(other, g.code, at(60)));
    other = key;
    other.secret[0] ^= 1;
    EXPECT_FALSE(verify_override(other, g.code, at(60)));
    EXPECT_THROW(issue_override(key, 0, T0), UsageError);
}

// Every single-digit alteration of a fixed grant is rejected.
TEST(Override, ExhaustiveDigitFlips) {
    OverrideKey key{parse_secret("fixture-owner-key"), "fixture-car"};
    for (int h = 1; h <= 8; ++h) {
        auto g = issue_override(key, h * 3600.0, T0);
        ASSERT_TRUE(verify_override(key, g.code, T0));
        for (std::size_t pos = 0; pos < 8; ++pos)
            for (char d = '0'; d <= '9'; ++d) {
                if (d == g.code[pos]) continue;
                auto bad = g.code;
                bad[pos] = d;
                EXPECT_FALSE(verify_override(key, bad, T0)) << g.code << " -> " << bad;
            }
    }
}

TEST(Restriction, ReportsOnlyAboveCap) {
    GuardState s;
    EXPECT_FALSE(check_restriction(s, 50, std::nullopt, T0));
    EXPECT_FALSE(check_restriction(s, 45, RestrictionPolicy{45}, T0));
    auto e = check_restriction(s, 50, RestrictionPolicy{45}, T0);
    ASSERT_TRUE(e);
    EXPECT_EQ(e->kind, EventKind::restriction_violation);
    EXPECT_EQ(e->score, 50.0);
}

TEST(EventLogTest, SequenceSinkAndWait) {
    std::ostringstream out;
    EventLog log;
    log.set_sink(&out);
    Snapshot snap;
    log.append(GuardEvent{at(1), 0, EventKind::decision, "x", 0.5, Phase::pending}, snap);
    log.append(GuardEvent{at(2), 0, EventKind::phase_change, "y", {}, Phase::authenticated}, snap);
    EXPECT_THROW(log.append(GuardEvent{at(1), 0, EventKind::decision, "z", {}, Phase::pending}, snap), std::logic_error);
    auto lines = std::istringstream(out.str());
    std::string l;
    int n = 0;
    while (std::getline(lines, l)) {
        auto j = nlohmann::json::parse(l);
        EXPECT_EQ(j["seq"], ++n);
        EXPECT_TRUE(j.contains("state"));
    }
    EXPECT_EQ(n, 2);
    EXPECT_TRUE(log.wait_next(1, std::chrono::milliseconds(1)));
    EXPECT_FALSE(log.wait_next(2, std::chrono::milliseconds(5)));
}

namespace {

scenario::ScenarioConfig joystick_run(double grace) {
    scenario::ScenarioConfig sc;
    sc.guard = quick_config();
    sc.guard.simulated_verdicts = true;
    sc.guard.grace_period = grace;
    sc.duration = 30;
    auto& src = std::get<scenario::SimSource>(sc.source);
    std::istringstream script("0 pedal 0.8\n8 pedal 0\n9 pedal 1\n");
    src.script = sim::Script::parse(script);
    return sc;
}

}  // namespace

TEST(GuardNodeRun, InjectionOnlyWhileDisabledAtOneMillisecond) {
    auto sc = joystick_run(2);
    sc.inputs.push_back({1, GuardInputs{std::nullopt, Verdict::authorized}});
    sc.inputs.push_back({5, GuardInputs{std::nullopt, Verdict::unauthorized}});  // warning at 5, disabled at 7
    EventLog log;
    CommandQueue q;
    sc.inputs.push_back({20, GuardInputs{issue_override(sc.guard.override_key, 3600, sc.start).code, std::nullopt}});
    auto r = scenario::run_scenario(nullptr, sc, log, q);
    ASSERT_FALSE(r.injected.empty());
    for (const auto& f : r.injected) ASSERT_EQ(format_id_data(f), "0C9#0000000000001800");
    EXPECT_EQ(r.injected.front().timestamp, at(7));
    EXPECT_EQ(r.injected.back().timestamp, at(19.999));
    EXPECT_EQ(r.injected.size(), 13000u);
    for (std::size_t i = 1; i < r.injected.size(); ++i)
        ASSERT_EQ(r.injected[i].timestamp - r.injected[i - 1].timestamp, 1000);
    EXPECT_EQ(r.final_phase, Phase::authenticated);

    std::vector<Phase> phases;
    for (const auto& e : r.events)
        if (e.event.kind == EventKind::phase_change) phases.push_back(e.event.phase);
    EXPECT_EQ(phases, (std::vector<Phase>{Phase::authenticated, Phase::warning, Phase::disabled, Phase::authenticated}));

    // plant latched at the 8 s pedal release and did not gain speed while injected
    double at_release = -1, last = 1e9;
    for (std::size_t i = 0; i < r.speed.size(); ++i) {
        double t = (r.speed[i].first - sc.start) * 1e-6;
        if (t >= 8.01 && t < 20) {
            ASSERT_TRUE(r.latched[i].second) << t;
            if (at_release < 0) at_release = r.speed[i].second;
            ASSERT_LE(r.speed[i].second, last);
            last = r.speed[i].second;
        }
    }
    EXPECT_GT(at_release, 10.0);
}

TEST(GuardNodeRun, OverrideDuringWarningMeansNoInjection) {
    auto sc = joystick_run(5);
    sc.inputs.push_back({1, GuardInputs{std::nullopt, Verdict::unauthorized}});
    sc.inputs.push_back({3, GuardInputs{issue_override(sc.guard.override_key, 3600, sc.start).code, std::nullopt}});
    EventLog log;
    CommandQueue q;
    auto r = scenario::run_scenario(nullptr, sc, log, q);
    EXPECT_TRUE(r.injected.empty());
    EXPECT_EQ(r.final_phase, Phase::authenticated);
}

TEST(GuardNodeRun, PedalNeverReleasedKeepsAccelerating) {
    auto sc = joystick_run(1);
    auto& src = std::get<scenario::SimSource>(sc.source);
    std::istringstream script("0 pedal 0.6\n");
    src.script = sim::Script::parse(script);
    sc.inputs.push_back({1, GuardInputs{std::nullopt, Verdict::unauthorized}});
    EventLog log;
    CommandQueue q;
    auto r = scenario::run_scenario(nullptr, sc, log, q);
    EXPECT_FALSE(r.injected.empty());
    double at3 = 0, at25 = 0;
    for (const auto& [ts, v] : r.speed) {
        if (ts == at(3)) at3 = v;
        if (ts == at(25)) at25 = v;
    }
    EXPECT_GT(at25, at3 + 5.0);
    for (const auto& [_, l] : r.latched) ASSERT_FALSE(l);
}

TEST(GuardNodeRun, RestrictionViolationsCarrySpeedAndTime) {
    auto sc = joystick_run(5);
    sc.guard.restriction = RestrictionPolicy{45};
    auto& src = std::get<scenario::SimSource>(sc.source);
    std::istringstream script("0 pedal 1\n0 brake 0\n");
    src.script = sim::Script::parse(script);
    sc.duration = 20;
    EventLog log;
    CommandQueue q;
    auto r = scenario::run_scenario(nullptr, sc, log, q);
    std::size_t n = 0;
    for (const auto& e : r.events) {
        if (e.event.kind != EventKind::restriction_violation) continue;
        ++n;
        EXPECT_GT(*e.event.score, 45.0);
        // the reported speed is what the plant was doing just before
        auto it = std::find_if(r.speed.begin(), r.speed.end(), [&](const auto& p) { return p.first == e.event.time; });
        ASSERT_NE(it, r.speed.end());
        EXPECT_NEAR(*e.event.score, it->second, 1.0);
    }
    EXPECT_GE(n, 10u);
}

TEST(GuardNodeRun, SchemaMismatchAbortsBeforeAttach) {
    auto model = scenario::train_owner_model(sim::calm_profile(), 3, 1);
    model.pipeline.vocab.pop_back();  // pipeline no longer produces the model's schema
    VirtualBus bus;
    EventLog log;
    EXPECT_THROW(GuardNode(bus, &model, quick_config(), log, nullptr, T0), ModelError);
    EXPECT_NO_THROW(bus.attach("guard"));
}

namespace {

const AuthModel& owner_model() {
    static const AuthModel m = scenario::train_owner_model(sim::calm_profile(), 10, 11);
    return m;
}

}  // namespace

TEST(GuardModelRun, OwnerStaysAuthenticatedForFiveMinutes) {
    scenario::ScenarioConfig sc;
    sc.guard.grace_period = 10;
    sc.seed = 404;
    std::get<scenario::SimSource>(sc.source).driver = sim::calm_profile();
    EventLog log;
    CommandQueue q;
    auto r = scenario::run_scenario(&owner_model(), sc, log, q);
    EXPECT_EQ(r.final_phase, Phase::authenticated);
    EXPECT_TRUE(r.injected.empty());
    for (const auto& e : r.events) EXPECT_NE(e.event.kind, EventKind::warning_issued);
}

TEST(GuardModelRun, ThiefIsWarnedThenDisabledAndCoastsDown) {
    scenario::ScenarioConfig sc;
    sc.guard.grace_period = 10;
    sc.seed = 405;
    sc.duration = 240;
    std::get<scenario::SimSource>(sc.source).driver = sim::aggressive_profile();
    EventLog log;
    CommandQueue q;
    auto r = scenario::run_scenario(&owner_model(), sc, log, q);

    std::optional<Timestamp> warned, disabled;
    for (const auto& e : r.events) {
        if (e.event.kind == EventKind::warning_issued && !warned) warned = e.event.time;
        if (e.event.kind == EventKind::injection_started && !disabled) disabled = e.event.time;
    }
    ASSERT_TRUE(warned);
    ASSERT_TRUE(disabled);
    EXPECT_GE(*warned - sc.start, 60'000'000);
    EXPECT_EQ(*disabled - *warned, 10'000'000);
    ASSERT_FALSE(r.injected.empty());
    EXPECT_EQ(r.injected.front().timestamp, *disabled);
    for (std::size_t i = 1; i < r.injected.size(); ++i)
        ASSERT_EQ(r.injected[i].timestamp - r.injected[i - 1].timestamp, 1000);

    // once the driver lifts off, the car coasts under 1 mph within a minute from 35 mph or less
    auto latch = std::find_if(r.latched.begin(), r.latched.end(), [](const auto& p) { return p.second; });
    ASSERT_NE(latch, r.latched.end());
    std::size_t i0 = latch - r.latched.begin();
    double v0 = r.speed[i0].second;
    double bound = std::log2(std::max(v0, 1.0)) * 8.0 + 1.0;
    ASSERT_LT(i0 + static_cast<std::size_t>(bound * 1000), r.speed.size());
    EXPECT_LT(r.speed[i0 + static_cast<std::size_t>(bound * 1000)].second, 1.0);
    if (v0 <= 35.0) {
        ASSERT_LT(i0 + 60000, r.speed.size());
        EXPECT_LT(r.speed[i0 + 60000].second, 1.0);
    }
}

// Repeated fail/override cycles: frames exactly on Disabled ticks, start/stop alternate.
TEST(GuardNodeRun, InjectionIffDisabledAcrossCycles) {
    Rng rng(5);
    for (int trial = 0; trial < 5; ++trial) {
        const double grace = 1 + rng.uniform(0, 2);
        auto sc = joystick_run(grace);
        sc.duration = 40;
        // short-lived codes so an accepted override lapses before the next failure
        sc.guard.override_key.slot_s = 2;
        sc.guard.override_key.max_validity_s = 2;
        double t = 0.5;
        while (t + grace + 4 < 38) {
            sc.inputs.push_back({t, GuardInputs{std::nullopt, Verdict::unauthorized}});
            t += grace + rng.uniform(0.5, 3);
            auto code = issue_override(sc.guard.override_key, 2, at(t)).code;
            sc.inputs.push_back({t, GuardInputs{code, std::nullopt}});
            t += 4.5;
        }
        EventLog log;
        CommandQueue q;
        auto r = scenario::run_scenario(nullptr, sc, log, q);

        std::vector<std::pair<Timestamp, Timestamp>> disabled;
        bool on = false;
        for (const auto& e : r.events) {
            if (e.event.kind == EventKind::injection_started) {
                ASSERT_FALSE(on);
                on = true;
                disabled.push_back({e.event.time, r.end + 1});
            } else if (e.event.kind == EventKind::injection_stopped) {
                ASSERT_TRUE(on);
                on = false;
                disabled.back().second = e.event.time;
            }
        }
        ASSERT_GE(disabled.size(), 3u);
        EXPECT_LT(disabled.back().second, r.end);
        std::size_t expected = 0;
        for (auto [a, b] : disabled) expected += static_cast<std::size_t>((std::min(b, r.end + 1) - a + 999) / 1000);
        EXPECT_EQ(r.injected.size(), expected);
        for (const auto& f : r.injected) {
            ASSERT_EQ(format_id_data(f), "0C9#0000000000001800");
            bool inside = std::any_of(disabled.begin(), disabled.end(),
                                      [&](const auto& iv) { return f.timestamp >= iv.first && f.timestamp < iv.second; });
            ASSERT_TRUE(inside) << f.timestamp.us;
        }
    }
}
