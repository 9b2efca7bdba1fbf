#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "canid/scenario.hpp"
#include "canid/service.hpp"

using namespace canid;
namespace fs = std::filesystem;

namespace {

const char* kDatasetRootEnv = "CANID_DATASET_ROOT";

std::optional<std::string> dataset_root() {
    const char* r = std::getenv(kDatasetRootEnv);
    if (!r || !*r) return std::nullopt;
    return std::string(r);
}

/// Relative paths that do not exist here are looked up under the dataset root.
std::string resolve_input(const std::string& p) {
    if (fs::exists(p) || fs::path(p).is_absolute()) return p;
    if (auto root = dataset_root()) {
        auto q = fs::path(*root) / p;
        if (fs::exists(q)) return q.string();
    }
    return p;
}

std::string meta_sidecar(const std::string& trace_path) { return trace_path + ".meta.json"; }

nlohmann::json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read " + path);
    auto j = nlohmann::json::parse(in, nullptr, false);
    if (j.is_discarded()) throw DataError(path + ": not valid JSON");
    return j;
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path);
    out << text;
    if (!out) throw DataError("write failed: " + path);
}

void write_json_file(const std::string& path, const nlohmann::json& j) { write_text_file(path, j.dump(2) + "\n"); }

/// Labels from a sidecar if present, otherwise from the directory layout.
TraceMeta input_meta(const std::string& path) {
    if (fs::exists(meta_sidecar(path))) {
        auto m = trace_meta_from_json(read_json_file(meta_sidecar(path)));
        m.source_path = path;
        return m;
    }
    TraceMeta m;
    std::vector<std::string> comps;
    for (const auto& c : fs::path(path).parent_path()) comps.push_back(c.string());
    detail::apply_path_labels(m, comps);
    m.source_path = path;
    return m;
}

void apply_meta_overrides(TraceMeta& m, const std::vector<std::string>& kvs) {
    for (const auto& kv : kvs) {
        auto eq = kv.find('=');
        if (eq == std::string::npos) throw UsageError("--meta expects key=value, got '" + kv + "'");
        auto k = kv.substr(0, eq), v = kv.substr(eq + 1);
        if (k == "driver") {
            auto d = parse_driver_label(v);
            if (!d) throw UsageError("bad driver label '" + v + "'");
            m.driver_label = *d;
        } else if (k == "vehicle") {
            m.vehicle = v;
        } else if (k == "device") {
            auto d = parse_device(v);
            if (!d) throw UsageError("unknown device '" + v + "'");
            m.device = *d;
        } else if (k == "route") {
            auto r = parse_route_type(v);
            if (!r) throw UsageError("unknown route type '" + v + "'");
            m.route_type = *r;
        } else {
            throw UsageError("unknown --meta key '" + k + "' (driver, vehicle, device, route)");
        }
    }
    if (!m.valid()) throw UsageError("inconsistent labels: mixed routes carry no driver");
}

CsvColumns parse_csv_columns(const std::string& spec) {
    CsvColumns c;
    std::vector<std::string> parts;
    std::stringstream ss(spec);
    for (std::string p; std::getline(ss, p, ',');) parts.push_back(p);
    if (parts.size() != 4 && parts.size() != 5)
        throw UsageError("--csv-columns expects timestamp,id,dlc,data[,channel]");
    c.timestamp = parts[0];
    c.arbitration_id = parts[1];
    c.dlc = parts[2];
    c.data = parts[3];
    if (parts.size() == 5) c.channel = parts[4];
    return c;
}

std::optional<TraceFormat> format_option(const std::string& s) {
    if (s.empty()) return std::nullopt;
    auto f = parse_trace_format(s);
    if (!f) throw UsageError("--format must be log or csv");
    return f;
}

/// Expands directories into the traces found by the dataset walk.
std::vector<TraceMeta> expand_inputs(const std::vector<std::string>& paths) {
    std::vector<TraceMeta> out;
    for (const auto& raw : paths) {
        auto p = resolve_input(raw);
        if (fs::is_directory(p)) {
            auto found = scan_dataset(p);
            out.insert(out.end(), found.begin(), found.end());
        } else {
            if (!fs::exists(p)) throw DataError("no such trace: " + raw);
            out.push_back(input_meta(p));
        }
    }
    return out;
}

Trace load_input(const TraceMeta& meta, std::optional<TraceFormat> fmt, const LoadOptions& opt,
                 LoadReport* report = nullptr) {
    if (!meta.segments.empty()) return load_trace(meta, opt);
    auto f = fmt ? *fmt : format_from_extension(meta.source_path).value_or(TraceFormat::log);
    auto t = load_trace(meta.source_path, f, meta, opt);
    if (report) {
        std::ifstream in(meta.source_path);
        parse_trace_text(in, f, LoadOptions{opt.columns, 1.0, opt.default_channel, opt.max_segment_gap_s}, *report);
    }
    return t;
}

std::vector<int> parse_int_list(const std::string& s, const char* what) {
    std::vector<int> out;
    if (s.empty()) return out;
    std::stringstream ss(s);
    for (std::string p; std::getline(ss, p, ',');) {
        try {
            std::size_t used = 0;
            out.push_back(std::stoi(p, &used));
            if (used != p.size()) throw std::invalid_argument(p);
        } catch (const std::exception&) {
            throw UsageError(std::string("bad ") + what + " entry '" + p + "'");
        }
    }
    return out;
}

std::vector<std::uint32_t> parse_id_list(const std::string& s) {
    std::vector<std::uint32_t> out;
    std::stringstream ss(s);
    for (std::string p; std::getline(ss, p, ',');) {
        try {
            std::size_t used = 0;
            out.push_back(static_cast<std::uint32_t>(std::stoul(p, &used, 16)));
            if (used != p.size()) throw std::invalid_argument(p);
        } catch (const std::exception&) {
            throw UsageError("bad arbitration ID '" + p + "' in --vocab");
        }
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

std::set<std::string> parse_label_set(const std::vector<std::string>& labels) {
    std::set<std::string> out;
    for (const auto& l : labels) {
        std::stringstream ss(l);
        for (std::string p; std::getline(ss, p, ',');)
            if (!p.empty()) out.insert(p);
    }
    return out;
}

std::string fmt_opt(const std::optional<double>& v, int prec = 4) {
    if (!v) return "n/a";
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(prec);
    os << *v;
    return os.str();
}

BusClock pacing_from(bool instant, bool realtime, std::optional<double> speed, BusClock fallback) {
    if (static_cast<int>(instant) + static_cast<int>(realtime) + static_cast<int>(speed.has_value()) > 1)
        throw UsageError("choose one of --instant, --realtime, --speed");
    if (instant) return BusClock::instant();
    if (realtime) return BusClock::realtime();
    if (speed) {
        auto c = BusClock::scaled(*speed);
        c.validate();
        return c;
    }
    return fallback;
}

void print_event(std::ostream& os, const guard::ApiEvent& e, Timestamp start) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "%+10.3fs  #%-4llu %-22s %-13s %-13s", (e.event.time - start) * 1e-6,
                  static_cast<unsigned long long>(e.event.seq), to_string(e.event.kind), to_string(e.event.phase),
                  to_string(guard::led_for(e.event.phase)));
    os << buf << e.event.detail << '\n';
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

struct IngestArgs {
    std::string path;
    std::string format;
    std::vector<std::string> meta;
    std::string csv_columns;
    double max_malformed = 0.01;
    std::string out;
    std::string json;
};

int run_ingest(const IngestArgs& a) {
    std::string path = a.path;
    if (path.empty()) {
        auto root = dataset_root();
        if (!root) throw UsageError(std::string("ingest needs a path or ") + kDatasetRootEnv);
        path = *root;
    }
    LoadOptions opt;
    opt.max_malformed_fraction = a.max_malformed;
    if (!a.csv_columns.empty()) opt.columns = parse_csv_columns(a.csv_columns);
    auto fmt = format_option(a.format);
    auto metas = expand_inputs({path});
    if (!a.out.empty() && metas.size() != 1) throw UsageError("--out needs exactly one input trace");

    nlohmann::json summary = nlohmann::json::array();
    for (auto m : metas) {
        apply_meta_overrides(m, a.meta);
        LoadReport rep;
        auto t = load_input(m, fmt, opt, m.segments.empty() ? &rep : nullptr);
        auto st = compute_stats(t);
        std::cout << "ingest: " << m.source_path << '\n'
                  << "  frames " << t.size() << "  duration " << fmt_opt(st.empty ? std::nullopt : std::optional(st.duration), 6)
                  << " s  unique ids " << st.unique_ids << '\n'
                  << "  driver " << t.meta.driver_label << "  vehicle " << t.meta.vehicle << "  device "
                  << to_string(t.meta.device) << "  route " << to_string(t.meta.route_type) << '\n';
        if (m.segments.empty())
            std::cout << "  lines " << rep.lines << "  malformed " << rep.malformed.size() << '\n';
        else
            std::cout << "  segments " << m.segments.size() << '\n';
        for (std::size_t i = 0; i < rep.malformed.size() && i < 5; ++i)
            std::cout << "    " << rep.malformed[i].what() << '\n';
        auto j = to_json(t.meta);
        j["frames"] = t.size();
        j["malformed"] = rep.malformed.size();
        j["stats"] = to_json(st);
        summary.push_back(j);
        if (!a.out.empty()) {
            save_trace(a.out, t);
            write_json_file(meta_sidecar(a.out), to_json(t.meta));
            std::cout << "  wrote " << a.out << '\n';
        }
    }
    if (!a.json.empty()) write_json_file(a.json, summary);
    return 0;
}

struct StatsArgs {
    std::vector<std::string> traces;
    std::string format;
    std::string json;
};

int run_stats(const StatsArgs& a) {
    auto inputs = a.traces;
    if (inputs.empty()) {
        auto root = dataset_root();
        if (!root) throw UsageError(std::string("stats needs trace paths or ") + kDatasetRootEnv);
        inputs.push_back(*root);
    }
    auto fmt = format_option(a.format);
    nlohmann::json out = nlohmann::json::array();
    for (const auto& m : expand_inputs(inputs)) {
        auto t = load_input(m, fmt, {});
        auto st = compute_stats(t);
        print_stats_table(std::cout, m.source_path, st);
        auto j = to_json(st);
        j["trace"] = m.source_path;
        out.push_back(j);
    }
    if (!a.json.empty()) write_json_file(a.json, out);
    return 0;
}

struct FeaturesArgs {
    std::vector<std::string> traces;
    double window = 60.0;
    double stride = 10.0;
    std::size_t min_frames = 100;
    bool partial = false;
    std::string lags;
    std::size_t pca = 0;
    std::string vocab;
    std::string label;
    std::string out;
    std::string pipeline_out;
};

int run_features(const FeaturesArgs& a) {
    FeaturePipeline p;
    p.window = WindowSpec{a.window, a.stride, a.min_frames, !a.partial};
    p.window.validate();
    p.lags = parse_int_list(a.lags, "--lags");
    if (!p.lags.empty()) validate_lags(p.lags);

    std::vector<Trace> traces;
    for (auto m : expand_inputs(a.traces)) {
        if (!a.label.empty()) apply_meta_overrides(m, {"driver=" + a.label});
        traces.push_back(load_input(m, std::nullopt, {}));
    }
    if (!a.vocab.empty()) {
        p.vocab = parse_id_list(a.vocab);
    } else {
        std::set<std::uint32_t> ids;
        for (const auto& t : traces)
            for (const auto& f : t.frames) ids.insert(f.arb_id);
        p.vocab.assign(ids.begin(), ids.end());
    }
    if (p.vocab.empty()) throw DataError("no frames in the input traces");

    // lags are per trace; standardization and PCA are fitted on everything
    std::vector<FeatureVector> lagged;
    for (const auto& t : traces) {
        auto v = p.transform(extract_windows(t, p.window, p.vocab));
        lagged.insert(lagged.end(), v.begin(), v.end());
    }
    std::vector<FeatureVector> vectors = lagged;
    if (a.pca > 0) {
        if (lagged.size() < 2) throw DataError("PCA needs at least two windows");
        p.pre_pca_standardizer = fit_standardizer(lagged);
        p.pca = fit_pca(apply_standardizer(*p.pre_pca_standardizer, lagged), a.pca);
        vectors = project(*p.pca, apply_standardizer(*p.pre_pca_standardizer, lagged));
    }
    auto schema = p.output_schema();
    std::ostringstream csv;
    write_features_csv(csv, vectors, *schema);
    write_text_file(a.out, csv.str());
    auto pipe_path = a.pipeline_out.empty() ? a.out + ".pipeline.json" : a.pipeline_out;
    write_json_file(pipe_path, to_json(p));
    std::cout << "features: " << vectors.size() << " windows x " << schema->size() << " columns from "
              << traces.size() << " trace(s)\n"
              << "  window " << a.window << " s  stride " << a.stride << " s  ids " << p.vocab.size();
    if (!p.lags.empty()) std::cout << "  lags " << a.lags;
    if (p.pca) std::cout << "  pca " << a.pca << " (reconstruction mse "
                         << fmt_opt(pca_reconstruction_error(*p.pca, apply_standardizer(*p.pre_pca_standardizer, lagged)), 6) << ")";
    std::cout << "\n  wrote " << a.out << " and " << pipe_path << '\n';
    return 0;
}

std::vector<FeatureVector> read_features(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read " + path);
    return read_features_csv(in);
}

struct TrainArgs {
    std::string features;
    std::string model = "kmeans";
    std::vector<std::string> authorized;
    std::uint64_t seed = 1;
    std::size_t knn_k = 5;
    std::size_t clusters = 4;
    double quantile = 0.99;
    std::size_t epochs = 200;
    double lr = 0.01;
    std::size_t batch = 16;
    std::string hidden = "32,8";
    std::string pipeline;
    std::string out;
};

int run_train(const TrainArgs& a) {
    auto kind = parse_model_kind(a.model);
    if (!kind) throw UsageError("--model must be knn, kmeans or autoencoder");
    auto vectors = read_features(a.features);
    auto pipeline = pipeline_from_json(read_json_file(a.pipeline.empty() ? a.features + ".pipeline.json" : a.pipeline));
    TrainOptions o;
    o.kind = *kind;
    o.authorized = parse_label_set(a.authorized);
    o.seed = a.seed;
    o.knn_k = a.knn_k;
    o.kmeans.k = a.clusters;
    o.kmeans.quantile = a.quantile;
    o.kmeans.seed = a.seed;
    o.autoencoder.epochs = a.epochs;
    o.autoencoder.learning_rate = a.lr;
    o.autoencoder.batch_size = a.batch;
    o.autoencoder.quantile = a.quantile;
    o.autoencoder.seed = a.seed;
    o.autoencoder.encoder.clear();
    for (int h : parse_int_list(a.hidden, "--hidden")) {
        if (h < 1) throw UsageError("--hidden widths must be >= 1");
        o.autoencoder.encoder.push_back(static_cast<std::size_t>(h));
    }
    if (o.kind != ModelKind::knn) {
        // one-class models learn only from the authorized drivers
        auto all = vectors.size();
        vectors = filter_labels(vectors, o.authorized);
        if (vectors.size() != all)
            std::cout << "# using " << vectors.size() << " of " << all << " windows (authorized labels only)\n";
    }
    std::cout << "# train model=" << a.model << " seed=" << a.seed << " windows=" << vectors.size() << " authorized=";
    for (const auto& l : o.authorized) std::cout << l << (l == *o.authorized.rbegin() ? "" : ",");
    std::cout << '\n';
    auto m = train_model(vectors, pipeline, o);
    save_model(a.out, m);
    if (auto* km = std::get_if<KmeansAuthenticator>(&m.model))
        std::cout << "  k " << km->centroids.size() << "  threshold " << fmt_opt(km->threshold, 6) << " (quantile "
                  << km->quantile << ")\n";
    if (auto* ae = std::get_if<AutoencoderModel>(&m.model))
        std::cout << "  epochs " << ae->loss_history.size() << "  final loss "
                  << fmt_opt(ae->loss_history.empty() ? std::nullopt : std::optional(ae->loss_history.back()), 6)
                  << "  threshold " << fmt_opt(ae->threshold, 6) << '\n';
    std::cout << "  wrote " << a.out << '\n';
    return 0;
}

struct EvalArgs {
    std::string model;
    std::string features;
    std::string json;
};

int run_eval(const EvalArgs& a) {
    auto m = load_model(a.model);
    auto vectors = read_features(a.features);
    if (!vectors.empty()) check_model_schema(m, *vectors.front().schema);
    auto metrics = evaluate(decide_all(m, vectors));
    std::cout << "eval: " << a.model << " on " << a.features << " (" << metrics.total << " windows)\n"
              << "  accuracy  " << fmt_opt(metrics.accuracy) << '\n'
              << "  precision " << fmt_opt(metrics.precision) << '\n'
              << "  recall    " << fmt_opt(metrics.recall) << '\n'
              << "  f1        " << fmt_opt(metrics.f1) << '\n'
              << "  far       " << fmt_opt(metrics.far) << '\n'
              << "  frr       " << fmt_opt(metrics.frr) << '\n'
              << "  time-to-detection " << fmt_opt(metrics.mean_time_to_detection, 1) << " s ("
              << metrics.sessions_detected << "/" << metrics.unauthorized_sessions << " sessions)\n";
    if (!a.json.empty()) write_json_file(a.json, to_json(metrics));
    return 0;
}

struct GenArgs {
    std::string profile = "builtin:calm";
    double duration = 600.0;
    std::uint64_t seed = 1;
    std::string script;
    double start = 1700000000.0;
    std::string vehicle = "synthetic";
    std::string out;
};

int run_gen(const GenArgs& a) {
    auto prof = sim::load_profile(a.profile);
    sim::GenerateOptions o;
    o.start = Timestamp::from_seconds(a.start);
    if (!a.script.empty()) o.script = sim::Script::load(a.script);
    std::cout << "# gen profile=" << prof.name << " driver=" << prof.driver_label << " duration=" << a.duration
              << " seed=" << a.seed << '\n';
    auto t = sim::generate_traffic(prof, a.duration, a.seed, o);
    t.meta.vehicle = a.vehicle;
    t.meta.source_path = a.out;
    save_trace(a.out, t);
    write_json_file(meta_sidecar(a.out), to_json(t.meta));
    auto st = compute_stats(t);
    std::cout << "  frames " << t.size() << "  mean rate " << fmt_opt(st.mean_rate, 1) << " Hz\n"
              << "  wrote " << a.out << '\n';
    return 0;
}

struct ReplayArgs {
    std::string trace;
    std::optional<double> speed;
    bool instant = false;
    bool realtime = false;
    std::size_t inbox = 65536;
};

int run_replay(const ReplayArgs& a) {
    auto m = expand_inputs({a.trace});
    if (m.size() != 1) throw UsageError("replay takes one trace");
    auto t = load_input(m.front(), std::nullopt, {});
    auto clock = pacing_from(a.instant, a.realtime, a.speed, BusClock::realtime());
    VirtualBus bus(BusClock::instant(), a.inbox);
    auto listener = bus.attach("listener");
    std::atomic<bool> done{false};
    std::uint64_t consumed = 0;
    std::thread consumer([&] {
        while (!done || listener->pending() > 0)
            if (listener->wait_pop(std::chrono::milliseconds(20))) ++consumed;
    });
    ReplaySummary s;
    try {
        s = bus.replay(t, clock);
    } catch (...) {
        done = true;
        consumer.join();
        throw;
    }
    done = true;
    consumer.join();
    const char* mode = clock.mode == BusClock::Mode::instant ? "instant" : clock.mode == BusClock::Mode::realtime ? "realtime" : "scaled";
    std::cout << "replay: " << m.front().source_path << " (" << mode;
    if (clock.mode == BusClock::Mode::scaled) std::cout << " x" << clock.factor;
    std::cout << ")\n"
              << "  frames delivered " << s.delivered << "  consumed " << consumed << "  overflow "
              << s.overflow << '\n'
              << "  wall " << fmt_opt(s.wall_seconds, 3) << " s  timing error p50 " << fmt_opt(s.timing_error_p50 * 1e3, 3)
              << " ms  p95 " << fmt_opt(s.timing_error_p95 * 1e3, 3) << " ms  max "
              << fmt_opt(s.timing_error_max * 1e3, 3) << " ms\n";
    return 0;
}

struct GuardArgs {
    std::string model;
    std::string source = "sim";
    std::string trace;
    std::string profile = "builtin:calm";
    std::string swap_to;
    double swap_at = 0.0;
    std::string script;
    double grace = 300.0;
    double initial_window = 60.0;
    std::size_t smoothing = 5;
    double duration = 300.0;
    std::uint64_t seed = 1;
    bool simulated = false;
    std::string secret = "owner-secret";
    std::string vehicle_id = "vehicle";
    std::optional<double> max_speed;
    std::string serve;
    std::optional<double> speed;
    bool instant = false;
    bool realtime = false;
    double linger = 0.0;
    std::string events;
    bool stop_on_disable = false;
};

struct GuardRun {
    guard::EventLog log;
    guard::CommandQueue commands;
    std::unique_ptr<guard::GuardService> service;
    std::unique_ptr<std::ofstream> events_file;
};

void attach_outputs(GuardRun& run, const std::string& events, const std::string& serve) {
    if (events == "-") {
        run.log.set_sink(&std::cout);
    } else if (!events.empty()) {
        run.events_file = std::make_unique<std::ofstream>(events);
        if (!*run.events_file) throw DataError("cannot write " + events);
        run.log.set_sink(run.events_file.get());
    }
    if (!serve.empty()) {
        auto [host, port] = guard::parse_bind_address(serve);
        run.service = std::make_unique<guard::GuardService>(run.log, run.commands);
        int bound = run.service->start(host, port);
        std::cout << "# serving http://" << (host.find(':') != std::string::npos ? "[" + host + "]" : host) << ':'
                  << bound << " (GET /state, GET /events, POST /override, POST /simulate)" << std::endl;
    }
}

void finish_run(GuardRun& run, double linger, const scenario::ScenarioResult& r, Timestamp start, bool print_events) {
    if (print_events)
        for (const auto& e : r.events) print_event(std::cout, e, start);
    std::cout << "final phase " << to_string(r.final_phase) << " (" << to_string(guard::led_for(r.final_phase))
              << ")  injected " << r.injected.size() << " frames  bus frames " << r.frames_on_bus << "  ran "
              << fmt_opt((r.end - start) * 1e-6, 3) << " s\n";
    if (r.extrapolated)
        std::cout << "note: throttle latched above " << fmt_opt(sim::PlantParams{}.validated_speed, 0)
                  << " mph; coast-down beyond that speed is extrapolated\n";
    if (run.service) {
        if (linger > 0) std::this_thread::sleep_for(std::chrono::milliseconds(static_cast<long>(linger * 1000)));
        run.service->stop();
    }
}

int run_guard(const GuardArgs& a) {
    scenario::ScenarioConfig sc;
    sc.guard.grace_period = a.grace;
    sc.guard.initial_window = a.initial_window;
    sc.guard.smoothing = a.smoothing;
    sc.guard.simulated_verdicts = a.simulated;
    sc.guard.override_key = guard::OverrideKey{guard::parse_secret(a.secret), a.vehicle_id};
    if (a.max_speed) sc.guard.restriction = guard::RestrictionPolicy{*a.max_speed};
    sc.guard.validate();
    sc.duration = a.duration;
    sc.seed = a.seed;
    sc.pacing = pacing_from(a.instant, a.realtime, a.speed, a.serve.empty() ? BusClock::instant() : BusClock::realtime());

    std::optional<AuthModel> model;
    if (a.model != "none") model = load_model(a.model);
    else if (!a.simulated) throw UsageError("a model is required unless --simulated is given");

    Trace trace;
    if (a.source == "sim") {
        scenario::SimSource s;
        s.driver = sim::load_profile(a.profile);
        if (!a.swap_to.empty()) {
            s.swap_to = sim::load_profile(a.swap_to);
            s.swap_at = a.swap_at;
        }
        if (!a.script.empty()) s.script = sim::Script::load(a.script);
        sc.source = s;
    } else if (a.source == "trace") {
        if (a.trace.empty()) throw UsageError("--source trace needs --trace FILE");
        auto metas = expand_inputs({a.trace});
        if (metas.size() != 1) throw UsageError("--trace takes one trace");
        trace = load_input(metas.front(), std::nullopt, {});
        if (trace.empty()) throw DataError("trace is empty: " + a.trace);
        sc.source = &trace;
    } else {
        throw UsageError("--source must be trace or sim");
    }
    if (a.stop_on_disable)
        sc.stop_when = [](Timestamp, const guard::GuardNode& g) { return g.state().phase == guard::Phase::disabled; };

    std::cout << "# guard source=" << a.source << " seed=" << a.seed << " grace=" << a.grace
              << " initial_window=" << a.initial_window << " smoothing=" << a.smoothing
              << " mode=" << (a.simulated ? "simulated" : "model") << '\n';
    GuardRun run;
    attach_outputs(run, a.events, a.serve);
    auto r = scenario::run_scenario(model ? &*model : nullptr, sc, run.log, run.commands);
    const Timestamp start = a.source == "trace" ? trace.frames.front().timestamp : sc.start;
    finish_run(run, a.linger, r, start, a.events != "-");
    return 0;
}

struct DemoArgs {
    std::uint64_t seed = 7;
    double train_minutes = 10.0;
    double swap_at = 120.0;
    double grace = 10.0;
    double max_duration = 600.0;
    std::string serve;
    std::optional<double> speed;
    bool instant = false;
    bool realtime = false;
    double linger = 0.0;
    std::string events;
};

int run_demo(const DemoArgs& a) {
    auto owner = sim::calm_profile(), thief = sim::aggressive_profile();
    std::cout << "# demo seed=" << a.seed << " owner=" << owner.driver_label << " thief=" << thief.driver_label
              << " swap_at=" << a.swap_at << " grace=" << a.grace << '\n';
    auto model = scenario::train_owner_model(owner, a.train_minutes, a.seed);
    std::cout << "  owner model trained on " << a.train_minutes << " min of generated traffic\n";

    scenario::ScenarioConfig sc;
    sc.guard = guard::GuardConfig::demo();
    sc.guard.grace_period = a.grace;
    sc.guard.validate();
    sc.seed = a.seed;
    sc.duration = a.max_duration;
    sc.pacing = pacing_from(a.instant, a.realtime, a.speed, a.serve.empty() ? BusClock::instant() : BusClock::realtime());
    scenario::SimSource s;
    s.driver = owner;
    s.swap_to = thief;
    s.swap_at = a.swap_at;
    sc.source = s;
    // run on for two seconds of injection, then stop
    sc.stop_when = [](Timestamp now, const guard::GuardNode& g) {
        return g.state().phase == guard::Phase::disabled && now - g.state().phase_entered_at >= 2'000'000;
    };
    auto code = guard::issue_override(sc.guard.override_key, 8 * 3600, sc.start);
    std::cout << "  owner override code " << code.code << " (valid until " << format_timestamp(code.expiry) << ")\n";

    GuardRun run;
    attach_outputs(run, a.events, a.serve);
    auto r = scenario::run_scenario(&model, sc, run.log, run.commands);
    std::vector<std::string> phases{"pending"};
    for (const auto& e : r.events)
        if (e.event.kind == guard::EventKind::phase_change) phases.push_back(to_string(e.event.phase));
    finish_run(run, a.linger, r, sc.start, a.events != "-");
    std::cout << "phases:";
    for (std::size_t i = 0; i < phases.size(); ++i) std::cout << (i ? " -> " : " ") << phases[i];
    std::cout << '\n';
    return 0;
}

struct CodeArgs {
    std::string secret = "owner-secret";
    std::string vehicle_id = "vehicle";
    double validity = 3600.0;
    double at = 1700000000.0;
    std::string verify;
};

int run_code(const CodeArgs& a) {
    guard::OverrideKey key{guard::parse_secret(a.secret), a.vehicle_id};
    key.validate();
    auto now = Timestamp::from_seconds(a.at);
    if (!a.verify.empty()) {
        auto g = guard::verify_override(key, a.verify, now);
        std::cout << (g ? "valid until " + format_timestamp(g->expiry) : std::string("invalid")) << '\n';
        return g ? 0 : 2;
    }
    auto g = guard::issue_override(key, a.validity, now);
    std::cout << g.code << "  expires " << format_timestamp(g.expiry) << "  issuer " << g.issuer << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"canid: CAN traffic driver authentication toolkit"};
    app.set_config("--config", "", "TOML/INI file of option defaults, one [section] per command; flags win");
    app.require_subcommand(1);
    std::function<int()> run;

    IngestArgs ia;
    auto* ingest = app.add_subcommand("ingest", "Load a trace or dataset tree and summarize it");
    ingest->add_option("path", ia.path, std::string("Trace file or directory (default $") + kDatasetRootEnv + ")");
    ingest->add_option("--format", ia.format, "Input format: log or csv (default by extension)");
    ingest->add_option("--meta", ia.meta, "Label override key=value (driver, vehicle, device, route)");
    ingest->add_option("--csv-columns", ia.csv_columns, "CSV header names: timestamp,id,dlc,data[,channel]");
    ingest->add_option("--max-malformed", ia.max_malformed, "Abort above this malformed-line fraction")->capture_default_str();
    ingest->add_option("--out", ia.out, "Write the normalized trace here (.log or .csv)");
    ingest->add_option("--json", ia.json, "Write the summary as JSON");
    ingest->callback([&] { run = [&] { return run_ingest(ia); }; });

    StatsArgs sa;
    auto* stats = app.add_subcommand("stats", "Per-trace and per-ID statistics");
    stats->add_option("traces", sa.traces, std::string("Trace files or directories (default $") + kDatasetRootEnv + ")");
    stats->add_option("--format", sa.format, "Input format: log or csv (default by extension)");
    stats->add_option("--json", sa.json, "Write statistics as JSON");
    stats->callback([&] { run = [&] { return run_stats(sa); }; });

    FeaturesArgs fa;
    auto* features = app.add_subcommand("features", "Sliding-window feature extraction to CSV");
    features->add_option("traces", fa.traces, "Trace files or directories")->required();
    features->add_option("--window", fa.window, "Window length, seconds")->capture_default_str();
    features->add_option("--stride", fa.stride, "Window stride, seconds")->capture_default_str();
    features->add_option("--min-frames", fa.min_frames, "Drop windows with fewer frames")->capture_default_str();
    features->add_flag("--partial", fa.partial, "Keep the trailing incomplete window");
    features->add_option("--lags", fa.lags, "Comma-separated lags appended as extra columns, e.g. 1,2");
    features->add_option("--pca", fa.pca, "Standardize and project onto this many principal components");
    features->add_option("--vocab", fa.vocab, "Comma-separated hex IDs (default: every ID seen)");
    features->add_option("--label", fa.label, "Driver label for all inputs");
    features->add_option("--out", fa.out, "Feature CSV path")->required();
    features->add_option("--pipeline-out", fa.pipeline_out, "Pipeline JSON path (default <out>.pipeline.json)");
    features->callback([&] { run = [&] { return run_features(fa); }; });

    TrainArgs ta;
    auto* train = app.add_subcommand("train", "Train an authentication model from a feature CSV");
    train->add_option("features", ta.features, "Feature CSV")->required();
    train->add_option("--model", ta.model, "knn, kmeans or autoencoder")->capture_default_str();
    train->add_option("--authorized", ta.authorized, "Authorized driver labels (comma-separated)")->required();
    train->add_option("--seed", ta.seed, "Random seed")->capture_default_str();
    train->add_option("--knn-k", ta.knn_k, "Neighbours for knn")->capture_default_str();
    train->add_option("--clusters", ta.clusters, "Clusters for kmeans")->capture_default_str();
    train->add_option("--quantile", ta.quantile, "Threshold quantile of training scores")->capture_default_str();
    train->add_option("--epochs", ta.epochs, "Autoencoder epochs")->capture_default_str();
    train->add_option("--lr", ta.lr, "Autoencoder learning rate")->capture_default_str();
    train->add_option("--batch", ta.batch, "Autoencoder mini-batch size")->capture_default_str();
    train->add_option("--hidden", ta.hidden, "Autoencoder encoder widths, input side first")->capture_default_str();
    train->add_option("--pipeline", ta.pipeline, "Pipeline JSON (default <features>.pipeline.json)");
    train->add_option("--out", ta.out, "Model JSON path")->required();
    train->callback([&] { run = [&] { return run_train(ta); }; });

    EvalArgs ea;
    auto* eval = app.add_subcommand("eval", "Evaluate a model on a labelled feature CSV");
    eval->add_option("model", ea.model, "Model JSON")->required();
    eval->add_option("features", ea.features, "Feature CSV")->required();
    eval->add_option("--json", ea.json, "Write metrics as JSON");
    eval->callback([&] { run = [&] { return run_eval(ea); }; });

    GenArgs ga;
    auto* gen = app.add_subcommand("gen", "Generate synthetic traffic for a driver profile");
    gen->add_option("--profile", ga.profile, "Profile JSON file or builtin:calm / builtin:aggressive")->capture_default_str();
    gen->add_option("--duration", ga.duration, "Seconds of traffic")->capture_default_str();
    gen->add_option("--seed", ga.seed, "Random seed")->capture_default_str();
    gen->add_option("--script", ga.script, "Scripted pedal/brake/inject commands");
    gen->add_option("--start", ga.start, "Start time, epoch seconds")->capture_default_str();
    gen->add_option("--vehicle", ga.vehicle, "Vehicle label")->capture_default_str();
    gen->add_option("--out", ga.out, "Trace path (.log or .csv)")->required();
    gen->callback([&] { run = [&] { return run_gen(ga); }; });

    ReplayArgs ra;
    auto* replay = app.add_subcommand("replay", "Replay a trace onto the virtual bus");
    replay->add_option("trace", ra.trace, "Trace file")->required();
    replay->add_option("--speed", ra.speed, "Wall seconds per trace second (0.5 = twice as fast)");
    replay->add_flag("--instant", ra.instant, "No pacing; order only");
    replay->add_flag("--realtime", ra.realtime, "Timestamp-faithful pacing (default)");
    replay->add_option("--inbox", ra.inbox, "Per-node inbox capacity, frames")->capture_default_str();
    replay->callback([&] { run = [&] { return run_replay(ra); }; });

    GuardArgs gda;
    auto* guard = app.add_subcommand("guard", "Run the guard against a simulated vehicle or a recorded trace");
    guard->add_option("model", gda.model, "Model JSON, or none with --simulated")->required();
    guard->add_option("--source", gda.source, "sim or trace")->capture_default_str();
    guard->add_option("--trace", gda.trace, "Trace file for --source trace");
    guard->add_option("--profile", gda.profile, "Driver profile for --source sim")->capture_default_str();
    guard->add_option("--swap-to", gda.swap_to, "Second driver profile");
    guard->add_option("--swap-at", gda.swap_at, "Seconds after start when the second driver takes over");
    guard->add_option("--script", gda.script, "Scripted pedal/brake/inject commands for the vehicle");
    guard->add_option("--grace", gda.grace, "Grace period after a warning, seconds")->capture_default_str();
    guard->add_option("--initial-window", gda.initial_window, "Seconds before a failed check may warn")->capture_default_str();
    guard->add_option("--smoothing", gda.smoothing, "Majority window over decisions")->capture_default_str();
    guard->add_option("--duration", gda.duration, "Seconds to run")->capture_default_str();
    guard->add_option("--seed", gda.seed, "Random seed")->capture_default_str();
    guard->add_flag("--simulated", gda.simulated, "Take verdicts from POST /simulate instead of the model");
    guard->add_option("--secret", gda.secret, "Override secret (text or hex:...)")->capture_default_str();
    guard->add_option("--vehicle-id", gda.vehicle_id, "Vehicle id bound into override codes")->capture_default_str();
    guard->add_option("--max-speed", gda.max_speed, "Report restriction violations above this speed, mph");
    guard->add_option("--serve", gda.serve, "Serve the HTTP interface on host:port (loopback only)");
    guard->add_option("--speed", gda.speed, "Wall seconds per bus second");
    guard->add_flag("--instant", gda.instant, "No pacing (default without --serve)");
    guard->add_flag("--realtime", gda.realtime, "Wall-clock pacing (default with --serve)");
    guard->add_option("--linger", gda.linger, "Keep serving this many seconds after the run");
    guard->add_option("--events", gda.events, "Write the event log as NDJSON (- for stdout)");
    guard->add_flag("--stop-on-disable", gda.stop_on_disable, "End the run when injection starts");
    guard->callback([&] { run = [&] { return run_guard(gda); }; });

    DemoArgs da;
    auto* demo = app.add_subcommand("demo", "Owner drives, thief takes over; guard warns then cuts the throttle");
    demo->add_option("--seed", da.seed, "Random seed")->capture_default_str();
    demo->add_option("--train-minutes", da.train_minutes, "Owner traffic used for training")->capture_default_str();
    demo->add_option("--swap-at", da.swap_at, "Seconds before the thief takes over")->capture_default_str();
    demo->add_option("--grace", da.grace, "Grace period, seconds")->capture_default_str();
    demo->add_option("--max-duration", da.max_duration, "Give up after this many seconds")->capture_default_str();
    demo->add_option("--serve", da.serve, "Serve the HTTP interface on host:port (loopback only)");
    demo->add_option("--speed", da.speed, "Wall seconds per bus second");
    demo->add_flag("--instant", da.instant, "No pacing (default without --serve)");
    demo->add_flag("--realtime", da.realtime, "Wall-clock pacing (default with --serve)");
    demo->add_option("--linger", da.linger, "Keep serving this many seconds after the run");
    demo->add_option("--events", da.events, "Write the event log as NDJSON (- for stdout)");
    demo->callback([&] { run = [&] { return run_demo(da); }; });

    CodeArgs ca;
    auto* code = app.add_subcommand("code", "Issue or check an owner override code");
    code->add_option("--secret", ca.secret, "Override secret (text or hex:...)")->capture_default_str();
    code->add_option("--vehicle-id", ca.vehicle_id, "Vehicle id")->capture_default_str();
    code->add_option("--validity", ca.validity, "Seconds the code stays valid (rounded up to the hour)")->capture_default_str();
    code->add_option("--at", ca.at, "Issue/check time, epoch seconds")->capture_default_str();
    code->add_option("--verify", ca.verify, "Check this code instead of issuing one");
    code->callback([&] { run = [&] { return run_code(ca); }; });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }

    try {
        return run();
    } catch (const UsageError& e) {
        std::cerr << "canid: usage error: " << e.what() << '\n';
        return 1;
    } catch (const ModelError& e) {
        std::cerr << "canid: model error: " << e.what() << '\n';
        return 3;
    } catch (const DataError& e) {
        std::cerr << "canid: data error: " << e.what() << '\n';
        return 2;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "canid: data error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "canid: error: " << e.what() << '\n';
        return 2;
    }
}
