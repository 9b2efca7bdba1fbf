#pragma once

// Whole-trace loading (candump .log and .csv), labeling, statistics and a
// directory walk mirroring the per-vehicle / per-driver dataset layout.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <regex>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "frame.hpp"

namespace canid {

// ---------------------------------------------------------------------------
// Labels
// ---------------------------------------------------------------------------

enum class Device { canedge2, kvaser, usb2can, synthetic, unknown };
enum class RouteType { daily, fixed, mixed, unknown };

inline const char* to_string(Device d) {
    switch (d) {
        case Device::canedge2: return "canedge2";
        case Device::kvaser: return "kvaser";
        case Device::usb2can: return "usb2can";
        case Device::synthetic: return "synthetic";
        case Device::unknown: return "unknown";
    }
    return "unknown";
}

inline const char* to_string(RouteType r) {
    switch (r) {
        case RouteType::daily: return "daily";
        case RouteType::fixed: return "fixed";
        case RouteType::mixed: return "mixed";
        case RouteType::unknown: return "unknown";
    }
    return "unknown";
}

inline std::optional<Device> parse_device(std::string_view s) {
    for (auto d : {Device::canedge2, Device::kvaser, Device::usb2can, Device::synthetic, Device::unknown})
        if (s == to_string(d)) return d;
    return std::nullopt;
}

inline std::optional<RouteType> parse_route_type(std::string_view s) {
    for (auto r : {RouteType::daily, RouteType::fixed, RouteType::mixed, RouteType::unknown})
        if (s == to_string(r)) return r;
    return std::nullopt;
}

inline const std::string kUnknownDriver = "unknown";

/// The sixteen volunteer drivers of the dataset taxonomy: fourteen with
/// single-driver traces plus the two only present in mixed traces.
inline const std::vector<std::string>& known_driver_labels() {
    static const std::vector<std::string> labels = {
        "female-all-ages-1", "female-all-ages-2", "female-all-ages-4", "female-all-ages-5",
        "male-under30-1",    "male-under30-2",    "male-under30-3",    "male-under30-4",
        "male-30-55-1",      "male-30-55-2",      "male-30-55-3",      "male-30-55-4",
        "male-over55-1",     "male-over55-2",
        "female-all-ages-3", "male-over55-3",
    };
    return labels;
}

/// Drivers excluded from per-driver analysis because they only appear in mixed traces.
inline bool is_mixed_only_driver(std::string_view label) {
    return label == "female-all-ages-3" || label == "male-over55-3";
}

/// Generic shape check: (male|female)-(under30|30-55|over55|all-ages)-<n>.
inline bool matches_label_pattern(const std::string& s) {
    static const std::regex re(R"((male|female)-(under30|30-55|over55|all-ages)-[1-9][0-9]*)");
    return std::regex_match(s, re);
}

/// Accepts exactly the known dataset drivers plus "unknown".
inline std::optional<std::string> parse_driver_label(std::string_view s) {
    if (s == kUnknownDriver) return std::string(s);
    const auto& labels = known_driver_labels();
    auto it = std::find(labels.begin(), labels.end(), s);
    if (it == labels.end()) return std::nullopt;
    return *it;
}

struct TraceMeta {
    std::string driver_label = kUnknownDriver;
    std::string vehicle = "unknown";
    Device device = Device::unknown;
    RouteType route_type = RouteType::unknown;
    std::string source_path;
    /// Segment files of a multi-file trip, in concatenation order. Empty for single files.
    std::vector<std::string> segments;
    bool multi_channel = false;

    /// Label consistency: pattern-valid driver, and mixed routes carry no driver.
    bool valid() const {
        if (driver_label != kUnknownDriver && !matches_label_pattern(driver_label)) return false;
        if (route_type == RouteType::mixed && driver_label != kUnknownDriver) return false;
        return true;
    }
};

inline nlohmann::json to_json(const TraceMeta& m) {
    return {{"driver", m.driver_label},      {"vehicle", m.vehicle},
            {"device", to_string(m.device)}, {"route_type", to_string(m.route_type)},
            {"source", m.source_path},       {"segments", m.segments}};
}

inline TraceMeta trace_meta_from_json(const nlohmann::json& j) {
    TraceMeta m;
    if (j.contains("driver")) {
        auto d = parse_driver_label(j.at("driver").get<std::string>());
        if (!d) throw DataError("bad driver label '" + j.at("driver").get<std::string>() + "'");
        m.driver_label = *d;
    }
    m.vehicle = j.value("vehicle", m.vehicle);
    if (j.contains("device")) m.device = parse_device(j.at("device").get<std::string>()).value_or(Device::unknown);
    if (j.contains("route_type"))
        m.route_type = parse_route_type(j.at("route_type").get<std::string>()).value_or(RouteType::unknown);
    m.source_path = j.value("source", std::string());
    if (!m.valid()) throw DataError("inconsistent trace labels (mixed routes carry no driver)");
    return m;
}

struct Trace {
    TraceMeta meta;
    std::vector<CanFrame> frames;

    bool empty() const { return frames.empty(); }
    std::size_t size() const { return frames.size(); }
};

// ---------------------------------------------------------------------------
// Loading
// ---------------------------------------------------------------------------

enum class TraceFormat { log, csv };

inline std::optional<TraceFormat> parse_trace_format(std::string_view s) {
    if (s == "log") return TraceFormat::log;
    if (s == "csv") return TraceFormat::csv;
    return std::nullopt;
}

inline std::optional<TraceFormat> format_from_extension(const std::filesystem::path& p) {
    auto ext = p.extension().string();
    if (ext == ".log") return TraceFormat::log;
    if (ext == ".csv") return TraceFormat::csv;
    return std::nullopt;
}

/// Column names used by the CSV codec; the header row of a file is matched against them.
struct CsvColumns {
    std::string timestamp = "timestamp";
    std::string arbitration_id = "arbitration_id";
    std::string dlc = "dlc";
    std::string data = "data";
    std::string channel;  // optional column; empty means absent
};

struct LoadOptions {
    CsvColumns columns;
    /// Abort when malformed lines exceed this fraction of non-blank lines.
    double max_malformed_fraction = 0.01;
    std::string default_channel = "can0";
    /// Largest tolerated gap between consecutive segments of a multi-file trip.
    double max_segment_gap_s = 5.0;
};

struct LoadReport {
    std::size_t lines = 0;
    std::vector<ParseError> malformed;
};

namespace detail {

inline std::vector<std::string_view> split_csv(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= line.size(); ++i) {
        if (i == line.size() || line[i] == ',') {
            auto f = line.substr(start, i - start);
            while (!f.empty() && is_space(f.front())) f.remove_prefix(1);
            while (!f.empty() && is_space(f.back())) f.remove_suffix(1);
            out.push_back(f);
            start = i + 1;
        }
    }
    return out;
}

inline Timestamp parse_csv_timestamp(std::string_view s, std::size_t line_no, std::size_t col) {
    auto dot = s.find('.');
    std::string_view ip = s.substr(0, dot);
    std::string_view fp = dot == std::string_view::npos ? std::string_view{} : s.substr(dot + 1);
    if (ip.empty() || fp.size() > 6) throw ParseError(ParseErrorKind::Timestamp, line_no, col, std::string(s));
    std::int64_t sec = 0, frac = 0;
    for (char c : ip) {
        if (c < '0' || c > '9') throw ParseError(ParseErrorKind::Timestamp, line_no, col, std::string(s));
        sec = sec * 10 + (c - '0');
    }
    for (std::size_t i = 0; i < 6; ++i) {
        char c = i < fp.size() ? fp[i] : '0';
        if (c < '0' || c > '9') throw ParseError(ParseErrorKind::Timestamp, line_no, col, std::string(s));
        frac = frac * 10 + (c - '0');
    }
    return Timestamp{sec * 1000000 + frac};
}

struct CsvLayout {
    int ts = -1, id = -1, dlc = -1, data = -1, channel = -1;
};

inline CanFrame parse_csv_row(std::string_view line, const CsvLayout& lay, std::size_t line_no,
                              const std::string& default_channel) {
    auto cells = split_csv(line);
    int need = std::max({lay.ts, lay.id, lay.dlc, lay.data, lay.channel});
    if (static_cast<int>(cells.size()) <= need)
        throw ParseError(ParseErrorKind::Syntax, line_no, line.size(), "too few columns");
    std::string ch = lay.channel >= 0 ? std::string(cells[lay.channel]) : default_channel;
    std::string ts = format_timestamp(parse_csv_timestamp(cells[lay.ts], line_no, 1));
    std::string id(cells[lay.id]);
    if (id.size() > 2 && id[0] == '0' && (id[1] == 'x' || id[1] == 'X')) id = id.substr(2);
    // Normalise short standard IDs ("C9" -> "0C9") before handing to the line parser.
    if (id.size() < 3) id.insert(0, 3 - id.size(), '0');
    std::string data(cells[lay.data]);
    std::string cand = "(" + ts + ") " + ch + " " + id + "#" + data;
    CanFrame f = parse_candump_line(cand, line_no);
    if (lay.dlc >= 0) {
        int dlc = -1;
        auto cell = cells[lay.dlc];
        auto [p, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), dlc);
        if (ec != std::errc{} || p != cell.data() + cell.size() || dlc != f.dlc)
            throw ParseError(ParseErrorKind::Syntax, line_no, 1, "dlc column disagrees with data");
    }
    return f;
}

inline void check_malformed(const LoadReport& rep, const LoadOptions& opt, const std::string& path) {
    if (rep.malformed.empty()) return;
    double frac = static_cast<double>(rep.malformed.size()) / static_cast<double>(std::max<std::size_t>(rep.lines, 1));
    if (frac > opt.max_malformed_fraction) {
        std::ostringstream os;
        os << path << ": " << rep.malformed.size() << " of " << rep.lines << " lines malformed (limit "
           << opt.max_malformed_fraction * 100 << "%); first: " << rep.malformed.front().what();
        throw DataError(os.str());
    }
}

}  // namespace detail

/// Parses trace text already in memory. Malformed lines are collected in `report`.
inline std::vector<CanFrame> parse_trace_text(std::istream& in, TraceFormat format, const LoadOptions& opt,
                                              LoadReport& report) {
    std::vector<CanFrame> frames;
    std::string line;
    std::size_t line_no = 0;
    detail::CsvLayout layout;
    bool header_seen = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (std::all_of(line.begin(), line.end(), detail::is_space)) continue;
        if (format == TraceFormat::csv && !header_seen) {
            header_seen = true;
            auto cells = detail::split_csv(line);
            auto find = [&](const std::string& name) -> int {
                if (name.empty()) return -1;
                for (std::size_t i = 0; i < cells.size(); ++i)
                    if (cells[i] == name) return static_cast<int>(i);
                return -1;
            };
            const auto& c = opt.columns;
            layout = {find(c.timestamp), find(c.arbitration_id), find(c.dlc), find(c.data), find(c.channel)};
            if (layout.ts < 0 || layout.id < 0 || layout.data < 0)
                throw DataError("CSV header lacks required columns '" + c.timestamp + "', '" + c.arbitration_id +
                                "', '" + c.data + "'");
            continue;
        }
        ++report.lines;
        try {
            if (format == TraceFormat::log)
                frames.push_back(parse_candump_line(line, line_no));
            else
                frames.push_back(detail::parse_csv_row(line, layout, line_no, opt.default_channel));
        } catch (const ParseError& e) {
            report.malformed.push_back(e);
        }
    }
    return frames;
}

inline void finalize_trace(Trace& t) {
    std::stable_sort(t.frames.begin(), t.frames.end(),
                     [](const CanFrame& a, const CanFrame& b) { return a.timestamp < b.timestamp; });
    t.meta.multi_channel = false;
    for (const auto& f : t.frames) {
        if (f.channel != t.frames.front().channel) {
            t.meta.multi_channel = true;
            break;
        }
    }
}

namespace detail {

inline std::vector<CanFrame> load_file_frames(const std::filesystem::path& path, TraceFormat format,
                                              const LoadOptions& opt, LoadReport* report_out) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read " + path.string());
    LoadReport rep;
    auto frames = parse_trace_text(in, format, opt, rep);
    check_malformed(rep, opt, path.string());
    if (report_out) {
        report_out->lines += rep.lines;
        report_out->malformed.insert(report_out->malformed.end(), rep.malformed.begin(), rep.malformed.end());
    }
    return frames;
}

}  // namespace detail

/// Loads one trace file, or every segment listed in meta.segments when present.
inline Trace load_trace(const std::string& path, TraceFormat format, TraceMeta meta = {},
                        const LoadOptions& opt = {}, LoadReport* report = nullptr) {
    namespace fs = std::filesystem;
    Trace t;
    if (meta.source_path.empty()) meta.source_path = path;
    t.meta = std::move(meta);
    if (t.meta.segments.empty()) {
        if (fs::is_directory(path)) throw DataError(path + " is a directory; load it as a multi-file trip");
        t.frames = detail::load_file_frames(path, format, opt, report);
        finalize_trace(t);
        return t;
    }
    // Multi-file trip: segments are concatenated in filename order after a continuity check.
    auto segs = t.meta.segments;
    std::sort(segs.begin(), segs.end());
    std::optional<Timestamp> last;
    for (const auto& seg : segs) {
        auto fmt = format_from_extension(seg).value_or(format);
        auto frames = detail::load_file_frames(seg, fmt, opt, report);
        std::stable_sort(frames.begin(), frames.end(),
                         [](const CanFrame& a, const CanFrame& b) { return a.timestamp < b.timestamp; });
        if (!frames.empty()) {
            if (last) {
                double gap = (frames.front().timestamp - *last) * 1e-6;
                if (gap < 0 || gap >= opt.max_segment_gap_s)
                    throw DataError("segment " + seg + " is not continuous with its predecessor (gap " +
                                    std::to_string(gap) + " s)");
            }
            last = frames.back().timestamp;
        }
        t.frames.insert(t.frames.end(), frames.begin(), frames.end());
    }
    t.meta.segments = segs;
    finalize_trace(t);
    return t;
}

inline Trace load_trace(const std::string& path, TraceMeta meta = {}, const LoadOptions& opt = {}) {
    auto fmt = format_from_extension(path);
    if (!fmt) throw UsageError("cannot infer trace format of " + path + " (expected .log or .csv)");
    return load_trace(path, *fmt, std::move(meta), opt);
}

inline void write_trace_log(std::ostream& out, const Trace& t) {
    for (const auto& f : t.frames) out << write_candump_line(f) << '\n';
}

inline void write_trace_csv(std::ostream& out, const Trace& t, const CsvColumns& cols = {}) {
    out << cols.timestamp << ',' << cols.arbitration_id << ',' << cols.dlc << ',' << cols.data << '\n';
    for (const auto& f : t.frames) {
        std::string id;
        detail::append_hex(id, f.arb_id, f.is_extended ? 8 : 3);
        out << format_timestamp(f.timestamp) << ',' << id << ',' << static_cast<int>(f.dlc) << ','
            << (f.is_remote ? std::string("R") : to_hex(f.data())) << '\n';
    }
}

inline void save_trace(const std::string& path, const Trace& t) {
    auto fmt = format_from_extension(path);
    if (!fmt) throw UsageError("cannot infer trace format of " + path + " (expected .log or .csv)");
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path);
    if (*fmt == TraceFormat::log)
        write_trace_log(out, t);
    else
        write_trace_csv(out, t);
}

// ---------------------------------------------------------------------------
// Statistics
// ---------------------------------------------------------------------------

struct IdStats {
    std::size_t count = 0;
    double mean_interarrival = 0.0;
    double stddev_interarrival = 0.0;
    /// Fraction of consecutive frame pairs in which byte i changed; sized by the largest dlc seen.
    std::vector<double> byte_change_rate;
};

struct TraceStats {
    bool empty = true;
    double duration = 0.0;
    std::size_t frame_count = 0;
    /// (frame_count - 1) / duration; undefined for zero-duration traces.
    std::optional<double> mean_rate;
    std::size_t unique_ids = 0;
    std::map<std::uint32_t, IdStats> per_id;
};

/// Running per-ID accumulators. Splitting a trace and merging the pieces'
/// accumulators gives the same statistics as accumulating the whole.
class StatsAccumulator {
public:
    void add(const CanFrame& f) {
        auto& a = ids_[f.arb_id];
        if (a.count > 0) {
            double dt = (f.timestamp - a.last_ts) * 1e-6;
            a.ia_sum += dt;
            a.ia_sq += dt * dt;
            a.ia_n += 1;
            std::size_t n = std::min<std::size_t>(f.dlc, a.last_dlc);
            if (a.change.size() < std::max<std::size_t>(f.dlc, a.last_dlc)) {
                a.change.resize(std::max<std::size_t>(f.dlc, a.last_dlc), 0);
                a.pairs.resize(a.change.size(), 0);
            }
            for (std::size_t i = 0; i < a.change.size(); ++i) {
                if (i < n) {
                    a.pairs[i] += 1;
                    if (f.bytes[i] != a.last_bytes[i]) a.change[i] += 1;
                } else {
                    // present in only one of the two frames: counts as a change
                    a.pairs[i] += 1;
                    a.change[i] += 1;
                }
            }
        } else {
            a.first_ts = f.timestamp;
            a.change.resize(f.dlc, 0);
            a.pairs.resize(f.dlc, 0);
        }
        a.count += 1;
        a.last_ts = f.timestamp;
        a.last_bytes = f.bytes;
        a.last_dlc = f.dlc;
        if (count_ == 0 || f.timestamp < first_) first_ = f.timestamp;
        if (count_ == 0 || f.timestamp > last_) last_ = f.timestamp;
        ++count_;
    }

    TraceStats finish() const {
        TraceStats s;
        s.frame_count = count_;
        s.empty = count_ == 0;
        if (s.empty) return s;
        s.duration = (last_ - first_) * 1e-6;
        if (s.duration > 0) s.mean_rate = static_cast<double>(count_ - 1) / s.duration;
        s.unique_ids = ids_.size();
        for (const auto& [id, a] : ids_) {
            IdStats is;
            is.count = a.count;
            if (a.ia_n > 0) {
                is.mean_interarrival = a.ia_sum / a.ia_n;
                double var = a.ia_sq / a.ia_n - is.mean_interarrival * is.mean_interarrival;
                is.stddev_interarrival = var > 0 ? std::sqrt(var) : 0.0;
            }
            is.byte_change_rate.resize(a.change.size(), 0.0);
            for (std::size_t i = 0; i < a.change.size(); ++i)
                is.byte_change_rate[i] = a.pairs[i] ? static_cast<double>(a.change[i]) / a.pairs[i] : 0.0;
            s.per_id.emplace(id, std::move(is));
        }
        return s;
    }

private:
    struct PerId {
        std::size_t count = 0;
        Timestamp first_ts, last_ts;
        double ia_sum = 0, ia_sq = 0;
        std::size_t ia_n = 0;
        std::array<std::uint8_t, kMaxDataBytes> last_bytes{};
        std::uint8_t last_dlc = 0;
        std::vector<std::size_t> change, pairs;
    };
    std::map<std::uint32_t, PerId> ids_;
    std::size_t count_ = 0;
    Timestamp first_, last_;
};

inline TraceStats compute_stats(const Trace& t) {
    StatsAccumulator acc;
    for (const auto& f : t.frames) acc.add(f);
    return acc.finish();
}

/// The per-vehicle identifier vocabulary, ascending.
inline std::vector<std::uint32_t> id_vocabulary(const TraceStats& s) {
    std::vector<std::uint32_t> v;
    for (const auto& [id, _] : s.per_id) v.push_back(id);
    return v;
}

inline std::string format_id(std::uint32_t id) {
    std::string s;
    detail::append_hex(s, id, id > kMaxStandardId ? 8 : 3);
    return s;
}

/// Observed rate band for raw CAN on passenger vehicles with rich traffic.
inline constexpr double kTypicalRateLowHz = 1000.0;
inline constexpr double kTypicalRateHighHz = 2500.0;

inline nlohmann::json to_json(const TraceStats& s) {
    nlohmann::json ids = nlohmann::json::object();
    for (const auto& [id, is] : s.per_id) {
        ids[format_id(id)] = {{"count", is.count},
                              {"mean_interarrival", is.mean_interarrival},
                              {"stddev_interarrival", is.stddev_interarrival},
                              {"byte_change_rate", is.byte_change_rate}};
    }
    nlohmann::json j = {{"empty", s.empty},
                        {"duration", s.duration},
                        {"frame_count", s.frame_count},
                        {"unique_ids", s.unique_ids},
                        {"per_id", ids}};
    j["mean_rate"] = s.mean_rate ? nlohmann::json(*s.mean_rate) : nlohmann::json(nullptr);
    j["rate_in_typical_band"] =
        s.mean_rate ? nlohmann::json(*s.mean_rate >= kTypicalRateLowHz && *s.mean_rate <= kTypicalRateHighHz)
                    : nlohmann::json(nullptr);
    return j;
}

inline void print_stats_table(std::ostream& os, const std::string& name, const TraceStats& s) {
    char buf[160];
    os << "trace: " << name << '\n';
    if (s.empty) {
        os << "  (empty trace)\n";
        return;
    }
    std::snprintf(buf, sizeof buf, "  frames %zu  duration %.6f s  unique ids %zu\n", s.frame_count, s.duration,
                  s.unique_ids);
    os << buf;
    if (s.mean_rate) {
        bool in_band = *s.mean_rate >= kTypicalRateLowHz && *s.mean_rate <= kTypicalRateHighHz;
        std::snprintf(buf, sizeof buf, "  mean rate %.1f Hz (%s 1000-2500 Hz band)\n", *s.mean_rate,
                      in_band ? "inside" : "outside");
        os << buf;
    } else {
        os << "  mean rate undefined (zero duration)\n";
    }
    os << "  id        count   mean_ia[s]    sd_ia[s]  byte-change-rate\n";
    for (const auto& [id, is] : s.per_id) {
        std::snprintf(buf, sizeof buf, "  %-8s %6zu  %11.6f  %10.6f ", format_id(id).c_str(), is.count,
                      is.mean_interarrival, is.stddev_interarrival);
        os << buf;
        for (double r : is.byte_change_rate) {
            std::snprintf(buf, sizeof buf, " %.2f", r);
            os << buf;
        }
        os << '\n';
    }
}

// ---------------------------------------------------------------------------
// Dataset walk
// ---------------------------------------------------------------------------

namespace detail {

inline void apply_path_labels(TraceMeta& m, const std::vector<std::string>& comps) {
    int driver_at = -1;
    for (std::size_t i = 0; i < comps.size(); ++i) {
        if (parse_driver_label(comps[i]) && comps[i] != kUnknownDriver) {
            m.driver_label = comps[i];
            driver_at = static_cast<int>(i);
        }
        if (auto d = parse_device(comps[i]); d && *d != Device::unknown) m.device = *d;
        if (auto r = parse_route_type(comps[i]); r && *r != RouteType::unknown) m.route_type = *r;
    }
    if (driver_at > 0) {
        // vehicle is the nearest preceding component that is not a route/device tag
        for (int i = driver_at - 1; i >= 0; --i) {
            if (parse_route_type(comps[i]) || parse_device(comps[i])) continue;
            m.vehicle = comps[i];
            break;
        }
    } else if (!comps.empty()) {
        for (const auto& c : comps) {
            if (parse_route_type(c) || parse_device(c)) continue;
            m.vehicle = c;
            break;
        }
    }
    if (m.route_type == RouteType::mixed) m.driver_label = kUnknownDriver;
}

}  // namespace detail

/// Walks `root` for .log/.csv traces. A directory holding trace files whose
/// own name is not a driver/vehicle/tag component is treated as one trip
/// folder (segments concatenated); elsewhere each file is its own trace.
inline std::vector<TraceMeta> scan_dataset(const std::string& root_path) {
    namespace fs = std::filesystem;
    std::vector<TraceMeta> out;
    fs::path root(root_path);
    if (!fs::exists(root)) throw DataError("dataset root " + root_path + " does not exist");

    std::map<fs::path, std::vector<fs::path>> by_dir;
    for (const auto& e : fs::recursive_directory_iterator(root)) {
        if (!e.is_regular_file() || !format_from_extension(e.path())) continue;
        by_dir[e.path().parent_path()].push_back(e.path());
    }
    for (auto& [dir, files] : by_dir) {
        std::sort(files.begin(), files.end());
        std::vector<std::string> comps;
        for (const auto& c : fs::relative(dir, root)) {
            if (c != ".") comps.push_back(c.string());
        }
        // A trip folder sits below the driver folder and is not itself a label.
        bool trip_folder = files.size() > 1 && comps.size() >= 2 && !parse_driver_label(comps.back()) &&
                           !parse_route_type(comps.back()) && !parse_device(comps.back()) &&
                           std::any_of(comps.begin(), comps.end() - 1,
                                       [](const std::string& c) { return parse_driver_label(c).has_value(); });
        if (trip_folder) {
            TraceMeta m;
            detail::apply_path_labels(m, comps);
            m.source_path = dir.string();
            for (const auto& f : files) m.segments.push_back(f.string());
            out.push_back(std::move(m));
        } else {
            for (const auto& f : files) {
                TraceMeta m;
                detail::apply_path_labels(m, comps);
                m.source_path = f.string();
                out.push_back(std::move(m));
            }
        }
    }
    return out;
}

/// Loads a trace described by scan_dataset (single file or multi-file trip).
inline Trace load_trace(const TraceMeta& meta, const LoadOptions& opt = {}) {
    if (!meta.segments.empty()) {
        auto fmt = format_from_extension(meta.segments.front()).value_or(TraceFormat::log);
        return load_trace(meta.source_path, fmt, meta, opt);
    }
    auto fmt = format_from_extension(meta.source_path);
    if (!fmt) throw UsageError("cannot infer trace format of " + meta.source_path);
    return load_trace(meta.source_path, *fmt, meta, opt);
}

}  // namespace canid
