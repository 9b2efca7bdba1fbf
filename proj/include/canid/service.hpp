#pragma once

// HTTP front end for a running guard: state snapshot, server-sent event
// stream, override codes and simulated (joystick) verdicts. Loopback only.

#include <atomic>
#include <thread>

#include "guard.hpp"

// after guard.hpp: <resolv.h> (pulled in by httplib) defines _res, which Eigen uses as a name
#include <httplib.h>

namespace canid::guard {

inline bool is_loopback(const std::string& host) {
    return host == "127.0.0.1" || host == "localhost" || host == "::1" || host.rfind("127.", 0) == 0;
}

/// "host:port" -> parts; port 0 asks for any free port.
inline std::pair<std::string, int> parse_bind_address(const std::string& addr) {
    auto colon = addr.rfind(':');
    if (colon == std::string::npos) throw UsageError("bind address must be host:port, got '" + addr + "'");
    std::string host = addr.substr(0, colon);
    if (host.size() >= 2 && host.front() == '[' && host.back() == ']') host = host.substr(1, host.size() - 2);
    int port = -1;
    try {
        std::size_t used = 0;
        port = std::stoi(addr.substr(colon + 1), &used);
        if (used != addr.size() - colon - 1) port = -1;
    } catch (const std::exception&) {
    }
    if (port < 0 || port > 65535) throw UsageError("bad port in bind address '" + addr + "'");
    return {host, port};
}

/// SSE framing of one event: id is the sequence number, event name the kind.
inline std::string sse_message(const ApiEvent& e) {
    return "id: " + std::to_string(e.event.seq) + "\nevent: " + to_string(e.event.kind) + "\ndata: " +
           to_json(e).dump() + "\n\n";
}

class GuardService {
public:
    GuardService(EventLog& log, CommandQueue& commands) : log_(log), commands_(commands) { routes(); }
    GuardService(const GuardService&) = delete;
    GuardService& operator=(const GuardService&) = delete;
    ~GuardService() { stop(); }

    /// Binds and starts serving on a background thread. Returns the bound port.
    int start(const std::string& host, int port) {
        if (!is_loopback(host)) throw UsageError("guard service binds to loopback only, not '" + host + "'");
        if (thread_.joinable()) throw UsageError("guard service already running");
        int bound = port == 0 ? server_.bind_to_any_port(host) : (server_.bind_to_port(host, port) ? port : -1);
        if (bound <= 0) throw DataError("cannot bind " + host + ":" + std::to_string(port));
        port_ = bound;
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
        return port_;
    }

    int port() const { return port_; }

    /// Closes the event log, lets every open stream flush what it has not yet sent, then stops.
    void stop(std::chrono::milliseconds drain_timeout = std::chrono::milliseconds(2000)) {
        if (!thread_.joinable()) return;
        log_.close();
        auto until = std::chrono::steady_clock::now() + drain_timeout;
        while (streams_.load() > 0 && std::chrono::steady_clock::now() < until)
            std::this_thread::sleep_for(std::chrono::milliseconds(5));
        stopping_ = true;
        server_.stop();
        thread_.join();
    }

    std::size_t open_streams() const { return streams_.load(); }

private:
    static void json_reply(httplib::Response& res, int status, const nlohmann::json& body) {
        res.status = status;
        res.set_content(body.dump(), "application/json; charset=utf-8");
    }

    static std::optional<nlohmann::json> body_json(const httplib::Request& req, httplib::Response& res) {
        auto j = nlohmann::json::parse(req.body, nullptr, false);
        if (j.is_discarded() || !j.is_object()) {
            json_reply(res, 400, {{"error", "body must be a JSON object"}});
            return std::nullopt;
        }
        return j;
    }

    void routes() {
        server_.set_default_headers({{"Access-Control-Allow-Origin", "*"}, {"Cache-Control", "no-store"}});
        server_.Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) {
            res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
            res.set_header("Access-Control-Allow-Headers", "Content-Type");
            res.status = 204;
        });

        server_.Get("/state", [this](const httplib::Request&, httplib::Response& res) {
            json_reply(res, 200, to_json(log_.current()));
        });

        server_.Get("/events", [this](const httplib::Request& req, httplib::Response& res) {
            std::size_t from = 0;
            if (req.has_header("Last-Event-ID")) {
                try {
                    from = std::stoull(req.get_header_value("Last-Event-ID"));
                } catch (const std::exception&) {
                }
            }
            ++streams_;
            auto next = std::make_shared<std::size_t>(from);
            res.set_chunked_content_provider(
                "text/event-stream",
                [this, next](std::size_t, httplib::DataSink& sink) {
                    while (!stopping_) {
                        auto e = log_.wait_next(*next, std::chrono::milliseconds(200));
                        if (e) {
                            auto msg = sse_message(*e);
                            if (!sink.write(msg.data(), msg.size())) return false;
                            ++*next;
                            continue;
                        }
                        if (log_.closed() && *next >= log_.size()) {
                            sink.done();
                            return true;
                        }
                        if (!sink.is_writable()) return false;
                        // comment line keeps idle connections alive and detects gone clients
                        static constexpr char ping[] = ": ping\n\n";
                        if (!sink.write(ping, sizeof ping - 1)) return false;
                    }
                    return false;
                },
                [this](bool) { --streams_; });
        });

        server_.Post("/override", [this](const httplib::Request& req, httplib::Response& res) {
            auto j = body_json(req, res);
            if (!j) return;
            auto it = j->find("code");
            if (it == j->end() || !it->is_string()) return json_reply(res, 400, {{"error", "missing string field 'code'"}});
            commands_.push_override(it->get<std::string>());
            json_reply(res, 202, {{"queued", "override"}});
        });

        server_.Post("/simulate", [this](const httplib::Request& req, httplib::Response& res) {
            auto j = body_json(req, res);
            if (!j) return;
            auto it = j->find("verdict");
            if (it == j->end() || !it->is_string()) return json_reply(res, 400, {{"error", "missing string field 'verdict'"}});
            auto v = it->get<std::string>();
            std::optional<Verdict> verdict;
            if (v == "pass" || v == "up") verdict = Verdict::authorized;
            if (v == "fail" || v == "down") verdict = Verdict::unauthorized;
            if (!verdict) return json_reply(res, 400, {{"error", "verdict must be pass or fail"}});
            if (!log_.current().simulated)
                return json_reply(res, 409, {{"error", "guard is model-driven; simulated verdicts are disabled"}});
            commands_.push_verdict(*verdict);
            json_reply(res, 202, {{"queued", *verdict == Verdict::authorized ? "pass" : "fail"}});
        });
    }

    EventLog& log_;
    CommandQueue& commands_;
    httplib::Server server_;
    std::thread thread_;
    std::atomic<std::size_t> streams_{0};
    std::atomic<bool> stopping_{false};
    int port_ = 0;
};

}  // namespace canid::guard
