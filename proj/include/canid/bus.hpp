#pragma once

// In-process broadcast CAN bus. Every attached node sees every frame,
// including its own injections. One mutex acts as the sequencer so delivery
// order is identical across nodes.

#include <algorithm>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "error.hpp"
#include "frame.hpp"
#include "trace.hpp"

namespace canid {

struct BusClock {
    enum class Mode { realtime, scaled, instant };
    Mode mode = Mode::instant;
    /// Wall-clock seconds per bus second: 0.5 plays twice as fast. Only used by scaled.
    double factor = 1.0;
    /// Bus time that corresponds to the moment the clock starts.
    std::optional<Timestamp> origin;

    static BusClock instant() { return {}; }
    static BusClock realtime() { return {Mode::realtime, 1.0, {}}; }
    static BusClock scaled(double f) { return {Mode::scaled, f, {}}; }

    double wall_factor() const { return mode == Mode::scaled ? factor : 1.0; }

    void validate() const {
        if (mode == Mode::scaled && !(factor > 0)) throw UsageError("bus clock factor must be > 0");
    }
};

struct Delivery {
    CanFrame frame;
    std::string source;
    std::uint64_t seq = 0;
};

struct DeliveryAck {
    Timestamp bus_time;
    std::uint64_t seq = 0;
};

class VirtualBus;

/// One participant's view of the bus: a bounded inbox plus an injection handle.
class BusNode {
public:
    BusNode(std::string id, std::size_t capacity, VirtualBus* bus) : id_(std::move(id)), capacity_(capacity), bus_(bus) {}

    const std::string& id() const { return id_; }

    /// Drains everything currently queued.
    std::vector<Delivery> poll() {
        std::lock_guard lk(mu_);
        std::vector<Delivery> out(std::make_move_iterator(inbox_.begin()), std::make_move_iterator(inbox_.end()));
        inbox_.clear();
        return out;
    }

    /// Blocks up to `timeout` for one delivery.
    std::optional<Delivery> wait_pop(std::chrono::milliseconds timeout) {
        std::unique_lock lk(mu_);
        if (!cv_.wait_for(lk, timeout, [&] { return !inbox_.empty(); })) return std::nullopt;
        Delivery d = std::move(inbox_.front());
        inbox_.pop_front();
        return d;
    }

    std::size_t pending() const {
        std::lock_guard lk(mu_);
        return inbox_.size();
    }
    std::uint64_t received() const {
        std::lock_guard lk(mu_);
        return received_;
    }
    /// Frames that reached the node while its inbox was full.
    std::uint64_t overflow() const {
        std::lock_guard lk(mu_);
        return overflow_;
    }

    DeliveryAck inject(CanFrame frame);

private:
    friend class VirtualBus;

    void push(const Delivery& d) {
        {
            std::lock_guard lk(mu_);
            ++received_;
            if (inbox_.size() >= capacity_) {
                ++overflow_;
                return;
            }
            inbox_.push_back(d);
        }
        cv_.notify_one();
    }

    std::string id_;
    std::size_t capacity_;
    VirtualBus* bus_;
    mutable std::mutex mu_;
    std::condition_variable cv_;
    std::deque<Delivery> inbox_;
    std::uint64_t received_ = 0;
    std::uint64_t overflow_ = 0;
};

struct ReplaySummary {
    std::size_t delivered = 0;
    double wall_seconds = 0.0;
    /// Lateness of each delivery relative to its scheduled wall time, seconds.
    double timing_error_p50 = 0.0;
    double timing_error_p95 = 0.0;
    double timing_error_max = 0.0;
    std::uint64_t overflow = 0;
};

class VirtualBus {
public:
    static constexpr std::size_t kDefaultInboxCapacity = 65536;
    inline static const std::string kReplaySource = "replay";

    explicit VirtualBus(BusClock clock = BusClock::instant(), std::size_t inbox_capacity = kDefaultInboxCapacity)
        : clock_(clock), capacity_(inbox_capacity) {
        clock_.validate();
        wall_origin_ = std::chrono::steady_clock::now();
        if (clock_.origin) time_ = *clock_.origin;
    }

    VirtualBus(const VirtualBus&) = delete;
    VirtualBus& operator=(const VirtualBus&) = delete;

    std::shared_ptr<BusNode> attach(const std::string& node_id) {
        std::lock_guard lk(mu_);
        if (!running_) throw BusStopped();
        if (nodes_.count(node_id)) throw UsageError("node '" + node_id + "' already attached");
        auto n = std::make_shared<BusNode>(node_id, capacity_, this);
        nodes_.emplace(node_id, n);
        return n;
    }

    void detach(const std::string& node_id) {
        std::lock_guard lk(mu_);
        nodes_.erase(node_id);
    }

    void stop() {
        std::lock_guard lk(mu_);
        running_ = false;
    }
    bool running() const {
        std::lock_guard lk(mu_);
        return running_;
    }

    /// Current bus time. Instant clocks advance only through deliveries and
    /// set_time; wall clocks map elapsed wall time onto bus time but never run
    /// past the next scheduled replay frame.
    Timestamp now() const {
        std::lock_guard lk(mu_);
        return now_locked();
    }

    /// Moves an instant-mode bus clock forward (never backward).
    void set_time(Timestamp t) {
        std::lock_guard lk(mu_);
        time_ = std::max(time_, t);
    }

    /// Broadcasts a frame that carries its own bus timestamp (replay or a
    /// simulated ECU emitting on schedule).
    DeliveryAck publish(const CanFrame& frame, const std::string& source) {
        std::lock_guard lk(mu_);
        if (!running_) throw BusStopped();
        time_ = std::max(time_, frame.timestamp);
        return deliver_locked(frame, source);
    }

    /// Broadcasts a frame stamped with the current bus time.
    DeliveryAck inject(const std::string& source, CanFrame frame) {
        std::lock_guard lk(mu_);
        if (!running_) throw BusStopped();
        frame.timestamp = now_locked();
        time_ = frame.timestamp;
        return deliver_locked(frame, source);
    }

    /// Replays a time-ordered trace. Nodes attached concurrently see the suffix
    /// delivered after their attachment.
    ReplaySummary replay(const Trace& trace, BusClock clock) {
        clock.validate();
        ReplaySummary sum;
        if (trace.frames.empty()) return sum;
        for (std::size_t i = 1; i < trace.frames.size(); ++i)
            if (trace.frames[i].timestamp < trace.frames[i - 1].timestamp)
                throw DataError("replay requires a time-ordered trace");

        using clk = std::chrono::steady_clock;
        const Timestamp t0 = trace.frames.front().timestamp;
        const auto wall0 = clk::now();
        {
            std::lock_guard lk(mu_);
            clock_ = clock;
            clock_.origin = t0;
            wall_origin_ = wall0;
            time_ = std::max(time_, t0);
        }
        const double wf = clock.wall_factor();
        std::vector<double> lateness;
        if (clock.mode != BusClock::Mode::instant) lateness.reserve(trace.frames.size());

        for (std::size_t i = 0; i < trace.frames.size(); ++i) {
            const auto& f = trace.frames[i];
            if (clock.mode != BusClock::Mode::instant) {
                auto due = wall0 + std::chrono::duration_cast<clk::duration>(
                                       std::chrono::duration<double>((f.timestamp - t0) * 1e-6 * wf));
                {
                    std::lock_guard lk(mu_);
                    next_scheduled_ = f.timestamp;
                }
                sleep_until_precise(due);
                lateness.push_back(std::chrono::duration<double>(clk::now() - due).count());
            }
            std::lock_guard lk(mu_);
            if (!running_) throw BusStopped();
            time_ = std::max(time_, f.timestamp);
            deliver_locked(f, kReplaySource);
            ++sum.delivered;
        }
        {
            std::lock_guard lk(mu_);
            next_scheduled_.reset();
            for (const auto& [_, n] : nodes_) sum.overflow += n->overflow();
        }
        sum.wall_seconds = std::chrono::duration<double>(clk::now() - wall0).count();
        if (!lateness.empty()) {
            std::sort(lateness.begin(), lateness.end());
            auto pct = [&](double q) {
                std::size_t idx = static_cast<std::size_t>(std::ceil(q * lateness.size())) - 1;
                return lateness[std::min(idx, lateness.size() - 1)];
            };
            sum.timing_error_p50 = pct(0.50);
            sum.timing_error_p95 = pct(0.95);
            sum.timing_error_max = lateness.back();
        }
        return sum;
    }

    std::uint64_t delivered_total() const {
        std::lock_guard lk(mu_);
        return seq_;
    }

    /// Sleeps until `due` on the steady clock, spinning for the final stretch.
    static void sleep_until_precise(std::chrono::steady_clock::time_point due) {
        using namespace std::chrono;
        auto coarse = due - microseconds(300);
        if (steady_clock::now() < coarse) std::this_thread::sleep_until(coarse);
        while (steady_clock::now() < due) std::this_thread::yield();
    }

private:
    Timestamp now_locked() const {
        if (clock_.mode == BusClock::Mode::instant) return time_;
        auto elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - wall_origin_).count();
        Timestamp origin = clock_.origin.value_or(Timestamp{});
        Timestamp mapped = origin + static_cast<std::int64_t>(elapsed / clock_.wall_factor() * 1e6);
        if (next_scheduled_) mapped = std::min(mapped, *next_scheduled_);
        return std::max(mapped, time_);
    }

    DeliveryAck deliver_locked(const CanFrame& frame, const std::string& source) {
        Delivery d{frame, source, ++seq_};
        for (const auto& [_, n] : nodes_) n->push(d);
        return {frame.timestamp, d.seq};
    }

    mutable std::mutex mu_;
    BusClock clock_;
    std::size_t capacity_;
    std::map<std::string, std::shared_ptr<BusNode>> nodes_;
    std::chrono::steady_clock::time_point wall_origin_;
    Timestamp time_{};
    std::optional<Timestamp> next_scheduled_;
    std::uint64_t seq_ = 0;
    bool running_ = true;
};

inline DeliveryAck BusNode::inject(CanFrame frame) { return bus_->inject(id_, std::move(frame)); }

/// Collects a node's deliveries into a trace (e.g. for a candump audit file).
inline Trace capture_trace(BusNode& node, TraceMeta meta = {}) {
    Trace t;
    t.meta = std::move(meta);
    for (auto& d : node.poll()) t.frames.push_back(std::move(d.frame));
    finalize_trace(t);
    return t;
}

}  // namespace canid
