#pragma once

#include <cstdint>
#include <functional>
#include <queue>
#include <stdexcept>
#include <vector>

#include "fluctsim/rng.hpp"

namespace fluctsim {

using PeerId = std::uint64_t;

// Deterministic discrete-event engine. Events run in (time, sequence) order;
// the sequence counter is assigned at scheduling time, so same-time events
// execute in scheduling order.
class Simulator {
public:
    double now() const { return now_; }
    std::uint64_t events_processed() const { return processed_; }

    void schedule(double t, std::function<void()> fn) {
        if (t < now_) throw std::logic_error("schedule: event time is in the past");
        queue_.push(Entry{t, next_seq_++, std::move(fn)});
    }

    void schedule_in(double dt, std::function<void()> fn) { schedule(now_ + dt, std::move(fn)); }

    // Drains the queue up to and including t_end; clock ends at t_end.
    void run_until(double t_end) {
        while (!queue_.empty() && queue_.top().t <= t_end) {
            Entry e = std::move(const_cast<Entry&>(queue_.top()));
            queue_.pop();
            now_ = e.t;
            ++processed_;
            e.fn();
        }
        if (t_end > now_) now_ = t_end;
    }

    bool empty() const { return queue_.empty(); }

private:
    struct Entry {
        double t;
        std::uint64_t seq;
        std::function<void()> fn;
        bool operator>(const Entry& o) const { return t != o.t ? t > o.t : seq > o.seq; }
    };
    std::priority_queue<Entry, std::vector<Entry>, std::greater<>> queue_;
    double now_ = 0;
    std::uint64_t next_seq_ = 0;
    std::uint64_t processed_ = 0;
};

struct PartitionWindow {
    double start_s = 0;
    double end_s = 0;
    std::vector<PeerId> peers; // unreachable during [start, end)
};

struct NetworkModel {
    double latency_s_lo = 0.010;
    double latency_s_hi = 0.100;
    double q_f_link = 0.05;               // i.i.d. per-message connection failure
    double drop_first_attempt_prob = 0.0; // fault injection: loses the first
                                          // forwarding attempt of a query hop,
                                          // as if the chosen forwarder died
    std::vector<PartitionWindow> partitions;
};

void validate(const NetworkModel& model);

// Message transport: draws loss and latency, then schedules the delivery
// thunk. Liveness of the receiver is the caller's concern at delivery time
// (messages to crashed peers vanish there, never at the sender).
class Network {
public:
    Network(Simulator& sim, const NetworkModel& model, Rng& rng)
        : sim_(sim), model_(model), rng_(rng) {}

    // Returns false when the message was lost to a connection failure or a
    // partition. `extra_drop_prob` stacks fault injection on top of q_f.
    bool send(PeerId from, PeerId to, std::function<void()> deliver,
              double extra_drop_prob = 0.0) {
        ++sent_;
        if (partitioned(from) || partitioned(to)) {
            ++dropped_;
            return false;
        }
        bool lost = rng_.bernoulli(model_.q_f_link);
        if (!lost && extra_drop_prob > 0) lost = rng_.bernoulli(extra_drop_prob);
        if (lost) {
            ++dropped_;
            return false;
        }
        double latency = rng_.uniform(model_.latency_s_lo, model_.latency_s_hi);
        sim_.schedule_in(latency, std::move(deliver));
        return true;
    }

    double max_latency() const { return model_.latency_s_hi; }
    const NetworkModel& model() const { return model_; }
    std::uint64_t sent() const { return sent_; }
    std::uint64_t dropped() const { return dropped_; }

private:
    bool partitioned(PeerId p) const {
        for (const PartitionWindow& w : model_.partitions)
            if (sim_.now() >= w.start_s && sim_.now() < w.end_s)
                for (PeerId q : w.peers)
                    if (q == p) return true;
        return false;
    }

    Simulator& sim_;
    NetworkModel model_;
    Rng& rng_;
    std::uint64_t sent_ = 0;
    std::uint64_t dropped_ = 0;
};

} // namespace fluctsim
