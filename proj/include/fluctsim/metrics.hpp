#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

namespace fluctsim {

enum class QueryKind { Lookup, Insert, Update };

// Every simulated message carries one of these kinds. Maintenance versus
// data-operation classification: queries, answers, delivery advices and
// failure notices serve individual data operations; everything else keeps
// the overlay alive and counts as maintenance.
enum class MsgKind {
    Query,
    Answer,
    Advice,
    FailureNotice,
    Probe,
    ProbeReply,
    Ping,
    PingReply,
    LeaveNotice,
    EvictNotice,
    RepairLookup,
    LinkHandshake,
    JoinRequest,
    JoinTransferItem,
    SplitLink,
    CoalesceReplItem,
    AntiEntropySummary,
    AntiEntropyItem,
    StoreWrite,
    kCount,
};

const char* to_string(MsgKind kind);
bool is_maintenance(MsgKind kind);

struct RunReport {
    std::uint64_t seed = 0;
    double horizon_s = 0;
    std::string digest = "sha256";

    // lookups
    std::uint64_t lookups_issued = 0;
    std::uint64_t lookups_found = 0;
    std::uint64_t lookups_notfound = 0;
    double lookup_success_rate = 0;
    std::vector<std::uint64_t> hop_histogram; // index = hops, resolved lookups
    double mean_hops = 0;
    std::uint64_t max_hops = 0;

    // all queries
    std::uint64_t queries_issued = 0;
    std::uint64_t writes_applied = 0;
    std::uint64_t failed_queries = 0;
    std::uint64_t unresolved_queries = 0; // majority never reached
    std::uint64_t pending_at_end = 0;
    std::uint64_t duplicate_queries = 0;  // reissue while original forwarder lived
    std::uint64_t duplicate_answers = 0;
    std::uint64_t reissues = 0;

    // traffic
    std::uint64_t maintenance_msgs = 0;
    std::uint64_t data_op_msgs = 0;
    double maintenance_share = 0;
    double maintenance_per_peer_per_h = 0;
    std::map<std::string, std::uint64_t> msgs_by_kind;

    // topology & population
    std::uint64_t splits = 0;
    std::uint64_t coalesces = 0;
    std::uint64_t leaf_count = 0;   // at run end
    std::uint64_t max_leaf_depth = 0;
    std::uint64_t extinctions = 0;
    std::uint64_t churn_events = 0;
    double fluctuation_events_per_peer_h = 0;
    double population_mean = 0;
    std::uint64_t population_end = 0;
    std::vector<std::pair<double, std::uint64_t>> population_series;
    double degraded_interval_time_s = 0;
    std::optional<double> convergence_time_s; // quiescence -> store equality
};

class MetricsCollector {
public:
    void run_started(double t0, double horizon_s);
    bool running() const { return running_; }

    void message(MsgKind kind, std::uint64_t n = 1);
    void query_issued(QueryKind kind);
    void lookup_resolved(bool found, int hops);
    void write_applied();
    void query_failed();
    void query_unresolved();
    void reissue(bool original_alive);
    void duplicate_answer();
    void split();
    void coalesce();
    void extinction();
    void churn_event();
    void topology(std::uint64_t leaves, std::uint64_t max_depth);
    void population(double t, std::uint64_t n);
    void degraded_time(double dt);
    void convergence(double quiesce_t, double converged_t);
    void pending_at_end(std::uint64_t n);

    RunReport finalize(double t_end); // throws std::logic_error before run end

private:
    void require_running() const;

    bool running_ = false;
    bool finalized_ = false;
    double t0_ = 0;
    double horizon_s_ = 0;
    double sample_dt_ = 0;
    double last_pop_t_ = 0;
    std::uint64_t last_pop_ = 0;
    double pop_integral_ = 0;
    double last_sample_t_ = -1;
    std::array<std::uint64_t, static_cast<std::size_t>(MsgKind::kCount)> by_kind_{};
    std::vector<std::uint64_t> hops_;
    RunReport report_;
};

// --- serialization -------------------------------------------------------

// RFC 4180 field quoting (only when needed).
std::string csv_quote(const std::string& field);

std::string run_csv_header(bool with_rate);
std::string run_csv_row(const RunReport& r, std::optional<double> rate);
nlohmann::json to_json(const RunReport& r);

struct SweepPoint {
    double rate = 0; // fluctuation rate knob, events per peer per hour
    int runs = 0;
    double mean_success = 0;
    double ci_half = 0;
    double mean_maintenance_share = 0;
    bool flagged = false; // population extinction in at least one run
};

struct SweepResult {
    double floor = 0.9;
    std::vector<SweepPoint> points; // sorted by rate
    std::optional<double> knee;     // smallest rate with mean success < floor
};

SweepResult aggregate_sweep(const std::vector<std::pair<double, std::vector<RunReport>>>& by_rate,
                            double floor);

std::string sweep_csv(const SweepResult& s);
nlohmann::json to_json(const SweepResult& s);

} // namespace fluctsim
