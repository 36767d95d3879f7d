#include "fluctsim/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

#include "fluctsim/stats.hpp"

namespace fluctsim {

const char* to_string(MsgKind kind) {
    switch (kind) {
    case MsgKind::Query: return "query";
    case MsgKind::Answer: return "answer";
    case MsgKind::Advice: return "advice";
    case MsgKind::FailureNotice: return "failure_notice";
    case MsgKind::Probe: return "probe";
    case MsgKind::ProbeReply: return "probe_reply";
    case MsgKind::Ping: return "ping";
    case MsgKind::PingReply: return "ping_reply";
    case MsgKind::LeaveNotice: return "leave_notice";
    case MsgKind::EvictNotice: return "evict_notice";
    case MsgKind::RepairLookup: return "repair_lookup";
    case MsgKind::LinkHandshake: return "link_handshake";
    case MsgKind::JoinRequest: return "join_request";
    case MsgKind::JoinTransferItem: return "join_transfer_item";
    case MsgKind::SplitLink: return "split_link";
    case MsgKind::CoalesceReplItem: return "coalesce_repl_item";
    case MsgKind::AntiEntropySummary: return "anti_entropy_summary";
    case MsgKind::AntiEntropyItem: return "anti_entropy_item";
    case MsgKind::StoreWrite: return "store_write";
    case MsgKind::kCount: break;
    }
    return "?";
}

bool is_maintenance(MsgKind kind) {
    switch (kind) {
    case MsgKind::Query:
    case MsgKind::Answer:
    case MsgKind::Advice:
    case MsgKind::FailureNotice:
        return false;
    default:
        return true;
    }
}

void MetricsCollector::run_started(double t0, double horizon_s) {
    if (running_) throw std::logic_error("metrics: run already started");
    running_ = true;
    t0_ = t0;
    horizon_s_ = horizon_s;
    sample_dt_ = horizon_s / 512.0;
    last_pop_t_ = t0;
}

void MetricsCollector::require_running() const {
    if (!running_ || finalized_) throw std::logic_error("metrics: record outside of a run");
}

void MetricsCollector::message(MsgKind kind, std::uint64_t n) {
    require_running();
    by_kind_[static_cast<std::size_t>(kind)] += n;
    if (is_maintenance(kind)) report_.maintenance_msgs += n;
    else report_.data_op_msgs += n;
}

void MetricsCollector::query_issued(QueryKind kind) {
    require_running();
    ++report_.queries_issued;
    if (kind == QueryKind::Lookup) ++report_.lookups_issued;
}

void MetricsCollector::lookup_resolved(bool found, int hops) {
    require_running();
    if (found) ++report_.lookups_found;
    else ++report_.lookups_notfound;
    hops_.push_back(static_cast<std::uint64_t>(hops));
}

void MetricsCollector::write_applied() {
    require_running();
    ++report_.writes_applied;
}

void MetricsCollector::query_failed() {
    require_running();
    ++report_.failed_queries;
}

void MetricsCollector::query_unresolved() {
    require_running();
    ++report_.unresolved_queries;
}

void MetricsCollector::reissue(bool original_alive) {
    require_running();
    ++report_.reissues;
    if (original_alive) ++report_.duplicate_queries;
}

void MetricsCollector::duplicate_answer() {
    require_running();
    ++report_.duplicate_answers;
}

void MetricsCollector::split() {
    require_running();
    ++report_.splits;
}

void MetricsCollector::coalesce() {
    require_running();
    ++report_.coalesces;
}

void MetricsCollector::extinction() {
    require_running();
    ++report_.extinctions;
}

void MetricsCollector::churn_event() {
    require_running();
    ++report_.churn_events;
}

void MetricsCollector::topology(std::uint64_t leaves, std::uint64_t max_depth) {
    require_running();
    report_.leaf_count = leaves;
    report_.max_leaf_depth = max_depth;
}

void MetricsCollector::population(double t, std::uint64_t n) {
    require_running();
    pop_integral_ += static_cast<double>(last_pop_) * (t - last_pop_t_);
    last_pop_t_ = t;
    last_pop_ = n;
    if (report_.population_series.empty() || t - last_sample_t_ >= sample_dt_) {
        report_.population_series.emplace_back(t, n);
        last_sample_t_ = t;
    }
}

void MetricsCollector::degraded_time(double dt) {
    require_running();
    report_.degraded_interval_time_s += dt;
}

void MetricsCollector::convergence(double quiesce_t, double converged_t) {
    require_running();
    report_.convergence_time_s = converged_t - quiesce_t;
}

void MetricsCollector::pending_at_end(std::uint64_t n) {
    require_running();
    report_.pending_at_end = n;
}

RunReport MetricsCollector::finalize(double t_end) {
    if (!running_) throw std::logic_error("metrics: finalize before the run started");
    if (finalized_) throw std::logic_error("metrics: finalize called twice");
    finalized_ = true;

    pop_integral_ += static_cast<double>(last_pop_) * (t_end - last_pop_t_);
    report_.population_series.emplace_back(t_end, last_pop_);
    report_.population_end = last_pop_;
    double span = t_end - t0_;
    report_.population_mean = span > 0 ? pop_integral_ / span : static_cast<double>(last_pop_);
    report_.horizon_s = span;

    report_.lookup_success_rate =
        report_.lookups_issued ? static_cast<double>(report_.lookups_found) /
                                     static_cast<double>(report_.lookups_issued)
                               : 0.0;

    if (!hops_.empty()) {
        report_.max_hops = *std::max_element(hops_.begin(), hops_.end());
        report_.hop_histogram.assign(report_.max_hops + 1, 0);
        double sum = 0;
        for (std::uint64_t h : hops_) {
            ++report_.hop_histogram[h];
            sum += static_cast<double>(h);
        }
        report_.mean_hops = sum / static_cast<double>(hops_.size());
    }

    std::uint64_t total = report_.maintenance_msgs + report_.data_op_msgs;
    report_.maintenance_share =
        total ? static_cast<double>(report_.maintenance_msgs) / static_cast<double>(total) : 0.0;
    double peer_hours = report_.population_mean * span / 3600.0;
    report_.maintenance_per_peer_per_h =
        peer_hours > 0 ? static_cast<double>(report_.maintenance_msgs) / peer_hours : 0.0;
    report_.fluctuation_events_per_peer_h =
        peer_hours > 0 ? static_cast<double>(report_.churn_events) / peer_hours : 0.0;

    for (std::size_t i = 0; i < by_kind_.size(); ++i)
        if (by_kind_[i])
            report_.msgs_by_kind[to_string(static_cast<MsgKind>(i))] = by_kind_[i];
    return report_;
}

// --- serialization -------------------------------------------------------

namespace {

std::string fmt_g(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string histogram_field(const std::vector<std::uint64_t>& h) {
    std::string s;
    for (std::size_t i = 0; i < h.size(); ++i) {
        if (!h[i]) continue;
        if (!s.empty()) s += ';';
        s += std::to_string(i) + ":" + std::to_string(h[i]);
    }
    return s;
}

} // namespace

std::string csv_quote(const std::string& field) {
    if (field.find_first_of(",\"\r\n") == std::string::npos) return field;
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') out += "\"\"";
        else out += c;
    }
    out += '"';
    return out;
}

std::string run_csv_header(bool with_rate) {
    std::string h = with_rate ? "rate," : "";
    h += "seed,horizon_s,digest,population_mean,population_end,"
         "lookups_issued,lookups_found,lookups_notfound,lookup_success_rate,mean_hops,max_hops,"
         "hop_histogram,queries_issued,writes_applied,failed_queries,unresolved_queries,"
         "pending_at_end,duplicate_queries,duplicate_answers,reissues,"
         "maintenance_msgs,data_op_msgs,maintenance_share,maintenance_per_peer_per_h,"
         "splits,coalesces,leaf_count,max_leaf_depth,extinctions,churn_events,fluctuation_events_per_peer_h,"
         "degraded_interval_time_s,convergence_time_s";
    return h;
}

std::string run_csv_row(const RunReport& r, std::optional<double> rate) {
    std::ostringstream o;
    if (rate) o << fmt_g(*rate) << ',';
    o << r.seed << ',' << fmt_g(r.horizon_s) << ',' << csv_quote(r.digest) << ','
      << fmt_g(r.population_mean) << ',' << r.population_end << ',' << r.lookups_issued << ','
      << r.lookups_found << ',' << r.lookups_notfound << ',' << fmt_g(r.lookup_success_rate)
      << ',' << fmt_g(r.mean_hops) << ',' << r.max_hops << ','
      << csv_quote(histogram_field(r.hop_histogram)) << ',' << r.queries_issued << ','
      << r.writes_applied << ',' << r.failed_queries << ',' << r.unresolved_queries << ','
      << r.pending_at_end << ',' << r.duplicate_queries << ',' << r.duplicate_answers << ','
      << r.reissues << ',' << r.maintenance_msgs << ',' << r.data_op_msgs << ','
      << fmt_g(r.maintenance_share) << ',' << fmt_g(r.maintenance_per_peer_per_h) << ','
      << r.splits << ',' << r.coalesces << ',' << r.leaf_count << ',' << r.max_leaf_depth
      << ',' << r.extinctions << ',' << r.churn_events << ','
      << fmt_g(r.fluctuation_events_per_peer_h) << ',' << fmt_g(r.degraded_interval_time_s)
      << ',' << (r.convergence_time_s ? fmt_g(*r.convergence_time_s) : "");
    return o.str();
}

nlohmann::json to_json(const RunReport& r) {
    nlohmann::json j;
    j["seed"] = r.seed;
    j["horizon_s"] = r.horizon_s;
    j["digest"] = r.digest;
    j["lookups"] = {{"issued", r.lookups_issued},
                    {"found", r.lookups_found},
                    {"notfound", r.lookups_notfound},
                    {"success_rate", r.lookup_success_rate},
                    {"mean_hops", r.mean_hops},
                    {"max_hops", r.max_hops},
                    {"hop_histogram", r.hop_histogram}};
    j["queries"] = {{"issued", r.queries_issued},
                    {"writes_applied", r.writes_applied},
                    {"failed", r.failed_queries},
                    {"unresolved", r.unresolved_queries},
                    {"pending_at_end", r.pending_at_end},
                    {"duplicate_queries", r.duplicate_queries},
                    {"duplicate_answers", r.duplicate_answers},
                    {"reissues", r.reissues}};
    j["traffic"] = {{"maintenance_msgs", r.maintenance_msgs},
                    {"data_op_msgs", r.data_op_msgs},
                    {"maintenance_share", r.maintenance_share},
                    {"maintenance_per_peer_per_h", r.maintenance_per_peer_per_h},
                    {"by_kind", r.msgs_by_kind}};
    j["topology"] = {{"splits", r.splits},
                     {"coalesces", r.coalesces},
                     {"leaf_count", r.leaf_count},
                     {"max_leaf_depth", r.max_leaf_depth},
                     {"extinctions", r.extinctions},
                     {"degraded_interval_time_s", r.degraded_interval_time_s}};
    j["population"] = {{"mean", r.population_mean},
                       {"end", r.population_end},
                       {"churn_events", r.churn_events},
                       {"fluctuation_events_per_peer_h", r.fluctuation_events_per_peer_h},
                       {"series", r.population_series}};
    if (r.convergence_time_s) j["convergence_time_s"] = *r.convergence_time_s;
    else j["convergence_time_s"] = nullptr;
    return j;
}

SweepResult aggregate_sweep(const std::vector<std::pair<double, std::vector<RunReport>>>& by_rate,
                            double floor) {
    SweepResult result;
    result.floor = floor;
    for (const auto& [rate, reports] : by_rate) {
        SweepPoint p;
        p.rate = rate;
        p.runs = static_cast<int>(reports.size());
        std::vector<double> success, share;
        for (const RunReport& r : reports) {
            success.push_back(r.lookup_success_rate);
            share.push_back(r.maintenance_share);
            if (r.population_end == 0 || r.extinctions > 0) p.flagged = true;
        }
        p.mean_success = mean(success);
        p.ci_half = ci_half_95(success);
        p.mean_maintenance_share = mean(share);
        result.points.push_back(p);
    }
    std::sort(result.points.begin(), result.points.end(),
              [](const SweepPoint& a, const SweepPoint& b) { return a.rate < b.rate; });
    for (const SweepPoint& p : result.points)
        if (!p.flagged && p.mean_success < floor) {
            result.knee = p.rate;
            break;
        }
    return result;
}

std::string sweep_csv(const SweepResult& s) {
    std::ostringstream o;
    o << "rate,runs,mean_success,ci_half_95,mean_maintenance_share,flagged\n";
    for (const SweepPoint& p : s.points)
        o << fmt_g(p.rate) << ',' << p.runs << ',' << fmt_g(p.mean_success) << ','
          << fmt_g(p.ci_half) << ',' << fmt_g(p.mean_maintenance_share) << ','
          << (p.flagged ? 1 : 0) << '\n';
    return o.str();
}

nlohmann::json to_json(const SweepResult& s) {
    nlohmann::json points = nlohmann::json::array();
    for (const SweepPoint& p : s.points)
        points.push_back({{"rate", p.rate},
                          {"runs", p.runs},
                          {"mean_success", p.mean_success},
                          {"ci_half_95", p.ci_half},
                          {"mean_maintenance_share", p.mean_maintenance_share},
                          {"flagged", p.flagged}});
    nlohmann::json j;
    j["floor"] = s.floor;
    j["points"] = points;
    if (s.knee) j["knee_rate"] = *s.knee;
    else j["knee_rate"] = nullptr;
    return j;
}

} // namespace fluctsim
