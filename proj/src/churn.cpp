#include "fluctsim/churn.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

namespace fluctsim {

namespace {
constexpr double kSecondsPerHour = 3600.0;
constexpr double kSecondsPerMinute = 60.0;
} // namespace

void validate(const ChurnModel& m) {
    if (m.base_rate_per_h < 0)
        throw std::invalid_argument("churn.base_rate_per_h: must be >= 0");
    if (m.diurnal_amplitude < 0 || m.diurnal_amplitude >= 1)
        throw std::invalid_argument("churn.diurnal_amplitude: must be in [0, 1)");
    if (m.period_h <= 0)
        throw std::invalid_argument("churn.period_h: must be > 0");
    if (m.session_mean_min <= 0)
        throw std::invalid_argument("churn.session_mean_min: must be > 0");
    if (m.pareto_shape <= 0)
        throw std::invalid_argument("churn.pareto_shape: must be > 0");
    if (m.pareto_scale_min <= 0)
        throw std::invalid_argument("churn.pareto_scale_min: must be > 0");
    if (m.crash_fraction < 0 || m.crash_fraction > 1)
        throw std::invalid_argument("churn.crash_fraction: must be in [0, 1]");
}

double rate_at(const ChurnModel& m, double t_s) {
    double base = m.base_rate_per_h / kSecondsPerHour;
    double phase = 2.0 * std::numbers::pi * t_s / (m.period_h * kSecondsPerHour);
    return base * (1.0 + m.diurnal_amplitude * std::sin(phase));
}

std::vector<double> sample_arrivals(const ChurnModel& m, double horizon_s, Rng& rng) {
    if (horizon_s <= 0) throw std::invalid_argument("sample_arrivals: horizon must be > 0");
    std::vector<double> times;
    if (m.base_rate_per_h == 0) return times;
    const double peak = (m.base_rate_per_h / kSecondsPerHour) * (1.0 + m.diurnal_amplitude);
    double t = 0;
    while (true) {
        t += rng.exponential(1.0 / peak);
        if (t >= horizon_s) break;
        if (rng.uniform01() * peak < rate_at(m, t)) times.push_back(t);
    }
    return times;
}

double sample_session_s(const ChurnModel& m, Rng& rng) {
    switch (m.session_dist) {
    case SessionDist::Exponential:
        return rng.exponential(m.session_mean_min * kSecondsPerMinute);
    case SessionDist::Pareto: {
        double u = 1.0 - rng.uniform01(); // in (0, 1]
        return m.pareto_scale_min * kSecondsPerMinute * std::pow(u, -1.0 / m.pareto_shape);
    }
    }
    throw std::logic_error("sample_session_s: unknown distribution");
}

ChurnTrace generate_trace(const ChurnModel& m, double horizon_s,
                          std::uint64_t first_peer_id, Rng& rng) {
    ChurnTrace trace;
    std::uint64_t next_id = first_peer_id;
    for (double t_join : sample_arrivals(m, horizon_s, rng)) {
        std::uint64_t id = next_id++;
        double session = std::min(sample_session_s(m, rng), horizon_s);
        bool crash = rng.bernoulli(m.crash_fraction);
        trace.events.push_back({t_join, id, ChurnAction::Join});
        double t_leave = t_join + session;
        if (t_leave < horizon_s)
            trace.events.push_back({t_leave, id, crash ? ChurnAction::Crash : ChurnAction::Leave});
    }
    std::stable_sort(trace.events.begin(), trace.events.end(),
                     [](const TraceEvent& a, const TraceEvent& b) { return a.time < b.time; });
    return trace;
}

std::vector<RatePoint> fluctuation_rate(const ChurnTrace& trace, double window_s,
                                        std::size_t base_population) {
    if (window_s <= 0) throw std::invalid_argument("fluctuation_rate: window must be > 0");
    std::vector<RatePoint> series;
    if (trace.events.empty()) return series;
    const double t_end = trace.events.back().time;
    std::size_t n_windows = static_cast<std::size_t>(t_end / window_s) + 1;
    series.resize(n_windows);
    for (std::size_t w = 0; w < n_windows; ++w) {
        series[w].t_start = static_cast<double>(w) * window_s;
        series[w].t_end = series[w].t_start + window_s;
    }
    // single pass: count events and integrate the live population
    double population = static_cast<double>(base_population);
    double prev_t = 0;
    std::size_t w = 0;
    auto integrate_to = [&](double t) {
        while (w < n_windows && t > series[w].t_end) {
            series[w].mean_population += population * (series[w].t_end - prev_t);
            prev_t = series[w].t_end;
            ++w;
        }
        if (w < n_windows) {
            series[w].mean_population += population * (t - prev_t);
            prev_t = t;
        }
    };
    for (const TraceEvent& ev : trace.events) {
        integrate_to(ev.time);
        std::size_t wi = std::min(n_windows - 1, static_cast<std::size_t>(ev.time / window_s));
        series[wi].events += 1;
        population += ev.action == ChurnAction::Join ? 1.0 : -1.0;
    }
    integrate_to(static_cast<double>(n_windows) * window_s);
    for (RatePoint& p : series) {
        p.mean_population /= window_s;
        p.rate_abs_per_s = p.events / window_s;
        p.rate_per_peer_s = p.mean_population > 0 ? p.rate_abs_per_s / p.mean_population : 0;
    }
    return series;
}

void validate_trace(const ChurnTrace& trace) {
    double prev_time = -std::numeric_limits<double>::infinity();
    std::unordered_map<std::uint64_t, bool> alive; // id -> currently joined
    for (std::size_t i = 0; i < trace.events.size(); ++i) {
        const TraceEvent& ev = trace.events[i];
        if (ev.time < prev_time)
            throw std::runtime_error("trace event " + std::to_string(i + 1) + ": times not ordered");
        prev_time = ev.time;
        bool joining = ev.action == ChurnAction::Join;
        auto it = alive.find(ev.peer_id);
        bool was_alive = it != alive.end() && it->second;
        if (joining && was_alive)
            throw std::runtime_error("trace event " + std::to_string(i + 1) + ": peer " +
                                     std::to_string(ev.peer_id) + " joins twice");
        if (!joining && !was_alive)
            throw std::runtime_error("trace event " + std::to_string(i + 1) + ": peer " +
                                     std::to_string(ev.peer_id) + " departs without joining");
        alive[ev.peer_id] = joining;
    }
}

const char* to_string(ChurnAction a) {
    switch (a) {
    case ChurnAction::Join: return "join";
    case ChurnAction::Leave: return "leave";
    case ChurnAction::Crash: return "crash";
    }
    return "?";
}

void write_trace(const ChurnTrace& trace, std::ostream& out) {
    char buf[64];
    for (const TraceEvent& ev : trace.events) {
        std::snprintf(buf, sizeof buf, "%.17g", ev.time);
        out << buf << '\t' << ev.peer_id << '\t' << to_string(ev.action) << '\n';
    }
}

ChurnTrace read_trace(std::istream& in) {
    ChurnTrace trace;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        double t;
        std::uint64_t id;
        std::string action;
        if (!(ls >> t >> id >> action))
            throw std::runtime_error("trace line " + std::to_string(lineno) + ": expected 'time<TAB>peer_id<TAB>action'");
        ChurnAction a;
        if (action == "join") a = ChurnAction::Join;
        else if (action == "leave") a = ChurnAction::Leave;
        else if (action == "crash") a = ChurnAction::Crash;
        else
            throw std::runtime_error("trace line " + std::to_string(lineno) + ": unknown action '" + action + "'");
        trace.events.push_back({t, id, a});
    }
    validate_trace(trace);
    return trace;
}

void write_trace_file(const ChurnTrace& trace, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open trace file for writing: " + path);
    write_trace(trace, out);
}

ChurnTrace read_trace_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open trace file: " + path);
    return read_trace(in);
}

} // namespace fluctsim
