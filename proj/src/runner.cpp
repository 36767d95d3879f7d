#include "fluctsim/runner.hpp"

#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include "fluctsim/protocol.hpp"

namespace fluctsim {

namespace {

constexpr std::uint64_t kChurnStream = 0x636875726eULL; // "churn"
constexpr std::uint64_t kNetStream = 0x6e6574ULL;       // "net"

double churn_horizon_s(const Scenario& s) {
    double horizon = s.horizon_h * 3600.0;
    return s.quiesce_at_h ? std::min(*s.quiesce_at_h * 3600.0, horizon) : horizon;
}

ChurnTrace generate_run_trace(const Scenario& s) {
    Rng churn_rng(mix_seed(s.seed ^ kChurnStream));
    return generate_trace(s.churn, churn_horizon_s(s),
                          static_cast<std::uint64_t>(s.bootstrap_peers) + 1, churn_rng);
}

void write_file(const std::filesystem::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << content;
}

} // namespace

RunResult run_scenario(const Scenario& s, const RunOptions& opts) {
    validate_scenario(s);
    const double horizon_s = s.horizon_h * 3600.0;

    Simulator sim;
    Rng net_rng(mix_seed(s.seed ^ kNetStream));
    Network net(sim, s.network, net_rng);
    MetricsCollector metrics;
    metrics.run_started(0, horizon_s);

    OverlayParams op;
    op.keyspace = s.keyspace;
    op.protocol = s.protocol;
    op.backup = s.backup;
    op.workload = s.workload;
    op.bootstrap_peers = s.bootstrap_peers;
    op.initial_data = s.initial_data;
    op.horizon_s = horizon_s;
    if (s.quiesce_at_h) op.quiesce_at_s = *s.quiesce_at_h * 3600.0;

    Overlay overlay(sim, net, metrics, op, s.seed);
    overlay.set_invariant_checks(opts.invariant_checks);
    overlay.bootstrap();

    RunResult result;
    result.trace = opts.replay ? *opts.replay : generate_run_trace(s);
    overlay.apply_trace(result.trace);
    overlay.start_workload();

    sim.run_until(horizon_s);
    overlay.finish(horizon_s);
    result.report = metrics.finalize(horizon_s);
    result.report.seed = s.seed;
    result.report.digest = s.digest;
    return result;
}

Scenario scenario_for_rate(const Scenario& base, double rate) {
    if (rate < 0) throw std::invalid_argument("sweep rate: must be >= 0");
    Scenario s = base;
    if (rate == 0) {
        s.churn.base_rate_per_h = 0;
        return s;
    }
    s.churn.session_mean_min = 120.0 / rate; // 2/rate hours
    s.churn.base_rate_per_h = static_cast<double>(base.bootstrap_peers) * rate / 2.0;
    return s;
}

SweepRunResult run_sweep(const Scenario& base, const std::vector<double>& rates,
                         const SweepOptions& opts) {
    if (rates.empty()) throw std::invalid_argument("sweep: need at least one rate");
    for (std::size_t i = 1; i < rates.size(); ++i)
        if (rates[i] <= rates[i - 1])
            throw std::invalid_argument("sweep: rates must be strictly ascending");
    if (opts.seeds_per_rate < 1) throw std::invalid_argument("sweep: seeds_per_rate must be >= 1");

    struct Task {
        double rate;
        Scenario scenario;
    };
    std::vector<Task> tasks;
    for (double rate : rates)
        for (int i = 0; i < opts.seeds_per_rate; ++i) {
            Task t{rate, scenario_for_rate(base, rate)};
            t.scenario.seed = base.seed + static_cast<std::uint64_t>(i);
            tasks.push_back(std::move(t));
        }

    std::vector<RunReport> reports(tasks.size());
    unsigned jobs = opts.jobs > 0 ? static_cast<unsigned>(opts.jobs)
                                  : std::max(1u, std::thread::hardware_concurrency());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        while (true) {
            std::size_t i = next.fetch_add(1);
            if (i >= tasks.size()) return;
            reports[i] = run_scenario(tasks[i].scenario).report;
        }
    };
    if (jobs <= 1 || tasks.size() <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (unsigned j = 0; j < std::min<std::size_t>(jobs, tasks.size()); ++j)
            pool.emplace_back(worker);
        for (std::thread& t : pool) t.join();
    }

    SweepRunResult out;
    std::vector<std::pair<double, std::vector<RunReport>>> by_rate;
    std::size_t idx = 0;
    for (double rate : rates) {
        std::vector<RunReport> rs;
        for (int i = 0; i < opts.seeds_per_rate; ++i, ++idx) {
            rs.push_back(reports[idx]);
            out.runs.emplace_back(rate, reports[idx]);
        }
        by_rate.emplace_back(rate, std::move(rs));
    }
    out.sweep = aggregate_sweep(by_rate, opts.floor);
    return out;
}

std::string summary_line(const RunReport& r) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "success_rate=%.4f mean_hops=%.2f maintenance_share=%.4f",
                  r.lookup_success_rate, r.mean_hops, r.maintenance_share);
    return buf;
}

int cmd_run(const Scenario& s, const std::string& out_dir, const RunOptions& opts) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    RunResult r = run_scenario(s, opts);

    write_file(fs::path(out_dir) / "scenario.txt", serialize_scenario(s));
    write_file(fs::path(out_dir) / "report.csv",
               run_csv_header(false) + "\n" + run_csv_row(r.report, std::nullopt) + "\n");
    write_file(fs::path(out_dir) / "report.json", to_json(r.report).dump(2) + "\n");
    {
        std::ofstream out(fs::path(out_dir) / "trace.tsv", std::ios::binary);
        write_trace(r.trace, out);
    }
    std::cout << summary_line(r.report) << "\n";
    return 0;
}

int cmd_sweep(const Scenario& s, const std::vector<double>& rates, const std::string& out_dir,
              const SweepOptions& opts) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    SweepRunResult r = run_sweep(s, rates, opts);

    write_file(fs::path(out_dir) / "scenario.txt", serialize_scenario(s));
    std::ostringstream runs_csv;
    runs_csv << run_csv_header(true) << "\n";
    for (const auto& [rate, report] : r.runs) runs_csv << run_csv_row(report, rate) << "\n";
    write_file(fs::path(out_dir) / "runs.csv", runs_csv.str());
    write_file(fs::path(out_dir) / "sweep.csv", sweep_csv(r.sweep));
    write_file(fs::path(out_dir) / "sweep.json", to_json(r.sweep).dump(2) + "\n");

    std::ostringstream line;
    line << "points=" << r.sweep.points.size() << " runs=" << r.runs.size() << " knee_rate=";
    if (r.sweep.knee) line << *r.sweep.knee;
    else line << "none";
    std::cout << line.str() << "\n";
    return 0;
}

int cmd_trace(const Scenario& s, const std::string& out_path) {
    ChurnTrace trace = generate_run_trace(s);
    write_trace_file(trace, out_path);
    std::cout << "events=" << trace.events.size() << " horizon_s=" << churn_horizon_s(s) << "\n";
    return 0;
}

} // namespace fluctsim
