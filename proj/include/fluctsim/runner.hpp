#pragma once

#include <string>
#include <vector>

#include "fluctsim/metrics.hpp"
#include "fluctsim/scenario.hpp"

namespace fluctsim {

struct RunOptions {
    bool invariant_checks = false;
    const ChurnTrace* replay = nullptr; // nullptr = generate from the churn model
};

struct RunResult {
    RunReport report;
    ChurnTrace trace; // the churn workload actually applied
};

// One deterministic simulation: output is a pure function of (scenario, seed).
RunResult run_scenario(const Scenario& s, const RunOptions& opts = {});

// Derives a scenario whose normalized fluctuation rate (join+depart events
// per peer per hour) targets `rate`, holding the stationary population near
// bootstrap_peers: mean session 2/rate hours, arrivals bootstrap*rate/2 per hour.
Scenario scenario_for_rate(const Scenario& base, double rate);

struct SweepOptions {
    int seeds_per_rate = 3;
    double floor = 0.9; // success-rate floor defining the knee
    int jobs = 0;       // 0 = hardware concurrency
};

struct SweepRunResult {
    SweepResult sweep;
    std::vector<std::pair<double, RunReport>> runs; // (rate, report), run order
};

SweepRunResult run_sweep(const Scenario& base, const std::vector<double>& rates,
                         const SweepOptions& opts);

// Command implementations behind the CLI. Write outputs, print a summary
// line, return a process exit code.
int cmd_run(const Scenario& s, const std::string& out_dir, const RunOptions& opts = {});
int cmd_sweep(const Scenario& s, const std::vector<double>& rates, const std::string& out_dir,
              const SweepOptions& opts = {});
int cmd_trace(const Scenario& s, const std::string& out_path);

std::string summary_line(const RunReport& r);

} // namespace fluctsim
