#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "fluctsim/runner.hpp"

using namespace fluctsim;

int main(int argc, char** argv) {
    CLI::App app{"Discrete-event simulator of a tree-based DHT under peer fluctuation"};
    app.require_subcommand(1);

    std::string scenario_path, out_dir, out_file, trace_path;
    std::optional<std::uint64_t> seed_override;
    std::vector<double> rates;
    bool check_invariants = false;
    SweepOptions sweep_opts;
    int jobs = 0;

    CLI::App* run = app.add_subcommand("run", "Run one scenario and write its report");
    run->add_option("scenario", scenario_path, "scenario file")->required();
    run->add_option("-o,--out", out_dir, "output directory")->required();
    run->add_option("--seed", seed_override, "override the scenario seed");
    run->add_option("--trace", trace_path, "replay a churn trace instead of generating one");
    run->add_flag("--check-invariants", check_invariants,
                  "verify partition/responsibility invariants after every split and coalesce");

    CLI::App* sweep = app.add_subcommand("sweep", "Sweep fluctuation rates, find the knee");
    sweep->add_option("scenario", scenario_path, "scenario file")->required();
    sweep->add_option("--rates", rates, "fluctuation rates, events per peer per hour")
        ->required()
        ->delimiter(',');
    sweep->add_option("-o,--out", out_dir, "output directory")->required();
    sweep->add_option("--seeds", sweep_opts.seeds_per_rate, "seeds per rate")
        ->capture_default_str();
    sweep->add_option("--floor", sweep_opts.floor, "success-rate floor defining the knee")
        ->capture_default_str();
    sweep->add_option("--jobs", jobs, "parallel runs (0 = hardware)");
    sweep->add_option("--seed", seed_override, "override the scenario seed");

    CLI::App* trace = app.add_subcommand("trace", "Generate a churn trace for later replay");
    trace->add_option("scenario", scenario_path, "scenario file")->required();
    trace->add_option("-o,--out", out_file, "output trace file")->required();
    trace->add_option("--seed", seed_override, "override the scenario seed");

    CLI11_PARSE(app, argc, argv);

    try {
        Scenario s = load_scenario(scenario_path);
        if (seed_override) s.seed = *seed_override;

        if (app.got_subcommand(run)) {
            RunOptions opts;
            opts.invariant_checks = check_invariants;
            ChurnTrace replay;
            if (!trace_path.empty()) {
                replay = read_trace_file(trace_path);
                opts.replay = &replay;
            }
            return cmd_run(s, out_dir, opts);
        }
        if (app.got_subcommand(sweep)) {
            sweep_opts.jobs = jobs;
            return cmd_sweep(s, rates, out_dir, sweep_opts);
        }
        return cmd_trace(s, out_file);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
