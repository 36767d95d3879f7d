#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "fluctsim/keyspace.hpp"
#include "fluctsim/routing.hpp"
#include "fluctsim/runner.hpp"

namespace py = pybind11;
using namespace fluctsim;

namespace {

Scenario scenario_from(const std::string& text, const py::object& seed) {
    Scenario s = text.empty() ? Scenario{} : parse_scenario(text);
    if (!seed.is_none()) s.seed = seed.cast<std::uint64_t>();
    return s;
}

} // namespace

PYBIND11_MODULE(_fluctsim, m) {
    m.doc() = "Tree-based DHT fluctuation simulator (C++ core)";

    m.def(
        "default_scenario", [] { return serialize_scenario(Scenario{}); },
        "Canonical scenario text with every default resolved.");

    m.def(
        "run_json",
        [](const std::string& scenario_text, const py::object& seed, const std::string& trace,
           bool check_invariants, bool include_trace) {
            Scenario s = scenario_from(scenario_text, seed);
            RunOptions opts;
            opts.invariant_checks = check_invariants;
            ChurnTrace replay;
            if (!trace.empty()) {
                std::istringstream in(trace);
                replay = read_trace(in);
                opts.replay = &replay;
            }
            RunResult r = run_scenario(s, opts);
            nlohmann::json j;
            j["report"] = to_json(r.report);
            j["summary"] = summary_line(r.report);
            j["scenario"] = serialize_scenario(s);
            if (include_trace) {
                std::ostringstream out;
                write_trace(r.trace, out);
                j["trace"] = out.str();
            }
            return j.dump();
        },
        py::arg("scenario_text") = "", py::arg("seed") = py::none(), py::arg("trace") = "",
        py::arg("check_invariants") = false, py::arg("include_trace") = false,
        "Run one scenario, return the report as a JSON string.");

    m.def(
        "sweep_json",
        [](const std::string& scenario_text, const std::vector<double>& rates, int seeds_per_rate,
           double floor, int jobs, const py::object& seed) {
            Scenario s = scenario_from(scenario_text, seed);
            SweepOptions opts;
            opts.seeds_per_rate = seeds_per_rate;
            opts.floor = floor;
            opts.jobs = jobs;
            SweepRunResult r = run_sweep(s, rates, opts);
            nlohmann::json j;
            j["sweep"] = to_json(r.sweep);
            nlohmann::json runs = nlohmann::json::array();
            for (const auto& [rate, report] : r.runs) {
                nlohmann::json jr = to_json(report);
                jr["rate"] = rate;
                runs.push_back(std::move(jr));
            }
            j["runs"] = std::move(runs);
            return j.dump();
        },
        py::arg("scenario_text") = "", py::arg("rates") = std::vector<double>{},
        py::arg("seeds_per_rate") = 3, py::arg("floor") = 0.9, py::arg("jobs") = 0,
        py::arg("seed") = py::none(),
        "Sweep fluctuation rates, return aggregated points and the knee as JSON.");

    m.def(
        "make_trace",
        [](const std::string& scenario_text, const py::object& seed) {
            Scenario s = scenario_from(scenario_text, seed);
            validate_scenario(s);
            double horizon_s = (s.quiesce_at_h ? *s.quiesce_at_h : s.horizon_h) * 3600.0;
            Rng rng(mix_seed(s.seed ^ 0x636875726eULL));
            ChurnTrace t = generate_trace(s.churn, horizon_s,
                                          static_cast<std::uint64_t>(s.bootstrap_peers) + 1, rng);
            std::ostringstream out;
            write_trace(t, out);
            return out.str();
        },
        py::arg("scenario_text") = "", py::arg("seed") = py::none(),
        "Generate a churn trace in the replayable text format.");

    // keyspace and backup primitives, mostly for quick experiments
    m.def(
        "key_of_datum",
        [](const py::bytes& datum, int l_bits) {
            std::string d = datum;
            return key_of_datum(d, KeyspaceConfig{l_bits}).value;
        },
        py::arg("datum"), py::arg("l_bits") = 16);
    m.def("backup_size", &backup_size, py::arg("q_f_est"), py::arg("epsilon"),
          py::arg("b_max") = 8);
    m.def(
        "split_interval",
        [](const std::string& label, int l_bits) {
            auto [l, r] = split(interval_from_label(label), KeyspaceConfig{l_bits});
            return std::make_pair(to_string(l), to_string(r));
        },
        py::arg("label"), py::arg("l_bits") = 16);
    m.def(
        "coalesce_intervals",
        [](const std::string& left, const std::string& right) {
            return to_string(coalesce(interval_from_label(left), interval_from_label(right)));
        },
        py::arg("left"), py::arg("right"));
    m.def(
        "interval_contains",
        [](const std::string& label, std::uint64_t key, int l_bits) {
            return contains(interval_from_label(label), Key{key}, KeyspaceConfig{l_bits});
        },
        py::arg("label"), py::arg("key"), py::arg("l_bits") = 16);
}
