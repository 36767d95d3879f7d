#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "fluctsim/churn.hpp"

using namespace fluctsim;

TEST_CASE("homogeneous arrivals hit the expected count") {
    ChurnModel m;
    m.base_rate_per_h = 600;
    m.diurnal_amplitude = 0;
    Rng rng(42);
    double horizon = 10 * 3600.0;
    auto times = sample_arrivals(m, horizon, rng);
    double expected = 6000;
    double sigma = std::sqrt(expected);
    CHECK(std::abs(static_cast<double>(times.size()) - expected) < 3 * sigma);
    CHECK(std::is_sorted(times.begin(), times.end()));
    CHECK(times.back() < horizon);
}

TEST_CASE("diurnal thinning reproduces the sinusoid") {
    ChurnModel m;
    m.base_rate_per_h = 600;
    m.diurnal_amplitude = 0.8;
    m.period_h = 24;
    Rng rng(7);
    const double horizon = 7 * 24 * 3600.0; // whole periods only
    auto times = sample_arrivals(m, horizon, rng);
    CHECK(times.size() > 90000);

    const int bins = 24;
    const double period_s = 24 * 3600.0;
    std::vector<double> counts(bins, 0);
    for (double t : times) {
        double phase = std::fmod(t, period_s) / period_s;
        ++counts[static_cast<std::size_t>(phase * bins)];
    }
    for (int i = 0; i < bins; ++i) {
        // expected count: integral of the rate over the bin, 7 periods
        double a = static_cast<double>(i) / bins * period_s;
        double b = static_cast<double>(i + 1) / bins * period_s;
        double base = m.base_rate_per_h / 3600.0;
        double w = 2 * std::numbers::pi / period_s;
        double integral = base * ((b - a) - m.diurnal_amplitude / w * (std::cos(w * b) - std::cos(w * a)));
        double expected = 7 * integral;
        CHECK(std::abs(counts[i] - expected) < 3.5 * std::sqrt(expected));
    }
}

TEST_CASE("arrival sampling is seed-deterministic") {
    ChurnModel m;
    m.base_rate_per_h = 200;
    m.diurnal_amplitude = 0.5;
    Rng a(9), b(9);
    CHECK(sample_arrivals(m, 3600, a) == sample_arrivals(m, 3600, b));
}

TEST_CASE("session medians match the analytic quantiles") {
    Rng rng(13);
    ChurnModel exp_model;
    exp_model.session_dist = SessionDist::Exponential;
    exp_model.session_mean_min = 10;
    std::vector<double> draws;
    for (int i = 0; i < 100000; ++i) draws.push_back(sample_session_s(exp_model, rng));
    std::nth_element(draws.begin(), draws.begin() + draws.size() / 2, draws.end());
    double median = draws[draws.size() / 2];
    double expected = 10 * 60 * std::numbers::ln2; // m ln 2 = 6.93 min
    CHECK(std::abs(median - expected) / expected < 0.02);

    ChurnModel par;
    par.session_dist = SessionDist::Pareto;
    par.pareto_shape = 1.5;
    par.pareto_scale_min = 2;
    draws.clear();
    for (int i = 0; i < 100000; ++i) draws.push_back(sample_session_s(par, rng));
    std::nth_element(draws.begin(), draws.begin() + draws.size() / 2, draws.end());
    median = draws[draws.size() / 2];
    expected = 2 * 60 * std::pow(2.0, 1.0 / 1.5); // scale * 2^(1/shape)
    CHECK(std::abs(median - expected) / expected < 0.02);

    ChurnModel bad;
    bad.session_mean_min = 0;
    CHECK_THROWS_AS(validate(bad), std::invalid_argument);
}

TEST_CASE("generated traces are well-formed and serialize byte-identically") {
    ChurnModel m;
    m.base_rate_per_h = 500;
    m.session_mean_min = 10;
    m.crash_fraction = 0.4;
    Rng r1(21), r2(21);
    ChurnTrace t1 = generate_trace(m, 2 * 3600, 100, r1);
    ChurnTrace t2 = generate_trace(m, 2 * 3600, 100, r2);
    validate_trace(t1);
    CHECK(!t1.events.empty());

    std::ostringstream s1, s2;
    write_trace(t1, s1);
    write_trace(t2, s2);
    CHECK(s1.str() == s2.str());

    std::istringstream in(s1.str());
    ChurnTrace back = read_trace(in);
    REQUIRE(back.events.size() == t1.events.size());
    for (std::size_t i = 0; i < back.events.size(); ++i) {
        CHECK(back.events[i].time == t1.events[i].time); // exact double round-trip
        CHECK(back.events[i].peer_id == t1.events[i].peer_id);
        CHECK(back.events[i].action == t1.events[i].action);
    }

    bool saw_crash = false, saw_leave = false;
    for (const TraceEvent& ev : t1.events) {
        saw_crash |= ev.action == ChurnAction::Crash;
        saw_leave |= ev.action == ChurnAction::Leave;
    }
    CHECK(saw_crash);
    CHECK(saw_leave);
}

TEST_CASE("trace reader reports the offending line") {
    std::istringstream bad1("12.5\t4\tjoin\n13.5\t4\texplode\n");
    CHECK_THROWS_WITH_AS(read_trace(bad1), doctest::Contains("line 2"), std::runtime_error);
    std::istringstream bad2("12.5\t4\tleave\n");
    CHECK_THROWS_WITH_AS(read_trace(bad2), doctest::Contains("departs without joining"),
                         std::runtime_error);
    std::istringstream bad3("5\t4\tjoin\n6\t4\tjoin\n");
    CHECK_THROWS_WITH_AS(read_trace(bad3), doctest::Contains("joins twice"), std::runtime_error);
}

TEST_CASE("fluctuation_rate implements events per peer per time") {
    ChurnTrace t;
    t.events.push_back({10, 1, ChurnAction::Join});
    t.events.push_back({20, 1, ChurnAction::Leave});
    auto series = fluctuation_rate(t, 100, 100);
    REQUIRE(series.size() == 1);
    CHECK(series[0].events == 2);
    // population: 100 for 10s, 101 for 10s, 100 for 80s
    double mean_pop = (100.0 * 10 + 101.0 * 10 + 100.0 * 80) / 100.0;
    CHECK(series[0].mean_population == doctest::Approx(mean_pop));
    CHECK(series[0].rate_abs_per_s == doctest::Approx(2.0 / 100));
    CHECK(series[0].rate_per_peer_s == doctest::Approx(2.0 / 100 / mean_pop));

    CHECK(fluctuation_rate(ChurnTrace{}, 100).empty());
}

TEST_CASE("windowed rate tracks the diurnal phase") {
    ChurnModel m;
    m.base_rate_per_h = 400;
    m.diurnal_amplitude = 0.9;
    m.period_h = 2;
    m.session_mean_min = 5;
    Rng rng(31);
    ChurnTrace t = generate_trace(m, 8 * 3600, 1, rng);
    auto series = fluctuation_rate(t, 600, 50);

    double peak_events = 0, trough_events = 0;
    for (const RatePoint& p : series) {
        double mid = (p.t_start + p.t_end) / 2;
        double s = std::sin(2 * std::numbers::pi * mid / (2 * 3600.0));
        if (s > 0.5) peak_events += p.events;
        else if (s < -0.5) trough_events += p.events;
    }
    CHECK(peak_events > 1.5 * trough_events);
}
