#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "fluctsim/rng.hpp"

namespace fluctsim {

enum class ChurnAction { Join, Leave, Crash };

struct TraceEvent {
    double time = 0; // seconds
    std::uint64_t peer_id = 0;
    ChurnAction action = ChurnAction::Join;
};

struct ChurnTrace {
    std::vector<TraceEvent> events; // ordered by (time, position)
};

enum class SessionDist { Exponential, Pareto };

// Arrival process is non-homogeneous Poisson with a sinusoidal diurnal
// modulation: lambda(t) = base * (1 + A * sin(2*pi*t / period)).
struct ChurnModel {
    double base_rate_per_h = 60;   // arrivals per simulated hour (lambda0)
    double diurnal_amplitude = 0;  // A in [0, 1)
    double period_h = 24;
    SessionDist session_dist = SessionDist::Exponential;
    double session_mean_min = 30;  // exponential mean
    double pareto_shape = 1.5;
    double pareto_scale_min = 2;
    double crash_fraction = 0.5;   // probability a departure is a crash
};

void validate(const ChurnModel& model); // throws naming field and constraint

// Instantaneous arrival rate in events per second.
double rate_at(const ChurnModel& model, double t_s);

// Join times over [0, horizon_s), realized by thinning against the peak rate.
std::vector<double> sample_arrivals(const ChurnModel& model, double horizon_s, Rng& rng);

// One session duration in seconds.
double sample_session_s(const ChurnModel& model, Rng& rng);

// Full workload: every arrival gets a session; departures beyond the horizon
// are not emitted (the peer is still up when the run ends). Peer ids are
// assigned sequentially from first_peer_id.
ChurnTrace generate_trace(const ChurnModel& model, double horizon_s,
                          std::uint64_t first_peer_id, Rng& rng);

struct RatePoint {
    double t_start = 0, t_end = 0;
    double events = 0;           // joins + departures in the window
    double mean_population = 0;  // time-weighted live count
    double rate_abs_per_s = 0;   // events / window
    double rate_per_peer_s = 0;  // events / window / mean_population
};

// Population-normalized fluctuation rate per window. `base_population`
// counts peers alive before the trace starts (e.g. bootstrap peers).
std::vector<RatePoint> fluctuation_rate(const ChurnTrace& trace, double window_s,
                                        std::size_t base_population = 0);

// Checks per-peer ordering and join/depart alternation. Throws on violation.
void validate_trace(const ChurnTrace& trace);

// Line format: time<TAB>peer_id<TAB>action, times printed with enough digits
// to round-trip exactly.
void write_trace(const ChurnTrace& trace, std::ostream& out);
ChurnTrace read_trace(std::istream& in); // throws with the offending line number

void write_trace_file(const ChurnTrace& trace, const std::string& path);
ChurnTrace read_trace_file(const std::string& path);

const char* to_string(ChurnAction a);

} // namespace fluctsim
