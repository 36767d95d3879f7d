#pragma once

#include <optional>
#include <string>
#include <string_view>

#include "fluctsim/churn.hpp"
#include "fluctsim/protocol.hpp"
#include "fluctsim/simcore.hpp"

namespace fluctsim {

// Everything a run depends on. Serialized as line-oriented text with nested
// sections so scenario echoes diff cleanly in golden tests.
struct Scenario {
    std::uint64_t seed = 1;
    double horizon_h = 1.0;
    int bootstrap_peers = 64;
    int initial_data = 50;
    std::optional<double> quiesce_at_h; // churn/workload stop; run continues

    KeyspaceConfig keyspace;
    std::string digest = "sha256";
    ProtocolParams protocol;
    BackupParams backup;
    NetworkModel network;
    ChurnModel churn;
    WorkloadParams workload;
};

// Parses a scenario document. Unknown fields and invariant violations raise
// std::invalid_argument naming the field and the constraint.
Scenario parse_scenario(std::string_view text);
Scenario load_scenario(const std::string& path);

// Canonical echo with every default resolved; parse(serialize(s)) == s.
std::string serialize_scenario(const Scenario& s);

void validate_scenario(const Scenario& s);

} // namespace fluctsim
