#include "fluctsim/simcore.hpp"

namespace fluctsim {

void validate(const NetworkModel& m) {
    if (m.latency_s_lo <= 0)
        throw std::invalid_argument("network.latency_ms_lo: must be > 0");
    if (m.latency_s_hi < m.latency_s_lo)
        throw std::invalid_argument("network.latency_ms_hi: must be >= latency_ms_lo");
    if (m.q_f_link < 0 || m.q_f_link >= 1)
        throw std::invalid_argument("network.q_f_link: must be in [0, 1)");
    if (m.drop_first_attempt_prob < 0 || m.drop_first_attempt_prob >= 1)
        throw std::invalid_argument("network.drop_first_attempt_prob: must be in [0, 1)");
    for (const PartitionWindow& w : m.partitions)
        if (w.end_s < w.start_s)
            throw std::invalid_argument("network.partition: window end before start");
}

} // namespace fluctsim
