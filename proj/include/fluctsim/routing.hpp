#pragma once

#include <deque>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "fluctsim/keyspace.hpp"
#include "fluctsim/rng.hpp"
#include "fluctsim/simcore.hpp"

namespace fluctsim {

struct PeerRef {
    PeerId id = 0;
    IntervalId interval; // as known at link creation; may go stale
    auto operator<=>(const PeerRef&) const = default;
};

// One routing-table level: the links toward the subtree whose path flips
// this level's bit. peers[0] is the active connection, the rest are backups.
struct LinkEntry {
    int level = 0;
    IntervalId target_prefix;
    std::vector<PeerRef> peers;
    bool owner = false;    // this side re-establishes failed connections
    bool degraded = false; // repair ran short of candidates
};

struct RoutingTable {
    IntervalId own_interval;
    std::vector<LinkEntry> entries;      // entries[i] is level i+1
    std::optional<LinkEntry> cross;      // same-depth mirror link (depth >= 2)
};

// Smallest b >= 1 with q_f_est^b <= epsilon, clamped to b_max.
// Requires both probabilities in (0, 1).
int backup_size(double q_f_est, double epsilon, int b_max);

// Failure fraction over the most recent `window` outcomes with add-one
// smoothing, so the estimate stays inside (0, 1). Empty history -> 0.5.
double estimate_qf(std::span<const bool> failures, int window);

// Sliding-window probe bookkeeping feeding backup_size.
class QfEstimator {
public:
    explicit QfEstimator(int window) : window_(window) {}
    void record(bool failed) {
        outcomes_.push_back(failed);
        while (outcomes_.size() > static_cast<std::size_t>(window_)) outcomes_.pop_front();
    }
    double estimate() const {
        std::size_t failures = 0;
        for (bool f : outcomes_) failures += f ? 1 : 0;
        return (static_cast<double>(failures) + 1.0) / (static_cast<double>(outcomes_.size()) + 2.0);
    }
    int window() const { return window_; }

private:
    int window_;
    std::deque<bool> outcomes_;
};

// Which of two linked intervals re-establishes the connection: the one whose
// path is lexicographically smaller (l < r, prefix before extension). Both
// endpoints compute the same answer with no communication.
IntervalId assign_link_ownership(IntervalId a, IntervalId b);

// Mirror interval: flips bit 1, keeps the rest. Only meaningful at depth >= 2
// (at depth 1 the mirror is the sibling the level-1 entry already covers).
std::optional<IntervalId> mirror_of(IntervalId iv);

// The entry a query for k leaves through, by first differing level.
// Returns nullptr when the key is inside own_interval.
const LinkEntry* route_entry(const RoutingTable& rt, Key k, const KeyspaceConfig& cfg);
LinkEntry* route_entry(RoutingTable& rt, Key k, const KeyspaceConfig& cfg);

// First live peer of the entry selected by route_entry; nullopt when the
// entry is missing or fully dead (route exhausted).
std::optional<PeerRef> next_hop(const RoutingTable& rt, Key k, const KeyspaceConfig& cfg,
                                const std::function<bool(PeerId)>& is_live);

struct RepairOutcome {
    int removed = 0;
    int added = 0;
};

// Drops `dead` refs from the entry and refills it up to b_target with
// uniformly chosen candidates not already present. Sets `degraded` when the
// candidate pool runs dry.
RepairOutcome repair_link(LinkEntry& entry, std::span<const PeerId> dead,
                          std::span<const PeerRef> candidates, int b_target, Rng& rng);

// Applies a split of own_interval to the table: own interval deepens to the
// given half, a new deepest-level entry toward the sibling half is filled
// from peers_other_half, and the mirror cross link (when the mirror subtree
// is populated) is filled from mirror_peers. Throws std::logic_error when
// peers_other_half is empty: a split always leaves peers on both sides.
void rt_on_split(RoutingTable& rt, bool went_left, std::span<const PeerRef> peers_other_half,
                 std::span<const PeerRef> mirror_peers, int b_target, Rng& rng);

// Applies a coalesce: drops the deepest entry, lifts own_interval to the
// parent, and rebuilds the cross link from both halves' previous cross refs.
void rt_on_coalesce(RoutingTable& rt, std::span<const PeerRef> partner_cross_refs,
                    int b_target);

// One-entry-per-level, level/target consistency. Throws std::logic_error.
void check_rt_invariants(const RoutingTable& rt);

} // namespace fluctsim
