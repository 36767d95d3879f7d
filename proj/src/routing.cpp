#include "fluctsim/routing.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace fluctsim {

int backup_size(double q_f_est, double epsilon, int b_max) {
    if (q_f_est <= 0 || q_f_est >= 1)
        throw std::invalid_argument("backup_size: q_f_est must be in (0, 1)");
    if (epsilon <= 0 || epsilon >= 1)
        throw std::invalid_argument("backup_size: epsilon must be in (0, 1)");
    if (b_max < 1) throw std::invalid_argument("backup_size: b_max must be >= 1");
    // smallest integer b with q^b <= eps; guard against q^b == eps rounding up
    double raw = std::log(epsilon) / std::log(q_f_est);
    int b = static_cast<int>(std::ceil(raw - 1e-12));
    return std::clamp(b, 1, b_max);
}

double estimate_qf(std::span<const bool> failures, int window) {
    if (window < 0) throw std::invalid_argument("estimate_qf: window must be >= 0");
    std::size_t take = std::min(failures.size(), static_cast<std::size_t>(window));
    std::size_t fail = 0;
    for (std::size_t i = failures.size() - take; i < failures.size(); ++i)
        fail += failures[i] ? 1 : 0;
    return (static_cast<double>(fail) + 1.0) / (static_cast<double>(take) + 2.0);
}

IntervalId assign_link_ownership(IntervalId a, IntervalId b) {
    if (a == b) throw std::invalid_argument("assign_link_ownership: identical intervals");
    int common = std::min(a.depth, b.depth);
    for (int level = 1; level <= common; ++level) {
        std::uint64_t abit = (a.path >> (a.depth - level)) & 1;
        std::uint64_t bbit = (b.path >> (b.depth - level)) & 1;
        if (abit != bbit) return abit < bbit ? a : b;
    }
    // one path is a prefix of the other; the prefix sorts first
    return a.depth < b.depth ? a : b;
}

std::optional<IntervalId> mirror_of(IntervalId iv) {
    if (iv.depth < 2) return std::nullopt;
    return flip_level(iv, 1);
}

const LinkEntry* route_entry(const RoutingTable& rt, Key k, const KeyspaceConfig& cfg) {
    auto level = first_diff_level(rt.own_interval, k, cfg);
    if (!level) return nullptr;
    std::size_t idx = static_cast<std::size_t>(*level - 1);
    if (idx >= rt.entries.size()) return nullptr;
    return &rt.entries[idx];
}

LinkEntry* route_entry(RoutingTable& rt, Key k, const KeyspaceConfig& cfg) {
    return const_cast<LinkEntry*>(route_entry(static_cast<const RoutingTable&>(rt), k, cfg));
}

std::optional<PeerRef> next_hop(const RoutingTable& rt, Key k, const KeyspaceConfig& cfg,
                                const std::function<bool(PeerId)>& is_live) {
    const LinkEntry* entry = route_entry(rt, k, cfg);
    if (!entry) return std::nullopt;
    for (const PeerRef& ref : entry->peers)
        if (!is_live || is_live(ref.id)) return ref;
    return std::nullopt;
}

RepairOutcome repair_link(LinkEntry& entry, std::span<const PeerId> dead,
                          std::span<const PeerRef> candidates, int b_target, Rng& rng) {
    RepairOutcome out;
    auto is_dead = [&dead](PeerId id) {
        return std::find(dead.begin(), dead.end(), id) != dead.end();
    };
    auto removed = std::erase_if(entry.peers, [&](const PeerRef& r) { return is_dead(r.id); });
    out.removed = static_cast<int>(removed);

    std::vector<PeerRef> pool;
    for (const PeerRef& c : candidates) {
        if (is_dead(c.id)) continue;
        bool present = std::any_of(entry.peers.begin(), entry.peers.end(),
                                   [&](const PeerRef& r) { return r.id == c.id; });
        if (!present) pool.push_back(c);
    }
    while (static_cast<int>(entry.peers.size()) < b_target && !pool.empty()) {
        std::size_t pick = rng.uniform_int(pool.size());
        entry.peers.push_back(pool[pick]);
        pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(pick));
        ++out.added;
    }
    entry.degraded = static_cast<int>(entry.peers.size()) < b_target;
    return out;
}

namespace {

// Uniform sample of up to b refs from the candidate list.
std::vector<PeerRef> pick_refs(std::span<const PeerRef> candidates, int b, Rng& rng) {
    std::vector<PeerRef> pool(candidates.begin(), candidates.end());
    std::vector<PeerRef> out;
    while (static_cast<int>(out.size()) < b && !pool.empty()) {
        std::size_t pick = rng.uniform_int(pool.size());
        out.push_back(pool[pick]);
        pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(pick));
    }
    return out;
}

} // namespace

void rt_on_split(RoutingTable& rt, bool went_left, std::span<const PeerRef> peers_other_half,
                 std::span<const PeerRef> mirror_peers, int b_target, Rng& rng) {
    if (peers_other_half.empty())
        throw std::logic_error("rt_on_split: split left no peers in the other half of " +
                               to_string(rt.own_interval));
    IntervalId old = rt.own_interval;
    IntervalId self{(old.path << 1) | (went_left ? 0u : 1u), old.depth + 1};
    IntervalId other{(old.path << 1) | (went_left ? 1u : 0u), old.depth + 1};
    rt.own_interval = self;

    LinkEntry deepest;
    deepest.level = self.depth;
    deepest.target_prefix = other;
    deepest.owner = assign_link_ownership(self, other) == self;
    deepest.peers = pick_refs(peers_other_half, b_target, rng);
    rt.entries.push_back(std::move(deepest));

    rt.cross.reset();
    if (auto mirror = mirror_of(self); mirror && !mirror_peers.empty()) {
        LinkEntry cross;
        cross.level = 1; // carried so routing fallbacks know which bit it flips
        cross.target_prefix = *mirror;
        cross.owner = assign_link_ownership(self, *mirror) == self;
        cross.peers = pick_refs(mirror_peers, b_target, rng);
        rt.cross = std::move(cross);
    }
}

void rt_on_coalesce(RoutingTable& rt, std::span<const PeerRef> partner_cross_refs,
                    int b_target) {
    if (rt.own_interval.depth == 0)
        throw std::logic_error("rt_on_coalesce: root interval cannot coalesce");
    if (!rt.entries.empty()) rt.entries.pop_back();
    rt.own_interval = parent(rt.own_interval);

    std::vector<PeerRef> refs;
    if (rt.cross) refs = rt.cross->peers;
    refs.insert(refs.end(), partner_cross_refs.begin(), partner_cross_refs.end());
    rt.cross.reset();
    if (auto mirror = mirror_of(rt.own_interval)) {
        std::vector<PeerRef> keep;
        for (const PeerRef& r : refs) {
            if (!is_prefix_of(*mirror, r.interval)) continue;
            bool dup = std::any_of(keep.begin(), keep.end(),
                                   [&](const PeerRef& k) { return k.id == r.id; });
            if (!dup && static_cast<int>(keep.size()) < b_target) keep.push_back(r);
        }
        if (!keep.empty()) {
            LinkEntry cross;
            cross.level = 1;
            cross.target_prefix = *mirror;
            cross.owner = assign_link_ownership(rt.own_interval, *mirror) == rt.own_interval;
            cross.peers = std::move(keep);
            rt.cross = std::move(cross);
        }
    }
}

void check_rt_invariants(const RoutingTable& rt) {
    if (static_cast<int>(rt.entries.size()) != rt.own_interval.depth)
        throw std::logic_error("routing table of " + to_string(rt.own_interval) +
                               ": expected one entry per level, have " +
                               std::to_string(rt.entries.size()));
    for (int level = 1; level <= rt.own_interval.depth; ++level) {
        const LinkEntry& e = rt.entries[static_cast<std::size_t>(level - 1)];
        if (e.level != level)
            throw std::logic_error("routing table entry at index " + std::to_string(level - 1) +
                                   " has level " + std::to_string(e.level));
        IntervalId expect = flip_level(rt.own_interval, level);
        expect.path >>= (rt.own_interval.depth - level);
        expect.depth = level;
        if (e.target_prefix != expect)
            throw std::logic_error("routing table entry level " + std::to_string(level) +
                                   " targets " + to_string(e.target_prefix) + ", expected " +
                                   to_string(expect));
        std::vector<PeerId> ids;
        for (const PeerRef& r : e.peers) ids.push_back(r.id);
        std::sort(ids.begin(), ids.end());
        if (std::adjacent_find(ids.begin(), ids.end()) != ids.end())
            throw std::logic_error("routing table entry level " + std::to_string(level) +
                                   " holds duplicate peer ids");
    }
    if (rt.cross) {
        auto mirror = mirror_of(rt.own_interval);
        if (!mirror || rt.cross->target_prefix != *mirror)
            throw std::logic_error("cross link of " + to_string(rt.own_interval) +
                                   " does not target the mirror interval");
    }
}

} // namespace fluctsim
