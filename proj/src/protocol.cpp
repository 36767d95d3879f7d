#include "fluctsim/protocol.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <stdexcept>

namespace fluctsim {

void validate(const ProtocolParams& p) {
    if (p.g_c < 2)
        throw std::invalid_argument("protocol.g_c: must be >= 2 so data survives one departure");
    if (p.g_s < 2 * p.g_c)
        throw std::invalid_argument("protocol.g_s: must be >= 2*g_c so fresh split halves are "
                                    "not immediately coalescible");
    if (p.t_ack_s <= 0) throw std::invalid_argument("protocol.t_ack_ms: must be > 0");
    if (p.max_reissues < 0) throw std::invalid_argument("protocol.max_reissues: must be >= 0");
    if (p.anti_entropy_s <= 0) throw std::invalid_argument("protocol.anti_entropy_s: must be > 0");
    if (p.heartbeat_s <= 0) throw std::invalid_argument("protocol.heartbeat_s: must be > 0");
}

void validate(const BackupParams& p) {
    if (p.epsilon <= 0 || p.epsilon >= 1)
        throw std::invalid_argument("backup.epsilon: must be in (0, 1)");
    if (p.window < 1) throw std::invalid_argument("backup.window: must be >= 1");
    if (p.b_max < 1) throw std::invalid_argument("backup.b_max: must be >= 1");
}

void validate(const WorkloadParams& p) {
    if (p.query_rate_per_h < 0)
        throw std::invalid_argument("workload.query_rate_per_h: must be >= 0");
    if (p.lookup_frac < 0 || p.insert_frac < 0 || p.update_frac < 0)
        throw std::invalid_argument("workload mix fractions: must be >= 0");
    double sum = p.lookup_frac + p.insert_frac + p.update_frac;
    if (std::abs(sum - 1.0) > 1e-9)
        throw std::invalid_argument("workload mix fractions: must sum to 1");
}

const char* to_string(OutcomeState s) {
    switch (s) {
    case OutcomeState::Pending: return "pending";
    case OutcomeState::ResolvedFound: return "found";
    case OutcomeState::ResolvedNotFound: return "notfound";
    case OutcomeState::ResolvedApplied: return "applied";
    case OutcomeState::Failed: return "failed";
    case OutcomeState::Unresolved: return "unresolved";
    }
    return "?";
}

ResolveAction resolve_answers(QueryOutcome& o, const AnswerRecord& incoming, int max_reissues) {
    if (o.first_hops < 0) o.first_hops = incoming.hops;
    if (!o.answers.empty()) ++o.duplicate_count;
    o.answers.push_back(incoming);
    std::size_t count = ++o.votes[{incoming.found, incoming.value}];

    // strict majority over (found, value); only the vote that just grew can
    // newly cross the half-way mark, but a previously resolved value may have
    // lost its majority, so scan the tally
    const std::pair<const std::pair<bool, std::string>, std::size_t>* winner = nullptr;
    if (2 * count > o.answers.size()) {
        winner = &*o.votes.find({incoming.found, incoming.value});
    } else {
        for (const auto& kv : o.votes)
            if (2 * kv.second > o.answers.size()) {
                winner = &kv;
                break;
            }
    }
    if (winner) {
        bool found = winner->first.first;
        if (o.kind == QueryKind::Lookup)
            o.state = found ? OutcomeState::ResolvedFound : OutcomeState::ResolvedNotFound;
        else
            o.state = OutcomeState::ResolvedApplied;
        o.resolved_value =
            found ? std::optional<std::string>(winner->first.second) : std::nullopt;
        return ResolveAction::Resolved;
    }
    if (o.reissues_used < max_reissues) return ResolveAction::NeedReissue;
    o.state = OutcomeState::Unresolved;
    return ResolveAction::Unresolved;
}

// --- Overlay ----------------------------------------------------------------

Overlay::Overlay(Simulator& sim, Network& net, MetricsCollector& metrics,
                 const OverlayParams& params, std::uint64_t seed)
    : sim_(sim), net_(net), metrics_(metrics), params_(params),
      proto_rng_(mix_seed(seed ^ 0x70726f746fULL)), workload_rng_(mix_seed(seed ^ 0x776f726bULL)) {
    validate(params_.keyspace);
    validate(params_.protocol);
    validate(params_.backup);
    validate(params_.workload);
    if (params_.quiesce_at_s) quiesce_time_ = *params_.quiesce_at_s;
}

Peer* Overlay::live_peer(PeerId id) {
    auto it = peers_.find(id);
    return it == peers_.end() ? nullptr : &it->second;
}

const Peer* Overlay::find_peer(PeerId id) const {
    auto it = peers_.find(id);
    return it == peers_.end() ? nullptr : &it->second;
}

Group* Overlay::group_of(const Peer& p) {
    auto it = groups_.find(p.rt.own_interval);
    if (it == groups_.end()) return nullptr;
    auto& m = it->second.members;
    if (!std::binary_search(m.begin(), m.end(), p.ref.id)) return nullptr;
    return &it->second;
}

int Overlay::b_target(const Peer& p) const {
    return backup_size(p.qf.estimate(), params_.backup.epsilon, params_.backup.b_max);
}

PeerId Overlay::pick_live_peer(Rng& rng) {
    if (peers_.empty()) return 0;
    std::size_t idx = rng.uniform_int(peers_.size());
    return std::next(peers_.begin(), static_cast<std::ptrdiff_t>(idx))->first;
}

std::vector<PeerRef> Overlay::members_under(IntervalId prefix) const {
    std::vector<PeerRef> out;
    for (const auto& [iv, g] : groups_) {
        if (!is_prefix_of(prefix, iv)) continue;
        for (PeerId id : g.members)
            if (peers_.count(id)) out.push_back(PeerRef{id, iv});
    }
    return out;
}

PeerId Overlay::spawn_peer() { return next_peer_id_++; }

void Overlay::seed_datum(const std::string& datum, const std::string& value) {
    Key k = key_of_datum(datum, params_.keyspace);
    for (auto& [id, p] : peers_)
        if (contains(p.rt.own_interval, k, params_.keyspace))
            p.store[k] = StoreEntry{value, 1, 0};
    if (!registered_.count(k.value)) {
        registry_.push_back(k);
        registered_.insert(k.value);
    }
}

void Overlay::bootstrap() {
    for (int i = 0; i < params_.bootstrap_peers; ++i) {
        PeerId id = spawn_peer();
        handle_join(id, false);
        if (i == 0)
            for (int d = 0; d < params_.initial_data; ++d)
                seed_datum("seed-" + std::to_string(d), "value-0." + std::to_string(d));
        // drain same-time events so splits interleave with the joins and the
        // interval tree takes its usual random shape
        sim_.run_until(sim_.now());
    }
}

void Overlay::apply_trace(const ChurnTrace& trace) {
    validate_trace(trace);
    for (const TraceEvent& ev : trace.events) {
        if (ev.action == ChurnAction::Join) {
            sim_.schedule(ev.time, [this, id = ev.peer_id] { handle_join(id, true); });
        } else {
            bool graceful = ev.action == ChurnAction::Leave;
            sim_.schedule(ev.time, [this, id = ev.peer_id, graceful] {
                handle_leave(id, graceful, true);
            });
        }
    }
}

// --- join / leave -----------------------------------------------------------

void Overlay::handle_join(PeerId id, bool count_churn) {
    if (count_churn) metrics_.churn_event();
    if (id >= next_peer_id_) next_peer_id_ = id + 1;

    Peer& p = peers_[id]; // create or reset (evicted peers re-place themselves)
    std::uint32_t epoch = p.timer_epoch;
    p = Peer{};
    p.timer_epoch = epoch;
    p.ref = PeerRef{id, root_interval()};
    p.qf = QfEstimator(params_.backup.window);

    if (groups_.empty()) {
        // bootstrap (or restart after extinction): own the whole keyspace
        p.rt.own_interval = root_interval();
        Group g;
        g.interval = root_interval();
        g.members = {id};
        groups_[root_interval()] = g;
        update_degraded(groups_[root_interval()]);
        metrics_.population(sim_.now(), live_count());
        start_timers(id);
        return;
    }

    std::vector<IntervalId> candidates;
    for (const auto& [iv, g] : groups_) {
        if (g.write_lock) continue; // replication in progress, try elsewhere
        bool any_live = std::any_of(g.members.begin(), g.members.end(),
                                    [this](PeerId m) { return peers_.count(m) != 0; });
        if (any_live) candidates.push_back(iv);
    }
    if (candidates.empty()) {
        peers_.erase(id);
        sim_.schedule_in(params_.protocol.heartbeat_s, [this, id] { handle_join(id, false); });
        return;
    }
    IntervalId leaf = candidates[proto_rng_.uniform_int(candidates.size())];
    join_into(id, leaf);
}

void Overlay::join_into(PeerId id, IntervalId leaf) {
    auto git = groups_.find(leaf);
    if (git == groups_.end()) throw std::logic_error("join_into: " + to_string(leaf) + " is not a leaf");
    Group& g = git->second;

    Peer& p = peers_[id];
    p.ref = PeerRef{id, leaf};
    if (p.qf.window() != params_.backup.window) p.qf = QfEstimator(params_.backup.window);

    const Peer* donor = nullptr;
    for (PeerId m : g.members)
        if (m != id && peers_.count(m)) {
            donor = &peers_.at(m);
            break;
        }
    if (!donor) throw std::logic_error("join_into: no live donor in " + to_string(leaf));

    // full copy of the interval's data set plus the donor's routing table
    p.store = donor->store;
    p.rt = donor->rt;
    p.rt.own_interval = leaf;
    p.write_lock = false;
    metrics_.message(MsgKind::JoinRequest, 1);
    metrics_.message(MsgKind::JoinTransferItem, p.store.size());

    // freshen the copied table: drop refs that stopped responding, refill
    auto freshen = [&](LinkEntry& e) {
        std::vector<PeerId> dead;
        for (const PeerRef& r : e.peers)
            if (!peers_.count(r.id) || r.id == id) dead.push_back(r.id);
        if (!dead.empty() || static_cast<int>(e.peers.size()) < b_target(p))
            repair_entry(p, e, dead);
    };
    for (LinkEntry& e : p.rt.entries) freshen(e);
    if (p.rt.cross) freshen(*p.rt.cross);

    auto pos = std::lower_bound(g.members.begin(), g.members.end(), id);
    if (pos == g.members.end() || *pos != id) g.members.insert(pos, id);
    update_degraded(g);
    metrics_.population(sim_.now(), live_count());
    start_timers(id);
    schedule_split_check(g);
}

void Overlay::handle_leave(PeerId id, bool graceful, bool count_churn) {
    Peer* p = live_peer(id);
    if (!p) return;
    if (count_churn) metrics_.churn_event();

    IntervalId iv = p->rt.own_interval;
    if (graceful) {
        // departure notices: same-interval neighbors plus every linked peer
        std::set<PeerId> targets;
        auto git = groups_.find(iv);
        if (git != groups_.end())
            for (PeerId m : git->second.members)
                if (m != id) targets.insert(m);
        for (const LinkEntry& e : p->rt.entries)
            for (const PeerRef& r : e.peers) targets.insert(r.id);
        if (p->rt.cross)
            for (const PeerRef& r : p->rt.cross->peers) targets.insert(r.id);
        for (PeerId t : targets)
            if (peers_.count(t))
                send_message(id, t, MsgKind::LeaveNotice, LeaveNoticeMsg{id});
        if (git != groups_.end()) group_prune(id, iv);
    }
    // a crash is silent: group bookkeeping happens at discovery

    peers_.erase(id);
    metrics_.population(sim_.now(), live_count());
    if (peers_.empty() && !groups_.empty()) {
        // the overlay died out; flush accounting and reset the tree
        metrics_.extinction();
        for (auto& [giv, g] : groups_) {
            if (g.below_gc_since >= 0) {
                metrics_.degraded_time(sim_.now() - g.below_gc_since);
                g.below_gc_since = -1;
            }
        }
        groups_.clear();
    }
}

void Overlay::group_prune(PeerId dead, IntervalId iv) {
    auto git = groups_.find(iv);
    if (git == groups_.end()) return;
    Group& g = git->second;
    auto pos = std::lower_bound(g.members.begin(), g.members.end(), dead);
    if (pos == g.members.end() || *pos != dead) return;
    g.members.erase(pos);
    update_degraded(g);
    if (Peer* alive = live_peer(dead); alive && alive->rt.own_interval == iv) {
        // false suspicion: tell the peer so it can re-place itself
        send_message(g.members.empty() ? dead : g.members.front(), dead, MsgKind::EvictNotice,
                     EvictNoticeMsg{dead});
    }
    schedule_coalesce_check(g);
}

void Overlay::update_degraded(Group& g) {
    bool below = static_cast<int>(g.members.size()) < params_.protocol.g_c;
    if (below && g.below_gc_since < 0) {
        g.below_gc_since = sim_.now();
    } else if (!below && g.below_gc_since >= 0) {
        metrics_.degraded_time(sim_.now() - g.below_gc_since);
        g.below_gc_since = -1;
    }
}

void Overlay::schedule_split_check(Group& g) {
    if (static_cast<int>(g.members.size()) <= params_.protocol.g_s) return;
    if (g.split_scheduled || g.write_lock || g.coalesce_in_flight) return;
    g.split_scheduled = true;
    sim_.schedule(sim_.now(), [this, iv = g.interval] { run_split_protocol(iv); });
}

void Overlay::schedule_coalesce_check(Group& g) {
    if (static_cast<int>(g.members.size()) >= params_.protocol.g_c) return;
    if (g.coalesce_scheduled || g.coalesce_in_flight) return;
    g.coalesce_scheduled = true;
    sim_.schedule(sim_.now(), [this, iv = g.interval] { run_coalesce_protocol(iv); });
}

// --- timers and maintenance ---------------------------------------------------

void Overlay::start_timers(PeerId id) {
    Peer* p = live_peer(id);
    if (!p) return;
    std::uint32_t epoch = ++timer_epoch_counter_; // unique across peer lifetimes
    p->timer_epoch = epoch;
    double hb = proto_rng_.uniform(0, params_.protocol.heartbeat_s);
    double ae = proto_rng_.uniform(0, params_.protocol.anti_entropy_s);
    sim_.schedule_in(hb, [this, id, epoch] {
        if (Peer* q = live_peer(id); q && q->timer_epoch == epoch) heartbeat_round(id);
    });
    sim_.schedule_in(ae, [this, id, epoch] {
        if (Peer* q = live_peer(id); q && q->timer_epoch == epoch) anti_entropy_round(id);
    });
}

void Overlay::heartbeat_round(PeerId id) {
    Peer* p = live_peer(id);
    if (!p) return;
    std::uint32_t epoch = p->timer_epoch;
    sim_.schedule_in(params_.protocol.heartbeat_s, [this, id, epoch] {
        if (Peer* q = live_peer(id); q && q->timer_epoch == epoch) heartbeat_round(id);
    });

    auto probe = [&](LinkEntry& e, int level) {
        // adaptive trim: drop surplus backups once q_f eases off
        int b = b_target(*p);
        if (static_cast<int>(e.peers.size()) > b)
            e.peers.resize(static_cast<std::size_t>(b));
        if (e.peers.empty()) {
            repair_entry(*p, e, {});
            return;
        }
        PendingProbe pr;
        pr.probe_id = next_probe_id_++;
        pr.target = e.peers.front().id;
        pr.level = level;
        pr.deadline = sim_.now() + params_.protocol.t_ack_s;
        p->pending_probes.push_back(pr);
        send_message(id, pr.target, MsgKind::Probe, ProbeMsg{pr.probe_id, id});
        sim_.schedule(pr.deadline, [this, id, pid = pr.probe_id] { on_probe_timeout(id, pid); });
    };
    for (LinkEntry& e : p->rt.entries) probe(e, e.level);
    if (p->rt.cross) probe(*p->rt.cross, 0);

    // ring ping: every member watches its successor, so a crash inside the
    // group is noticed within one heartbeat period plus the advice timeout
    if (Group* g = group_of(*p); g && g->members.size() > 1) {
        auto pos = std::lower_bound(g->members.begin(), g->members.end(), id);
        std::size_t idx = static_cast<std::size_t>(pos - g->members.begin());
        PeerId succ = g->members[(idx + 1) % g->members.size()];
        if (succ != id) send_ping(id, succ, 0);
    }
}

void Overlay::send_ping(PeerId from, PeerId target, int attempt) {
    Peer* p = live_peer(from);
    if (!p) return;
    PendingPing ping;
    ping.ping_id = next_ping_id_++;
    ping.target = target;
    ping.deadline = sim_.now() + params_.protocol.t_ack_s;
    ping.attempt = attempt;
    p->pending_pings.push_back(ping);
    send_message(from, target, MsgKind::Ping, PingMsg{ping.ping_id, from});
    sim_.schedule(ping.deadline, [this, from, pid = ping.ping_id] { on_ping_timeout(from, pid); });
}

void Overlay::on_ping_timeout(PeerId id, std::uint64_t ping_id) {
    Peer* p = live_peer(id);
    if (!p) return;
    auto it = std::find_if(p->pending_pings.begin(), p->pending_pings.end(),
                           [&](const PendingPing& q) { return q.ping_id == ping_id; });
    if (it == p->pending_pings.end()) return;
    PendingPing ping = *it;
    p->pending_pings.erase(it);
    if (ping.replied) return;
    if (ping.attempt < 2) {
        // lost pings are common under q_f; only three strikes shrink the group
        send_ping(id, ping.target, ping.attempt + 1);
        return;
    }
    group_prune(ping.target, p->rt.own_interval);
}

void Overlay::on_probe_timeout(PeerId id, std::uint64_t probe_id) {
    Peer* p = live_peer(id);
    if (!p) return;
    auto it = std::find_if(p->pending_probes.begin(), p->pending_probes.end(),
                           [&](const PendingProbe& q) { return q.probe_id == probe_id; });
    if (it == p->pending_probes.end()) return;
    PendingProbe probe = *it;
    p->pending_probes.erase(it);
    if (probe.replied) return;

    p->qf.record(true);
    LinkEntry* entry = nullptr;
    if (probe.level == 0) {
        if (p->rt.cross) entry = &*p->rt.cross;
    } else if (probe.level <= static_cast<int>(p->rt.entries.size())) {
        entry = &p->rt.entries[static_cast<std::size_t>(probe.level - 1)];
    }
    if (entry) {
        bool present = std::any_of(entry->peers.begin(), entry->peers.end(),
                                   [&](const PeerRef& r) { return r.id == probe.target; });
        if (present) {
            std::vector<PeerId> dead{probe.target};
            if (entry->owner || entry->peers.size() <= 1) {
                repair_entry(*p, *entry, dead);
            } else {
                std::erase_if(entry->peers,
                              [&](const PeerRef& r) { return r.id == probe.target; });
            }
        }
    }
    // a dead peer discovered across intervals still has to leave its group,
    // otherwise a fully crashed group would linger forever
    if (!peers_.count(probe.target)) {
        for (auto& [iv, g] : groups_)
            if (std::binary_search(g.members.begin(), g.members.end(), probe.target)) {
                group_prune(probe.target, iv);
                break;
            }
    }
}

void Overlay::repair_entry(Peer& p, LinkEntry& entry, std::span<const PeerId> dead) {
    std::vector<PeerRef> candidates;
    for (const PeerRef& c : members_under(entry.target_prefix))
        if (c.id != p.ref.id) candidates.push_back(c);
    metrics_.message(MsgKind::RepairLookup, 1);
    RepairOutcome out = repair_link(entry, dead, candidates, b_target(p), proto_rng_);
    if (out.added > 0) {
        metrics_.message(MsgKind::LinkHandshake, static_cast<std::uint64_t>(out.added));
        // the handshake hands the other endpoint a reverse ref for free
        for (std::size_t i = entry.peers.size() - static_cast<std::size_t>(out.added);
             i < entry.peers.size(); ++i) {
            Peer* q = live_peer(entry.peers[i].id);
            if (!q) continue;
            int lvl = entry.level;
            if (lvl >= 1 && lvl <= static_cast<int>(q->rt.entries.size())) {
                LinkEntry& back = q->rt.entries[static_cast<std::size_t>(lvl - 1)];
                bool mine = is_prefix_of(back.target_prefix, p.rt.own_interval);
                bool already = std::any_of(back.peers.begin(), back.peers.end(),
                                           [&](const PeerRef& r) { return r.id == p.ref.id; });
                if (mine && !already && static_cast<int>(back.peers.size()) < b_target(*q))
                    back.peers.push_back(PeerRef{p.ref.id, p.rt.own_interval});
            }
        }
    }
}

void Overlay::anti_entropy_round(PeerId id) {
    Peer* p = live_peer(id);
    if (!p) return;
    std::uint32_t epoch = p->timer_epoch;
    sim_.schedule_in(params_.protocol.anti_entropy_s, [this, id, epoch] {
        if (Peer* q = live_peer(id); q && q->timer_epoch == epoch) anti_entropy_round(id);
    });
    if (p->write_lock) return;
    Group* g = group_of(*p);
    if (!g) return;
    std::vector<PeerId> others;
    for (PeerId m : g->members)
        if (m != id) others.push_back(m);
    if (!others.empty()) {
        PeerId partner_id = others[proto_rng_.uniform_int(others.size())];
        Peer* partner = live_peer(partner_id);
        if (!partner) {
            // summary goes out, nobody answers
            metrics_.message(MsgKind::AntiEntropySummary, 1);
        } else if (!partner->write_lock) {
            metrics_.message(MsgKind::AntiEntropySummary, 2);
            std::uint64_t moved = 0;
            for (const auto& [k, e] : p->store) {
                auto it = partner->store.find(k);
                if (it == partner->store.end() || newer_than(e, it->second)) {
                    partner->store[k] = e;
                    ++moved;
                }
            }
            for (const auto& [k, e] : partner->store) {
                auto it = p->store.find(k);
                if (it == p->store.end() || newer_than(e, it->second)) {
                    p->store[k] = e;
                    ++moved;
                }
            }
            if (moved) metrics_.message(MsgKind::AntiEntropyItem, moved);
        }
    }
    maybe_check_convergence();
}

void Overlay::maybe_check_convergence() {
    if (converged_recorded_ || quiesce_time_ < 0 || sim_.now() < quiesce_time_) return;
    if (group_stores_consistent()) {
        metrics_.convergence(quiesce_time_, sim_.now());
        converged_recorded_ = true;
    }
}

// --- queries -----------------------------------------------------------------

std::uint64_t Overlay::issue_query(QueryKind kind, Key key, std::string value,
                                   std::optional<PeerId> issuer) {
    PeerId src = issuer ? *issuer : pick_live_peer(workload_rng_);
    Peer* p = live_peer(src);
    if (!p) return 0;
    std::uint64_t qid = next_qid_++;
    QueryOutcome outcome;
    outcome.qid = qid;
    outcome.kind = kind;
    outcome.key = key;
    outcome.value = value;
    outcome.issuer = src;
    outcomes_[qid] = outcome;
    metrics_.query_issued(kind);

    QueryMsg q;
    q.qid = qid;
    q.kind = kind;
    q.key = key;
    q.value = std::move(value);
    q.issuer = src;
    on_query(*p, std::move(q), true);
    return qid;
}

void Overlay::on_query(Peer& zeta, QueryMsg q, bool local) {
    // processed: advise the upstream psi so it stops waiting
    if (!local && q.ack_id != 0 && q.prev_hop != 0)
        send_message(zeta.ref.id, q.prev_hop, MsgKind::Advice, AdviceMsg{q.ack_id, zeta.ref.id});

    if (contains(zeta.rt.own_interval, q.key, params_.keyspace)) {
        if (q.kind == QueryKind::Lookup) {
            auto it = zeta.store.find(q.key);
            bool found = it != zeta.store.end();
            answer_issuer(zeta, q, found, found ? it->second.value : std::string{},
                          found ? it->second.version : 0);
        } else if (zeta.write_lock) {
            zeta.deferred.push_back(DeferredWrite{next_deferred_order_++, std::move(q)});
        } else {
            apply_write(zeta, q);
        }
        return;
    }
    forward_with_ack(zeta, q);
}

void Overlay::forward_with_ack(Peer& psi, const QueryMsg& q) {
    LinkEntry* entry = route_entry(psi.rt, q.key, params_.keyspace);
    std::vector<PeerRef> candidates;
    if (entry) {
        candidates = entry->peers;
        // level-1 targets can also ride the mirror link (load distribution
        // toward big intervals)
        if (entry->level == 1 && psi.rt.cross)
            candidates.insert(candidates.end(), psi.rt.cross->peers.begin(),
                              psi.rt.cross->peers.end());
    }
    if (candidates.empty()) {
        if (q.issuer == psi.ref.id) on_failure(q.qid);
        else send_message(psi.ref.id, q.issuer, MsgKind::FailureNotice, FailureMsg{q.qid});
        return;
    }

    PendingAck ack;
    ack.ack_id = next_ack_id_++;
    ack.qid = q.qid;
    ack.downstream = candidates.front().id;
    ack.upstream = q.prev_hop;
    ack.deadline = sim_.now() + params_.protocol.t_ack_s;
    ack.tried = {ack.downstream};

    QueryMsg fwd = q;
    fwd.prev_hop = psi.ref.id;
    fwd.ack_id = ack.ack_id;
    fwd.hops = q.hops + 1;
    fwd.reissue_no = 0;
    ack.query = fwd;
    psi.pending_acks.push_back(ack);

    send_message(psi.ref.id, ack.downstream, MsgKind::Query, fwd,
                 net_.model().drop_first_attempt_prob);
    sim_.schedule(ack.deadline, [this, id = psi.ref.id, aid = ack.ack_id] {
        on_ack_timeout(id, aid);
    });
}

void Overlay::on_ack_timeout(PeerId psi_id, std::uint64_t ack_id) {
    Peer* psi = live_peer(psi_id);
    if (!psi) return;
    auto it = std::find_if(psi->pending_acks.begin(), psi->pending_acks.end(),
                           [&](const PendingAck& a) { return a.ack_id == ack_id; });
    if (it == psi->pending_acks.end()) return;
    if (it->done) {
        psi->pending_acks.erase(it);
        return;
    }
    if (sim_.now() + 1e-12 < it->deadline) return; // superseded by a reissue

    PendingAck& ack = *it;
    if (ack.reissues_used >= params_.protocol.max_reissues) {
        QueryMsg q = ack.query;
        psi->pending_acks.erase(it);
        if (q.issuer == psi_id) on_failure(q.qid);
        else send_message(psi_id, q.issuer, MsgKind::FailureNotice, FailureMsg{q.qid});
        return;
    }

    LinkEntry* entry = route_entry(psi->rt, ack.query.key, params_.keyspace);
    std::vector<PeerRef> candidates;
    if (entry) {
        candidates = entry->peers;
        if (entry->level == 1 && psi->rt.cross)
            candidates.insert(candidates.end(), psi->rt.cross->peers.begin(),
                              psi->rt.cross->peers.end());
    }
    const PeerRef* next = nullptr;
    for (const PeerRef& c : candidates)
        if (std::find(ack.tried.begin(), ack.tried.end(), c.id) == ack.tried.end()) {
            next = &c;
            break;
        }
    if (!next) {
        QueryMsg q = ack.query;
        psi->pending_acks.erase(it);
        if (q.issuer == psi_id) on_failure(q.qid);
        else send_message(psi_id, q.issuer, MsgKind::FailureNotice, FailureMsg{q.qid});
        return;
    }

    metrics_.reissue(peers_.count(ack.downstream) != 0);
    ack.downstream = next->id;
    ack.tried.push_back(next->id);
    ++ack.reissues_used;
    ack.deadline = sim_.now() + params_.protocol.t_ack_s;
    QueryMsg fwd = ack.query;
    fwd.reissue_no = ack.reissues_used;
    send_message(psi_id, next->id, MsgKind::Query, fwd);
    sim_.schedule(ack.deadline, [this, psi_id, ack_id] { on_ack_timeout(psi_id, ack_id); });
}

void Overlay::answer_issuer(Peer& responder, const QueryMsg& q, bool found,
                            const std::string& value, std::uint64_t version) {
    if (q.issuer == responder.ref.id) {
        on_answer_record(q.qid, AnswerRecord{found, value, version, responder.ref.id, q.hops});
        return;
    }
    AnswerMsg a;
    a.qid = q.qid;
    a.key = q.key;
    a.found = found;
    a.value = value;
    a.version = version;
    a.responder = responder.ref.id;
    a.hops = q.hops;
    send_message(responder.ref.id, q.issuer, MsgKind::Answer, a);
}

void Overlay::apply_write(Peer& zeta, const QueryMsg& q) {
    auto it = zeta.store.find(q.key);
    std::uint64_t version = it != zeta.store.end() ? it->second.version + 1 : 1;
    StoreEntry entry{q.value, version, zeta.ref.id};
    zeta.store[q.key] = entry;
    if (Group* g = group_of(zeta))
        for (PeerId m : g->members)
            if (m != zeta.ref.id && peers_.count(m))
                send_message(zeta.ref.id, m, MsgKind::StoreWrite, StoreWriteMsg{q.key, entry, zeta.ref.id});
    answer_issuer(zeta, q, true, q.value, version);
}

void Overlay::on_answer_record(std::uint64_t qid, const AnswerRecord& rec) {
    auto it = outcomes_.find(qid);
    if (it == outcomes_.end()) return;
    QueryOutcome& o = it->second;
    if (!o.answers.empty()) metrics_.duplicate_answer();
    ResolveAction action = resolve_answers(o, rec, params_.protocol.max_reissues);
    switch (action) {
    case ResolveAction::Resolved:
        if (!o.counted) {
            o.counted = true;
            if (o.kind == QueryKind::Lookup)
                metrics_.lookup_resolved(o.state == OutcomeState::ResolvedFound, o.first_hops);
            else
                metrics_.write_applied();
        }
        if (o.kind != QueryKind::Lookup && !registered_.count(o.key.value)) {
            registry_.push_back(o.key);
            registered_.insert(o.key.value);
        }
        break;
    case ResolveAction::NeedReissue:
        ++o.reissues_used;
        metrics_.reissue(false);
        reissue_from_issuer(o);
        break;
    case ResolveAction::Unresolved:
        if (!o.counted) {
            o.counted = true;
            metrics_.query_unresolved();
        }
        break;
    case ResolveAction::None:
        break;
    }
}

void Overlay::reissue_from_issuer(QueryOutcome& outcome) {
    Peer* p = live_peer(outcome.issuer);
    if (!p) return;
    QueryMsg q;
    q.qid = outcome.qid;
    q.kind = outcome.kind;
    q.key = outcome.key;
    q.value = outcome.value;
    q.issuer = outcome.issuer;
    on_query(*p, std::move(q), true);
}

void Overlay::on_failure(std::uint64_t qid) {
    auto it = outcomes_.find(qid);
    if (it == outcomes_.end()) return;
    QueryOutcome& o = it->second;
    if (o.state != OutcomeState::Pending) return; // an answer got through first
    o.state = OutcomeState::Failed;
    if (!o.counted) {
        o.counted = true;
        metrics_.query_failed();
    }
}

// --- split / coalesce ----------------------------------------------------------

void Overlay::run_split_protocol(IntervalId iv) {
    auto git = groups_.find(iv);
    if (git == groups_.end()) return;
    Group& g = git->second;
    g.split_scheduled = false;
    if (static_cast<int>(g.members.size()) <= params_.protocol.g_s) return;
    if (g.write_lock || g.coalesce_in_flight) {
        g.split_scheduled = true;
        sim_.schedule_in(params_.protocol.heartbeat_s, [this, iv] { run_split_protocol(iv); });
        return;
    }
    if (iv.depth >= params_.keyspace.l_bits) return; // keys cannot be halved further

    auto [left_iv, right_iv] = split(iv, params_.keyspace);

    // deterministic balanced partition: alternate over members sorted by id
    std::vector<PeerId> left_ids, right_ids;
    for (std::size_t i = 0; i < g.members.size(); ++i)
        (i % 2 == 0 ? left_ids : right_ids).push_back(g.members[i]);

    std::vector<PeerRef> left_refs, right_refs;
    for (PeerId m : left_ids) left_refs.push_back(PeerRef{m, left_iv});
    for (PeerId m : right_ids) right_refs.push_back(PeerRef{m, right_iv});

    // mirror subtrees live outside this interval, so compute them up front
    std::vector<PeerRef> left_mirror, right_mirror;
    if (auto m = mirror_of(left_iv)) left_mirror = members_under(*m);
    if (auto m = mirror_of(right_iv)) right_mirror = members_under(*m);

    double below_since = g.below_gc_since;
    if (below_since >= 0) metrics_.degraded_time(sim_.now() - below_since);
    groups_.erase(git);

    for (bool left : {true, false}) {
        auto& ids = left ? left_ids : right_ids;
        IntervalId child = left ? left_iv : right_iv;
        auto& other = left ? right_refs : left_refs;
        auto& mirror = left ? left_mirror : right_mirror;
        for (PeerId m : ids) {
            Peer* p = live_peer(m);
            if (!p) continue; // zombie member, carried until discovery
            p->ref.interval = child;
            std::erase_if(p->store, [&](const auto& kv) {
                return !contains(child, kv.first, params_.keyspace);
            });
            rt_on_split(p->rt, left, other, mirror, b_target(*p), proto_rng_);
            std::uint64_t links = p->rt.entries.back().peers.size();
            if (p->rt.cross) links += p->rt.cross->peers.size();
            metrics_.message(MsgKind::SplitLink, links);
            // the new cross route connects both mirror intervals: its peers
            // learn the reverse ref through the same handshake
            if (p->rt.cross)
                for (const PeerRef& r : p->rt.cross->peers) {
                    Peer* q = live_peer(r.id);
                    if (!q || mirror_of(q->rt.own_interval) != std::optional<IntervalId>(child))
                        continue;
                    if (!q->rt.cross) {
                        LinkEntry back;
                        back.level = 1;
                        back.target_prefix = child;
                        back.owner =
                            assign_link_ownership(q->rt.own_interval, child) == q->rt.own_interval;
                        q->rt.cross = back;
                    }
                    LinkEntry& back = *q->rt.cross;
                    bool dup = std::any_of(back.peers.begin(), back.peers.end(),
                                           [&](const PeerRef& x) { return x.id == m; });
                    if (!dup && static_cast<int>(back.peers.size()) < b_target(*q))
                        back.peers.push_back(PeerRef{m, child});
                }
        }
        Group child_group;
        child_group.interval = child;
        child_group.members = ids;
        groups_[child] = child_group;
        update_degraded(groups_[child]);
    }
    metrics_.split();
    if (invariant_checks_) {
        if (static_cast<int>(left_ids.size()) < params_.protocol.g_c ||
            static_cast<int>(right_ids.size()) < params_.protocol.g_c)
            throw std::logic_error("split of " + to_string(iv) + " produced a half below g_c");
        check_invariants();
    }
    schedule_split_check(groups_[left_iv]);
    schedule_split_check(groups_[right_iv]);
}

void Overlay::run_coalesce_protocol(IntervalId iv) {
    auto git = groups_.find(iv);
    if (git == groups_.end()) return;
    Group& g = git->second;
    g.coalesce_scheduled = false;
    if (static_cast<int>(g.members.size()) >= params_.protocol.g_c) return;
    if (g.coalesce_in_flight || g.write_lock) return;
    if (iv.depth == 0) return; // the root has nobody to merge with

    IntervalId sib = sibling(iv);
    auto sit = groups_.find(sib);
    if (sit == groups_.end() || sit->second.write_lock || sit->second.coalesce_in_flight) {
        // sibling is split deeper (or busy): blocked, re-check next round
        g.coalesce_scheduled = true;
        sim_.schedule_in(params_.protocol.heartbeat_s, [this, iv] { run_coalesce_protocol(iv); });
        return;
    }
    Group& s = sit->second;

    g.write_lock = s.write_lock = true;
    g.coalesce_in_flight = s.coalesce_in_flight = true;
    for (Group* side : {&g, &s})
        for (PeerId m : side->members)
            if (Peer* p = live_peer(m)) p->write_lock = true;

    DataStore g_union = side_union(g);
    DataStore s_union = side_union(s);
    std::uint64_t repl = g.members.size() * s_union.size() + s.members.size() * g_union.size();
    if (repl) metrics_.message(MsgKind::CoalesceReplItem, repl);

    // direct transfer: receivers stream the other side's items in parallel,
    // so the window scales with the larger store
    double per_item = proto_rng_.uniform(net_.model().latency_s_lo, net_.model().latency_s_hi);
    double duration = per_item * static_cast<double>(std::max<std::size_t>(
                                     1, std::max(g_union.size(), s_union.size())));
    IntervalId left_iv = is_left_child(iv) ? iv : sib;
    IntervalId right_iv = is_left_child(iv) ? sib : iv;
    sim_.schedule_in(duration, [this, left_iv, right_iv] { coalesce_complete(left_iv, right_iv); });
}

void Overlay::coalesce_complete(IntervalId left_iv, IntervalId right_iv) {
    auto lit = groups_.find(left_iv);
    auto rit = groups_.find(right_iv);
    if (lit == groups_.end() || rit == groups_.end())
        throw std::logic_error("coalesce_complete: sides vanished mid-replication");
    Group& lg = lit->second;
    Group& rg = rit->second;
    IntervalId parent_iv = coalesce(left_iv, right_iv);

    DataStore l_union = side_union(lg);
    DataStore r_union = side_union(rg);

    auto cross_refs_of = [&](const Group& side) {
        std::vector<PeerRef> refs;
        for (PeerId m : side.members)
            if (const Peer* p = find_peer(m); p && p->rt.cross)
                refs.insert(refs.end(), p->rt.cross->peers.begin(), p->rt.cross->peers.end());
        return refs;
    };
    std::vector<PeerRef> l_cross = cross_refs_of(lg);
    std::vector<PeerRef> r_cross = cross_refs_of(rg);

    std::vector<PeerId> survivors;
    std::vector<std::pair<std::uint64_t, std::pair<PeerId, QueryMsg>>> deferred;
    for (bool left : {true, false}) {
        Group& side = left ? lg : rg;
        const DataStore& other = left ? r_union : l_union;
        const std::vector<PeerRef>& partner_cross = left ? r_cross : l_cross;
        for (PeerId m : side.members) {
            Peer* p = live_peer(m);
            if (!p) continue;
            survivors.push_back(m);
            for (const auto& [k, e] : other) {
                auto it = p->store.find(k);
                if (it == p->store.end() || newer_than(e, it->second)) p->store[k] = e;
            }
            rt_on_coalesce(p->rt, partner_cross, b_target(*p));
            p->ref.interval = parent_iv;
            p->write_lock = false;
            for (DeferredWrite& dw : p->deferred)
                deferred.emplace_back(dw.order, std::make_pair(m, std::move(dw.query)));
            p->deferred.clear();
        }
    }
    std::sort(survivors.begin(), survivors.end());

    for (Group* side : {&lg, &rg})
        if (side->below_gc_since >= 0) metrics_.degraded_time(sim_.now() - side->below_gc_since);
    groups_.erase(left_iv);
    groups_.erase(right_iv);
    Group merged;
    merged.interval = parent_iv;
    merged.members = survivors;
    groups_[parent_iv] = merged;
    update_degraded(groups_[parent_iv]);

    // deferred inserts/updates are applied in arrival order, exactly once
    std::sort(deferred.begin(), deferred.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    for (auto& [order, entry] : deferred)
        if (Peer* p = live_peer(entry.first)) on_query(*p, std::move(entry.second), true);

    metrics_.coalesce();
    if (invariant_checks_) check_invariants();
    schedule_split_check(groups_[parent_iv]);
    schedule_coalesce_check(groups_[parent_iv]);
}

DataStore Overlay::side_union(const Group& g) const {
    DataStore u;
    for (PeerId m : g.members) {
        const Peer* p = find_peer(m);
        if (!p) continue;
        for (const auto& [k, e] : p->store) {
            auto it = u.find(k);
            if (it == u.end() || newer_than(e, it->second)) u[k] = e;
        }
    }
    return u;
}

// --- workload ------------------------------------------------------------------

void Overlay::start_workload() {
    if (params_.workload.query_rate_per_h <= 0) return;
    workload_running_ = true;
    double gap = 3600.0 / params_.workload.query_rate_per_h;
    sim_.schedule_in(workload_rng_.exponential(gap), [this] { workload_tick(); });
}

void Overlay::workload_tick() {
    if (!workload_running_) return;
    if (quiesce_time_ >= 0 && sim_.now() >= quiesce_time_) {
        workload_running_ = false;
        return;
    }
    double gap = 3600.0 / params_.workload.query_rate_per_h;
    sim_.schedule_in(workload_rng_.exponential(gap), [this] { workload_tick(); });

    if (peers_.empty()) return;
    double r = workload_rng_.uniform01();
    QueryKind kind;
    if (r < params_.workload.lookup_frac) kind = QueryKind::Lookup;
    else if (r < params_.workload.lookup_frac + params_.workload.insert_frac) kind = QueryKind::Insert;
    else kind = QueryKind::Update;

    if (kind == QueryKind::Lookup) {
        if (registry_.empty()) return;
        Key k = registry_[workload_rng_.uniform_int(registry_.size())];
        issue_query(QueryKind::Lookup, k, {});
        return;
    }
    if (kind == QueryKind::Update && !registry_.empty()) {
        Key k = registry_[workload_rng_.uniform_int(registry_.size())];
        issue_query(QueryKind::Update, k, "v" + std::to_string(++insert_counter_));
        return;
    }
    std::string datum = "datum-" + std::to_string(++insert_counter_);
    issue_query(QueryKind::Insert, key_of_datum(datum, params_.keyspace),
                "v" + std::to_string(insert_counter_));
}

void Overlay::finish(double t_end) {
    std::uint64_t max_depth = 0;
    for (const auto& [iv, g] : groups_) max_depth = std::max<std::uint64_t>(max_depth, iv.depth);
    metrics_.topology(groups_.size(), max_depth);
    std::uint64_t pending = 0;
    for (const auto& [qid, o] : outcomes_)
        if (o.state == OutcomeState::Pending && !o.counted) ++pending;
    metrics_.pending_at_end(pending);
    for (auto& [iv, g] : groups_)
        if (g.below_gc_since >= 0) {
            metrics_.degraded_time(t_end - g.below_gc_since);
            g.below_gc_since = -1;
        }
}

// --- transport ------------------------------------------------------------------

void Overlay::send_message(PeerId from, PeerId to, MsgKind kind, Message msg, double extra_drop) {
    metrics_.message(kind);
    net_.send(from, to, [this, to, msg = std::move(msg)] { deliver(to, msg); }, extra_drop);
}

void Overlay::deliver(PeerId to, Message msg) {
    Peer* p = live_peer(to);
    if (!p) return; // crashed or departed receivers drop traffic silently
    std::visit(
        [&](auto&& m) {
            using T = std::decay_t<decltype(m)>;
            if constexpr (std::is_same_v<T, QueryMsg>) {
                on_query(*p, m, false);
            } else if constexpr (std::is_same_v<T, AnswerMsg>) {
                on_answer_record(m.qid, AnswerRecord{m.found, m.value, m.version, m.responder, m.hops});
            } else if constexpr (std::is_same_v<T, FailureMsg>) {
                on_failure(m.qid);
            } else if constexpr (std::is_same_v<T, AdviceMsg>) {
                auto it = std::find_if(p->pending_acks.begin(), p->pending_acks.end(),
                                       [&](const PendingAck& a) { return a.ack_id == m.ack_id; });
                if (it != p->pending_acks.end()) p->pending_acks.erase(it);
            } else if constexpr (std::is_same_v<T, ProbeMsg>) {
                send_message(to, m.from, MsgKind::ProbeReply, ProbeReplyMsg{m.probe_id, to});
            } else if constexpr (std::is_same_v<T, ProbeReplyMsg>) {
                auto it = std::find_if(p->pending_probes.begin(), p->pending_probes.end(),
                                       [&](const PendingProbe& q) { return q.probe_id == m.probe_id; });
                if (it != p->pending_probes.end()) {
                    it->replied = true;
                    p->qf.record(false);
                }
            } else if constexpr (std::is_same_v<T, PingMsg>) {
                send_message(to, m.from, MsgKind::PingReply, PingReplyMsg{m.ping_id, to});
            } else if constexpr (std::is_same_v<T, PingReplyMsg>) {
                auto it = std::find_if(p->pending_pings.begin(), p->pending_pings.end(),
                                       [&](const PendingPing& q) { return q.ping_id == m.ping_id; });
                if (it != p->pending_pings.end()) it->replied = true;
            } else if constexpr (std::is_same_v<T, LeaveNoticeMsg>) {
                auto handle_entry = [&](LinkEntry& e) {
                    bool had = std::any_of(e.peers.begin(), e.peers.end(),
                                           [&](const PeerRef& r) { return r.id == m.from; });
                    if (!had) return;
                    if (e.owner || e.peers.size() <= 1) {
                        std::vector<PeerId> dead{m.from};
                        repair_entry(*p, e, dead);
                    } else {
                        std::erase_if(e.peers, [&](const PeerRef& r) { return r.id == m.from; });
                    }
                };
                for (LinkEntry& e : p->rt.entries) handle_entry(e);
                if (p->rt.cross) handle_entry(*p->rt.cross);
            } else if constexpr (std::is_same_v<T, EvictNoticeMsg>) {
                // falsely suspected: reset and re-place
                handle_join(to, false);
            } else if constexpr (std::is_same_v<T, StoreWriteMsg>) {
                // the receiver may have split or re-placed itself while the
                // write was in flight; it only keeps keys it is responsible for
                if (!contains(p->rt.own_interval, m.key, params_.keyspace)) return;
                auto it = p->store.find(m.key);
                if (it == p->store.end() || newer_than(m.entry, it->second))
                    p->store[m.key] = m.entry;
            }
        },
        msg);
}

// --- invariants -------------------------------------------------------------------

void Overlay::check_invariants() const {
    if (groups_.empty()) {
        if (!peers_.empty()) throw std::logic_error("live peers without any interval group");
        return;
    }
    // the leaves partition [0, 2^l)
    std::vector<std::pair<std::uint64_t, int>> leaves; // (low, width_log2)
    for (const auto& [iv, g] : groups_)
        leaves.emplace_back(interval_low(iv, params_.keyspace),
                            interval_width_log2(iv, params_.keyspace));
    std::sort(leaves.begin(), leaves.end());
    unsigned __int128 expect = 0;
    for (auto& [low, w] : leaves) {
        if (static_cast<unsigned __int128>(low) != expect)
            throw std::logic_error("leaf intervals leave a gap or overlap at key " +
                                   std::to_string(low));
        expect += static_cast<unsigned __int128>(1) << w;
    }
    unsigned __int128 full = static_cast<unsigned __int128>(1) << params_.keyspace.l_bits;
    if (expect != full) throw std::logic_error("leaf intervals do not cover the keyspace");

    for (const auto& [iv, g] : groups_) {
        std::vector<PeerId> sorted = g.members;
        std::sort(sorted.begin(), sorted.end());
        if (sorted != g.members || std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
            throw std::logic_error("group " + to_string(iv) + " member list unsorted or duplicated");
        for (PeerId m : g.members) {
            const Peer* p = find_peer(m);
            if (!p) continue; // crashed members linger until discovered
            if (p->rt.own_interval != iv)
                throw std::logic_error("peer " + std::to_string(m) + " listed in " + to_string(iv) +
                                       " but resides in " + to_string(p->rt.own_interval));
            for (const auto& [k, e] : p->store)
                if (!contains(iv, k, params_.keyspace))
                    throw std::logic_error("peer " + std::to_string(m) + " stores key " +
                                           std::to_string(k.value) + " outside " + to_string(iv));
            check_rt_invariants(p->rt);
        }
    }
}

bool Overlay::group_stores_consistent() const {
    for (const auto& [iv, g] : groups_) {
        const DataStore* first = nullptr;
        for (PeerId m : g.members) {
            const Peer* p = find_peer(m);
            if (!p) continue;
            if (!first) {
                first = &p->store;
            } else if (p->store != *first) {
                return false;
            }
        }
    }
    return true;
}

} // namespace fluctsim
