#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "fluctsim/churn.hpp"
#include "fluctsim/keyspace.hpp"
#include "fluctsim/metrics.hpp"
#include "fluctsim/routing.hpp"
#include "fluctsim/simcore.hpp"

namespace fluctsim {

struct ProtocolParams {
    int g_s = 16;             // split when a group grows past this
    int g_c = 4;              // coalesce when a group falls below this
    double t_ack_s = 0.4;     // delivery-advice timeout
    int max_reissues = 3;
    double anti_entropy_s = 10;
    double heartbeat_s = 30;
};

struct BackupParams {
    double epsilon = 0.01; // target probability that all backups fail
    int window = 50;       // probe outcomes kept for the q_f estimate
    int b_max = 8;
};

struct WorkloadParams {
    double query_rate_per_h = 600; // overlay-wide
    double lookup_frac = 0.8;
    double insert_frac = 0.15;
    double update_frac = 0.05;
};

void validate(const ProtocolParams& p);
void validate(const BackupParams& p);
void validate(const WorkloadParams& p);

struct StoreEntry {
    std::string value;
    std::uint64_t version = 1;
    PeerId origin = 0;
    bool operator==(const StoreEntry&) const = default;
};

// Higher (version, origin) wins when replicas merge.
inline bool newer_than(const StoreEntry& a, const StoreEntry& b) {
    return a.version != b.version ? a.version > b.version : a.origin > b.origin;
}

using DataStore = std::map<Key, StoreEntry>;

// --- messages --------------------------------------------------------------

struct QueryMsg {
    std::uint64_t qid = 0;
    QueryKind kind = QueryKind::Lookup;
    Key key;
    std::string value;   // insert/update payload
    PeerId issuer = 0;
    PeerId prev_hop = 0; // the psi awaiting a delivery advice; 0 at the issuer
    std::uint64_t ack_id = 0;
    int hops = 0;        // network deliveries so far
    int reissue_no = 0;  // 0 = first attempt for this hop
};

struct AnswerMsg {
    std::uint64_t qid = 0;
    Key key;
    bool found = false;
    std::string value;
    std::uint64_t version = 0;
    PeerId responder = 0;
    int hops = 0;
};

struct FailureMsg {
    std::uint64_t qid = 0;
};

struct AdviceMsg {
    std::uint64_t ack_id = 0;
    PeerId from = 0;
};

struct ProbeMsg {
    std::uint64_t probe_id = 0;
    PeerId from = 0;
};
struct ProbeReplyMsg {
    std::uint64_t probe_id = 0;
    PeerId from = 0;
};
struct PingMsg {
    std::uint64_t ping_id = 0;
    PeerId from = 0;
};
struct PingReplyMsg {
    std::uint64_t ping_id = 0;
    PeerId from = 0;
};
struct LeaveNoticeMsg {
    PeerId from = 0;
};
struct EvictNoticeMsg {
    PeerId from = 0;
};
struct StoreWriteMsg {
    Key key;
    StoreEntry entry;
    PeerId from = 0;
};

using Message = std::variant<QueryMsg, AnswerMsg, FailureMsg, AdviceMsg, ProbeMsg, ProbeReplyMsg,
                             PingMsg, PingReplyMsg, LeaveNoticeMsg, EvictNoticeMsg, StoreWriteMsg>;

// --- per-peer state ---------------------------------------------------------

struct PendingAck {
    std::uint64_t ack_id = 0;
    std::uint64_t qid = 0;
    PeerId downstream = 0; // the zeta currently awaited
    PeerId upstream = 0;   // previous psi, 0 at the issuer
    double deadline = 0;
    int reissues_used = 0;
    std::vector<PeerId> tried;
    QueryMsg query; // message template for reissues
    bool done = false;
};

struct PendingProbe {
    std::uint64_t probe_id = 0;
    PeerId target = 0;
    int level = 0; // 0 = cross link
    double deadline = 0;
    bool replied = false;
};

struct PendingPing {
    std::uint64_t ping_id = 0;
    PeerId target = 0;
    double deadline = 0;
    int attempt = 0;
    bool replied = false;
};

struct DeferredWrite {
    std::uint64_t order = 0; // global arrival counter
    QueryMsg query;
};

struct Peer {
    PeerRef ref;
    DataStore store;
    RoutingTable rt;
    QfEstimator qf{50};
    bool write_lock = false;
    std::vector<PendingAck> pending_acks;
    std::vector<PendingProbe> pending_probes;
    std::vector<PendingPing> pending_pings;
    std::vector<DeferredWrite> deferred;
    std::uint32_t timer_epoch = 0; // invalidates stale maintenance timers
};

// --- query resolution at the issuer -----------------------------------------

struct AnswerRecord {
    bool found = false;
    std::string value;
    std::uint64_t version = 0;
    PeerId responder = 0;
    int hops = 0;
};

enum class OutcomeState { Pending, ResolvedFound, ResolvedNotFound, ResolvedApplied, Failed, Unresolved };

struct QueryOutcome {
    std::uint64_t qid = 0;
    QueryKind kind = QueryKind::Lookup;
    Key key;
    std::string value;
    PeerId issuer = 0;
    std::vector<AnswerRecord> answers;
    std::map<std::pair<bool, std::string>, std::size_t> votes; // tally over (found, value)
    std::optional<std::string> resolved_value;
    OutcomeState state = OutcomeState::Pending;
    int duplicate_count = 0;
    int reissues_used = 0;
    int first_hops = -1;
    bool counted = false; // terminal metrics emitted
};

enum class ResolveAction { None, Resolved, NeedReissue, Unresolved };

// Adds one answer and applies the majority rule: resolve when one answer
// value is held by a strict majority of everything received so far, ask for
// a reissue when answers disagree without a majority, give up (consistency
// violation) once the reissue budget is spent.
ResolveAction resolve_answers(QueryOutcome& outcome, const AnswerRecord& incoming,
                              int max_reissues);

// --- the overlay -------------------------------------------------------------

struct Group {
    IntervalId interval;
    std::vector<PeerId> members; // sorted
    bool write_lock = false;
    bool split_scheduled = false;
    bool coalesce_scheduled = false;
    bool coalesce_in_flight = false;
    double below_gc_since = -1;
};

struct OverlayParams {
    KeyspaceConfig keyspace;
    ProtocolParams protocol;
    BackupParams backup;
    WorkloadParams workload;
    int bootstrap_peers = 64;
    int initial_data = 50;
    double horizon_s = 3600;
    std::optional<double> quiesce_at_s; // churn/workload stop, run continues
};

// The peer state machine driven by simulator events. One Overlay instance
// owns every peer of a run; peers interact only through Network messages and
// the deterministic event queue.
class Overlay {
public:
    Overlay(Simulator& sim, Network& net, MetricsCollector& metrics, const OverlayParams& params,
            std::uint64_t seed);

    // run orchestration
    void bootstrap();
    void apply_trace(const ChurnTrace& trace);
    void start_workload();
    void finish(double t_end); // flush pending accounting before metrics finalize

    // protocol entry points (also driven directly by tests)
    PeerId spawn_peer();
    void handle_join(PeerId id, bool count_churn = false);
    void join_into(PeerId id, IntervalId leaf);
    void handle_leave(PeerId id, bool graceful, bool count_churn = false);
    std::uint64_t issue_query(QueryKind kind, Key key, std::string value,
                              std::optional<PeerId> issuer = std::nullopt);

    // introspection
    const KeyspaceConfig& keyspace() const { return params_.keyspace; }
    const std::map<IntervalId, Group>& groups() const { return groups_; }
    const std::map<PeerId, Peer>& peers() const { return peers_; }
    const Peer* find_peer(PeerId id) const;
    Peer* mutable_peer(PeerId id) { return live_peer(id); } // test support
    bool is_live(PeerId id) const { return peers_.count(id) != 0; }
    std::size_t live_count() const { return peers_.size(); }
    const std::map<std::uint64_t, QueryOutcome>& outcomes() const { return outcomes_; }
    const std::vector<Key>& key_registry() const { return registry_; }
    std::vector<PeerRef> members_under(IntervalId prefix) const;

    // invariants (throw std::logic_error on violation)
    void check_invariants() const;
    bool group_stores_consistent() const;
    void set_invariant_checks(bool on) { invariant_checks_ = on; }

    // direct store seeding for bootstrap data (before the run proper)
    void seed_datum(const std::string& datum, const std::string& value);

private:
    // message handling
    void send_message(PeerId from, PeerId to, MsgKind kind, Message msg, double extra_drop = 0);
    void deliver(PeerId to, Message msg);
    void on_query(Peer& zeta, QueryMsg q, bool local);
    void forward_with_ack(Peer& psi, const QueryMsg& q);
    void on_ack_timeout(PeerId psi_id, std::uint64_t ack_id);
    void on_answer_record(std::uint64_t qid, const AnswerRecord& rec);
    void on_failure(std::uint64_t qid);
    void answer_issuer(Peer& responder, const QueryMsg& q, bool found, const std::string& value,
                       std::uint64_t version);
    void apply_write(Peer& zeta, const QueryMsg& q);
    void reissue_from_issuer(QueryOutcome& outcome);

    // group protocols
    void run_split_protocol(IntervalId iv);
    void run_coalesce_protocol(IntervalId iv);
    void coalesce_complete(IntervalId left_iv, IntervalId right_iv);
    void schedule_split_check(Group& g);
    void schedule_coalesce_check(Group& g);
    void group_prune(PeerId dead, IntervalId iv);
    void update_degraded(Group& g);

    // maintenance
    void heartbeat_round(PeerId id);
    void anti_entropy_round(PeerId id);
    void on_probe_timeout(PeerId id, std::uint64_t probe_id);
    void send_ping(PeerId from, PeerId target, int attempt);
    void on_ping_timeout(PeerId id, std::uint64_t ping_id);
    void repair_entry(Peer& p, LinkEntry& entry, std::span<const PeerId> dead);
    void maybe_check_convergence();

    // workload
    void workload_tick();

    Group* group_of(const Peer& p);
    Peer* live_peer(PeerId id);
    int b_target(const Peer& p) const;
    PeerId pick_live_peer(Rng& rng);
    void start_timers(PeerId id);
    DataStore side_union(const Group& g) const;

    Simulator& sim_;
    Network& net_;
    MetricsCollector& metrics_;
    OverlayParams params_;
    Rng proto_rng_;
    Rng workload_rng_;

    std::map<PeerId, Peer> peers_; // live peers only
    std::map<IntervalId, Group> groups_;
    std::map<std::uint64_t, QueryOutcome> outcomes_;
    std::vector<Key> registry_; // keys with confirmed writes
    std::set<std::uint64_t> registered_;

    PeerId next_peer_id_ = 1;
    std::uint64_t next_qid_ = 1;
    std::uint64_t next_ack_id_ = 1;
    std::uint64_t next_probe_id_ = 1;
    std::uint64_t next_ping_id_ = 1;
    std::uint64_t next_deferred_order_ = 1;
    std::uint64_t insert_counter_ = 0;
    std::uint32_t timer_epoch_counter_ = 0;

    bool invariant_checks_ = false;
    bool workload_running_ = false;
    bool converged_recorded_ = false;
    double quiesce_time_ = -1;
};

const char* to_string(OutcomeState s);

} // namespace fluctsim
