#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "fluctsim/protocol.hpp"

using namespace fluctsim;

namespace {

OverlayParams small_params(int g_c = 2, int g_s = 4, int l = 8) {
    OverlayParams op;
    op.keyspace.l_bits = l;
    op.protocol.g_c = g_c;
    op.protocol.g_s = g_s;
    op.protocol.t_ack_s = 0.4;
    op.protocol.heartbeat_s = 30;
    op.protocol.anti_entropy_s = 10;
    op.workload.query_rate_per_h = 0;
    op.bootstrap_peers = 0;
    op.initial_data = 0;
    op.horizon_s = 7200;
    return op;
}

NetworkModel lossless() {
    NetworkModel nm;
    nm.q_f_link = 0;
    return nm;
}

struct Harness {
    Simulator sim;
    Rng net_rng;
    Network net;
    MetricsCollector metrics;
    Overlay overlay;

    explicit Harness(const OverlayParams& op, const NetworkModel& nm = lossless(),
                     std::uint64_t seed = 1)
        : net_rng(mix_seed(seed ^ 0x6e6574ULL)), net(sim, nm, net_rng),
          overlay(sim, net, metrics, op, seed) {
        metrics.run_started(0, op.horizon_s);
    }

    PeerId join() {
        PeerId id = overlay.spawn_peer();
        overlay.handle_join(id);
        sim.run_until(sim.now());
        return id;
    }

    void join_n(int n) {
        for (int i = 0; i < n; ++i) join();
    }

    void settle(double dt) { sim.run_until(sim.now() + dt); }

    IntervalId only_group() const {
        REQUIRE(overlay.groups().size() == 1);
        return overlay.groups().begin()->first;
    }

    // a datum whose key lands inside iv
    std::string datum_in(IntervalId iv, int salt = 0) const {
        for (int i = salt;; ++i) {
            std::string d = "d" + std::to_string(i);
            if (contains(iv, key_of_datum(d, overlay.keyspace()), overlay.keyspace())) return d;
        }
    }

    // mid-run counter snapshot: finalize a copy, the live collector stays open
    RunReport snapshot() const {
        MetricsCollector copy = metrics;
        return copy.finalize(sim.now());
    }
};

} // namespace

TEST_CASE("resolve_answers follows the strict-majority rule") {
    AnswerRecord v1{true, "v1", 1, 10, 2};
    AnswerRecord v2{true, "v2", 1, 11, 2};

    SUBCASE("equal answers resolve immediately") {
        QueryOutcome o;
        o.kind = QueryKind::Lookup;
        CHECK(resolve_answers(o, v1, 2) == ResolveAction::Resolved);
        CHECK(o.state == OutcomeState::ResolvedFound);
        CHECK(*o.resolved_value == "v1");
        CHECK(resolve_answers(o, v1, 2) == ResolveAction::Resolved);
        CHECK(o.duplicate_count == 1);
    }
    SUBCASE("a conflicting pair asks for a reissue, resolved by 2-of-3") {
        QueryOutcome o;
        o.kind = QueryKind::Lookup;
        resolve_answers(o, v1, 2);
        CHECK(resolve_answers(o, v2, 2) == ResolveAction::NeedReissue);
        ++o.reissues_used;
        CHECK(resolve_answers(o, v1, 2) == ResolveAction::Resolved);
        CHECK(*o.resolved_value == "v1");
        CHECK(o.answers.size() == 3);
    }
    SUBCASE("exhausted budget without a majority is a consistency violation") {
        QueryOutcome o;
        o.kind = QueryKind::Lookup;
        resolve_answers(o, v1, 0);
        CHECK(resolve_answers(o, v2, 0) == ResolveAction::Unresolved);
        CHECK(o.state == OutcomeState::Unresolved);
    }
    SUBCASE("write confirmations resolve as applied") {
        QueryOutcome o;
        o.kind = QueryKind::Insert;
        CHECK(resolve_answers(o, AnswerRecord{true, "x", 1, 4, 0}, 2) == ResolveAction::Resolved);
        CHECK(o.state == OutcomeState::ResolvedApplied);
    }
    SUBCASE("matching not-found answers resolve definitively") {
        QueryOutcome o;
        o.kind = QueryKind::Lookup;
        AnswerRecord miss{false, "", 0, 4, 1};
        resolve_answers(o, miss, 2);
        CHECK(resolve_answers(o, miss, 2) == ResolveAction::Resolved);
        CHECK(o.state == OutcomeState::ResolvedNotFound);
        CHECK(!o.resolved_value.has_value());
    }
}

TEST_CASE("the first peer bootstraps the root interval") {
    Harness h(small_params());
    PeerId id = h.join();
    REQUIRE(h.overlay.live_count() == 1);
    const Peer* p = h.overlay.find_peer(id);
    REQUIRE(p);
    CHECK(p->rt.own_interval == root_interval());
    CHECK(p->rt.entries.empty());
    CHECK(p->store.empty());
    CHECK(h.only_group() == root_interval());
}

TEST_CASE("exceeding g_s splits the group into balanced halves") {
    Harness h(small_params(2, 4));
    h.join_n(4);
    CHECK(h.overlay.groups().size() == 1); // g_s not exceeded yet
    h.join();                              // fifth -> split
    REQUIRE(h.overlay.groups().size() == 2);
    std::vector<std::size_t> sizes;
    for (const auto& [iv, g] : h.overlay.groups()) {
        CHECK(iv.depth == 1);
        sizes.push_back(g.members.size());
        CHECK(g.members.size() >= 2); // >= g_c
    }
    CHECK(std::abs(static_cast<int>(sizes[0]) - static_cast<int>(sizes[1])) <= 1);
    h.overlay.check_invariants();
}

TEST_CASE("splits keep every stored key inside its owner's interval") {
    Harness h(small_params(2, 4, 8));
    h.join();
    for (int i = 0; i < 12; ++i)
        h.overlay.seed_datum("datum-" + std::to_string(i), "v");
    h.join_n(12); // forces a couple of splits
    CHECK(h.overlay.groups().size() >= 2);
    h.overlay.check_invariants(); // covers key-responsibility containment

    // no datum was lost in the shuffle
    std::set<std::uint64_t> seen;
    for (const auto& [id, p] : h.overlay.peers())
        for (const auto& [k, e] : p.store) seen.insert(k.value);
    CHECK(seen.size() == h.overlay.key_registry().size());
}

TEST_CASE("the t4 topology: mirror intervals get connected when the second split happens") {
    Harness h(small_params(2, 4, 4));
    h.join_n(5); // root splits: l1 + r1
    REQUIRE(h.overlay.groups().size() == 2);

    // grow l1 until it splits into ll2/lr2 (t3)
    IntervalId l1 = interval_from_label("l");
    while (h.overlay.groups().count(l1)) {
        PeerId id = h.overlay.spawn_peer();
        h.overlay.handle_join(id); // uniform target; force into l1 when needed
        if (h.overlay.groups().count(l1) &&
            h.overlay.find_peer(id)->rt.own_interval != l1) {
            h.overlay.handle_leave(id, true);
            h.overlay.join_into(id, l1);
        }
        h.sim.run_until(h.sim.now());
    }
    REQUIRE(h.overlay.groups().count(interval_from_label("ll")));
    REQUIRE(h.overlay.groups().count(interval_from_label("lr")));

    // at t3 the mirror subtree r1 is not split: no cross links yet
    for (PeerId m : h.overlay.groups().at(interval_from_label("ll")).members)
        CHECK(!h.overlay.find_peer(m)->rt.cross.has_value());

    // grow r1 until it splits into rl2/rr2 (t4)
    IntervalId r1 = interval_from_label("r");
    while (h.overlay.groups().count(r1)) {
        PeerId id = h.overlay.spawn_peer();
        h.overlay.handle_join(id);
        if (h.overlay.groups().count(r1) &&
            h.overlay.find_peer(id)->rt.own_interval != r1) {
            h.overlay.handle_leave(id, true);
            h.overlay.join_into(id, r1);
        }
        h.sim.run_until(h.sim.now());
    }
    REQUIRE(h.overlay.groups().count(interval_from_label("rl")));
    REQUIRE(h.overlay.groups().count(interval_from_label("rr")));

    auto members_of = [&](const char* label) {
        return h.overlay.groups().at(interval_from_label(label)).members;
    };
    auto is_member = [](const std::vector<PeerId>& ms, PeerId id) {
        return std::find(ms.begin(), ms.end(), id) != ms.end();
    };

    // rl2 peers: level-1 entry toward l, level-2 entry toward rr2, cross to ll2
    for (PeerId m : members_of("rl")) {
        const Peer* p = h.overlay.find_peer(m);
        REQUIRE(p->rt.entries.size() == 2);
        CHECK(p->rt.entries[0].target_prefix == interval_from_label("l"));
        CHECK(p->rt.entries[1].target_prefix == interval_from_label("rr"));
        REQUIRE(p->rt.cross.has_value());
        CHECK(p->rt.cross->target_prefix == interval_from_label("ll"));
        for (const PeerRef& r : p->rt.cross->peers) CHECK(is_member(members_of("ll"), r.id));
    }
    // and the left-with-left link is mutual: ll2 peers point back at rl2
    bool ll_has_cross = false;
    for (PeerId m : members_of("ll")) {
        const Peer* p = h.overlay.find_peer(m);
        if (!p->rt.cross) continue;
        ll_has_cross = true;
        CHECK(p->rt.cross->target_prefix == interval_from_label("rl"));
        for (const PeerRef& r : p->rt.cross->peers) CHECK(is_member(members_of("rl"), r.id));
    }
    CHECK(ll_has_cross);
    // right-with-right likewise
    for (PeerId m : members_of("rr")) {
        const Peer* p = h.overlay.find_peer(m);
        REQUIRE(p->rt.cross.has_value());
        CHECK(p->rt.cross->target_prefix == interval_from_label("lr"));
    }
    // exactly one side owns each cross pair
    IntervalId rl = interval_from_label("rl"), ll = interval_from_label("ll");
    CHECK(assign_link_ownership(rl, ll) == ll);
    h.overlay.check_invariants();
}

TEST_CASE("a graceful leave below g_c coalesces with the sibling leaf") {
    Harness h(small_params(2, 4));
    h.join_n(5);
    REQUIRE(h.overlay.groups().size() == 2);
    for (int i = 0; i < 6; ++i)
        h.overlay.seed_datum("datum-" + std::to_string(i), "v");

    // pick the smaller group and shrink it under g_c
    auto groups = h.overlay.groups();
    auto small = groups.begin()->second.members.size() <= std::next(groups.begin())->second.members.size()
                     ? groups.begin()
                     : std::next(groups.begin());
    PeerId leaver = small->second.members.front();
    h.overlay.handle_leave(leaver, true);
    h.settle(2.0); // replication window

    REQUIRE(h.overlay.groups().size() == 1);
    CHECK(h.only_group() == root_interval());
    const Group& g = h.overlay.groups().begin()->second;
    CHECK(g.members.size() == 4);
    CHECK(!g.write_lock);
    // every member holds the union of both stores
    for (PeerId m : g.members)
        CHECK(h.overlay.find_peer(m)->store.size() == h.overlay.key_registry().size());
    CHECK(h.overlay.group_stores_consistent());
    h.overlay.check_invariants();
}

TEST_CASE("coalesce costs |G_l|*|data_r| + |G_r|*|data_l| and defers writes") {
    auto op = small_params(2, 4, 8);
    Harness h(op);
    h.join_n(5);
    REQUIRE(h.overlay.groups().size() == 2);
    IntervalId left = interval_from_label("l");
    IntervalId right = interval_from_label("r");

    // exact store sizes: 2 keys on the left, 3 on the right
    int in_left = 0, in_right = 0, salt = 0;
    while (in_left < 2 || in_right < 3) {
        std::string d = "d" + std::to_string(salt++);
        Key k = key_of_datum(d, h.overlay.keyspace());
        bool goes_left = contains(left, k, h.overlay.keyspace());
        if (goes_left && in_left < 2) {
            h.overlay.seed_datum(d, "v");
            ++in_left;
        } else if (!goes_left && in_right < 3) {
            h.overlay.seed_datum(d, "v");
            ++in_right;
        }
    }

    auto groups = h.overlay.groups();
    std::size_t left_n = groups.at(left).members.size();
    std::size_t right_n = groups.at(right).members.size();
    // shrink the smaller side under g_c so the leave triggers the coalesce
    bool left_shrinks = left_n <= right_n;
    PeerId leaver = left_shrinks ? groups.at(left).members.front()
                                 : groups.at(right).members.front();
    std::size_t exp_left_n = left_n - (left_shrinks ? 1 : 0);
    std::size_t exp_right_n = right_n - (left_shrinks ? 0 : 1);
    // members_l * |data_r| + members_r * |data_l| with stores (2, 3)
    std::uint64_t expected_repl = exp_left_n * 3 + exp_right_n * 2;

    h.overlay.handle_leave(leaver, true);
    h.sim.run_until(h.sim.now()); // coalesce starts, locks engage
    bool locked = false;
    for (const auto& [iv, g] : h.overlay.groups()) locked |= g.write_lock;
    REQUIRE(locked);

    // a write arriving mid-replication is deferred until it ends
    std::string d = h.datum_in(left, 1000);
    Key k = key_of_datum(d, h.overlay.keyspace());
    IntervalId lock_holder = left;
    PeerId issuer = h.overlay.groups().at(lock_holder).members.front();
    std::uint64_t qid = h.overlay.issue_query(QueryKind::Insert, k, "deferred-payload", issuer);
    h.sim.run_until(h.sim.now());
    CHECK(h.overlay.outcomes().at(qid).state == OutcomeState::Pending);

    h.settle(5.0);
    REQUIRE(h.overlay.groups().size() == 1);
    const Group& merged = h.overlay.groups().begin()->second;
    CHECK(!merged.write_lock);

    // applied exactly once, after replication, visible everywhere
    CHECK(h.overlay.outcomes().at(qid).state == OutcomeState::ResolvedApplied);
    for (PeerId m : merged.members) {
        const Peer* p = h.overlay.find_peer(m);
        auto it = p->store.find(k);
        REQUIRE(it != p->store.end());
        CHECK(it->second.value == "deferred-payload");
        CHECK(it->second.version == 1);
        CHECK(p->store.size() == 6); // 2 + 3 + the deferred one
    }

    RunReport r = h.metrics.finalize(h.sim.now());
    CHECK(r.msgs_by_kind.at("coalesce_repl_item") == expected_repl);
    CHECK(r.writes_applied == 1);
    CHECK(r.coalesces == 1);
}

TEST_CASE("a crash is discovered within a heartbeat round and triggers coalesce") {
    Harness h(small_params(2, 4));
    h.join_n(5);
    REQUIRE(h.overlay.groups().size() == 2);
    auto groups = h.overlay.groups();
    auto small = groups.begin()->second.members.size() <= std::next(groups.begin())->second.members.size()
                     ? groups.begin()
                     : std::next(groups.begin());
    REQUIRE(small->second.members.size() == 2);
    PeerId victim = small->second.members.front();

    h.overlay.handle_leave(victim, false); // silent crash
    CHECK(h.overlay.groups().size() == 2); // nobody noticed yet

    double t_ack = 0.4;
    h.settle(30 + 4 * t_ack + 1.0); // heartbeat period + ping retries
    CHECK(h.overlay.groups().size() == 1);
    CHECK(!h.overlay.is_live(victim));

    // stale refs to the victim are gone after one more repair round
    h.settle(31);
    for (const auto& [id, p] : h.overlay.peers()) {
        for (const LinkEntry& e : p.rt.entries)
            for (const PeerRef& r : e.peers) CHECK(r.id != victim);
        if (p.rt.cross)
            for (const PeerRef& r : p.rt.cross->peers) CHECK(r.id != victim);
    }
    h.overlay.check_invariants();
}

TEST_CASE("after crashes the surviving neighbors still answer every lookup") {
    Harness h(small_params(2, 8, 8));
    h.join_n(9); // splits into (5, 4)
    REQUIRE(h.overlay.groups().size() == 2);
    for (int i = 0; i < 10; ++i) h.overlay.seed_datum("datum-" + std::to_string(i), "v");

    auto groups = h.overlay.groups();
    auto big = groups.begin()->second.members.size() >= std::next(groups.begin())->second.members.size()
                   ? groups.begin()
                   : std::next(groups.begin());
    IntervalId hit_iv = big->first;
    auto other_iv = big == groups.begin() ? std::next(groups.begin())->first : groups.begin()->first;
    REQUIRE(big->second.members.size() == 5);

    // three of five crash; two survivors are >= g_c, so no coalesce
    for (int i = 0; i < 3; ++i)
        h.overlay.handle_leave(big->second.members[static_cast<std::size_t>(i)], false);
    h.settle(40); // discovery + repair
    REQUIRE(h.overlay.groups().count(hit_iv));
    CHECK(h.overlay.groups().at(hit_iv).members.size() == 2);

    PeerId issuer = h.overlay.groups().at(other_iv).members.front();
    int asked = 0;
    std::vector<std::uint64_t> qids;
    for (Key k : h.overlay.key_registry()) {
        if (!contains(hit_iv, k, h.overlay.keyspace())) continue;
        ++asked;
        qids.push_back(h.overlay.issue_query(QueryKind::Lookup, k, {}, issuer));
    }
    REQUIRE(asked > 0);
    h.settle(10);
    for (std::uint64_t qid : qids)
        CHECK(h.overlay.outcomes().at(qid).state == OutcomeState::ResolvedFound);
}

TEST_CASE("writes propagate to the whole group and versions increase") {
    Harness h(small_params(2, 8));
    h.join_n(3);
    IntervalId iv = h.only_group();
    PeerId issuer = h.overlay.groups().at(iv).members[0];
    std::string d = h.datum_in(iv);
    Key k = key_of_datum(d, h.overlay.keyspace());

    std::uint64_t q1 = h.overlay.issue_query(QueryKind::Insert, k, "first", issuer);
    h.settle(2);
    CHECK(h.overlay.outcomes().at(q1).state == OutcomeState::ResolvedApplied);
    for (PeerId m : h.overlay.groups().at(iv).members) {
        auto it = h.overlay.find_peer(m)->store.find(k);
        REQUIRE(it != h.overlay.find_peer(m)->store.end());
        CHECK(it->second.version == 1);
    }

    std::uint64_t q2 = h.overlay.issue_query(QueryKind::Update, k, "second", issuer);
    h.settle(2);
    CHECK(h.overlay.outcomes().at(q2).state == OutcomeState::ResolvedApplied);
    for (PeerId m : h.overlay.groups().at(iv).members) {
        auto& e = h.overlay.find_peer(m)->store.at(k);
        CHECK(e.version == 2);
        CHECK(e.value == "second");
    }
    CHECK(h.overlay.group_stores_consistent());
}

TEST_CASE("anti-entropy reconciles a missing entry and then goes quiet") {
    auto op = small_params(2, 8);
    Harness h(op);
    h.join_n(2);
    IntervalId iv = h.only_group();
    PeerId a = h.overlay.groups().at(iv).members[0];
    std::string d = h.datum_in(iv);
    Key k = key_of_datum(d, h.overlay.keyspace());
    h.overlay.mutable_peer(a)->store[k] = StoreEntry{"fresh", 1, a};
    CHECK(!h.overlay.group_stores_consistent());

    h.settle(2 * op.protocol.anti_entropy_s + 1);
    CHECK(h.overlay.group_stores_consistent());

    // identical stores: summaries continue, no data items move
    RunReport mid = h.snapshot();
    h.settle(4 * op.protocol.anti_entropy_s);
    RunReport r = h.metrics.finalize(h.sim.now());
    CHECK(r.msgs_by_kind.at("anti_entropy_item") == mid.msgs_by_kind.at("anti_entropy_item"));
    CHECK(r.msgs_by_kind.at("anti_entropy_item") == 1);
    CHECK(r.msgs_by_kind.at("anti_entropy_summary") > mid.msgs_by_kind.at("anti_entropy_summary"));
}

TEST_CASE("one fresh update spreads through a group within 5*log2(g) rounds") {
    for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
        auto op = small_params(2, 32);
        Harness h(op, lossless(), seed);
        h.join_n(16);
        IntervalId iv = h.only_group();
        PeerId origin = h.overlay.groups().at(iv).members[0];
        std::string d = h.datum_in(iv);
        Key k = key_of_datum(d, h.overlay.keyspace());
        h.overlay.mutable_peer(origin)->store[k] = StoreEntry{"rumor", 1, origin};

        double bound = 5 * std::log2(16.0) * op.protocol.anti_entropy_s;
        double start = h.sim.now();
        bool spread = false;
        while (h.sim.now() - start < bound) {
            h.settle(op.protocol.anti_entropy_s);
            bool all = true;
            for (PeerId m : h.overlay.groups().at(iv).members)
                all = all && h.overlay.find_peer(m)->store.count(k);
            if (all) {
                spread = true;
                break;
            }
        }
        CHECK(spread);
    }
}

TEST_CASE("uniform joins grow a random binary tree of logarithmic depth") {
    auto op = small_params(4, 16, 16);
    Harness h(op);
    h.join_n(1000);

    double overlay_mean = 0;
    for (const auto& [iv, g] : h.overlay.groups()) overlay_mean += iv.depth;
    overlay_mean /= static_cast<double>(h.overlay.groups().size());

    // oracle: the pure leaf-counter process with the same thresholds
    double oracle_mean = 0;
    const int reps = 30;
    Rng rng(404);
    for (int rep = 0; rep < reps; ++rep) {
        std::map<IntervalId, int> leaves{{root_interval(), 0}};
        for (int i = 0; i < 1000; ++i) {
            auto it = std::next(leaves.begin(),
                                static_cast<std::ptrdiff_t>(rng.uniform_int(leaves.size())));
            it->second += 1;
            if (it->second > 16 && it->first.depth < 16) {
                auto [l, r] = split(it->first, KeyspaceConfig{16});
                int n = it->second;
                leaves.erase(it);
                leaves[l] = (n + 1) / 2;
                leaves[r] = n / 2;
            }
        }
        double m = 0;
        for (const auto& [iv, n] : leaves) m += iv.depth;
        oracle_mean += m / static_cast<double>(leaves.size());
    }
    oracle_mean /= reps;

    CHECK(overlay_mean > 1);
    CHECK(std::abs(overlay_mean - oracle_mean) <= 0.15 * oracle_mean + 0.3);
    // logarithmic, not linear: a random tree over 1000 joins stays shallow
    CHECK(overlay_mean < 3 * std::log2(1000.0 / 16) + 3);
}

TEST_CASE("heartbeats probe exactly the active link per entry plus the cross link") {
    auto op = small_params(2, 4, 8);
    Harness h(op);
    h.join_n(10); // a few splits
    h.settle(100); // let estimators and trims stabilize

    std::uint64_t expected_per_round = 0;
    for (const auto& [id, p] : h.overlay.peers()) {
        for (const LinkEntry& e : p.rt.entries)
            if (!e.peers.empty()) ++expected_per_round;
        if (p.rt.cross && !p.rt.cross->peers.empty()) ++expected_per_round;
    }
    REQUIRE(expected_per_round > 0);

    // count probe messages over exactly three heartbeat periods
    RunReport a = h.snapshot();
    h.settle(3 * op.protocol.heartbeat_s);
    RunReport b = h.snapshot();
    CHECK(b.msgs_by_kind.at("probe") - a.msgs_by_kind.at("probe") == 3 * expected_per_round);
}

TEST_CASE("a dead first choice is bypassed via the backup link") {
    auto op = small_params(3, 6, 8);
    op.protocol.heartbeat_s = 1e6; // freeze repairs: the ack path must cope alone
    op.protocol.anti_entropy_s = 1e6;
    op.backup.epsilon = 1e-9; // pins b at b_max
    op.backup.b_max = 3;
    Harness h(op);
    h.join_n(7); // split into (4, 3)
    REQUIRE(h.overlay.groups().size() == 2);
    for (int i = 0; i < 8; ++i) h.overlay.seed_datum("datum-" + std::to_string(i), "v");

    auto groups = h.overlay.groups();
    IntervalId left = groups.begin()->first;
    IntervalId right = std::next(groups.begin())->first;
    PeerId src = groups.at(left).members.front();
    const Peer* sp = h.overlay.find_peer(src);
    REQUIRE(!sp->rt.entries.empty());
    const LinkEntry& e = sp->rt.entries[0];
    REQUIRE(e.peers.size() >= 2);
    PeerId first_choice = e.peers[0].id;

    h.overlay.handle_leave(first_choice, false); // silent crash, no repair coming

    Key k;
    bool found_key = false;
    for (Key rk : h.overlay.key_registry())
        if (contains(right, rk, h.overlay.keyspace())) {
            k = rk;
            found_key = true;
            break;
        }
    REQUIRE(found_key);
    std::uint64_t qid = h.overlay.issue_query(QueryKind::Lookup, k, {}, src);
    h.settle(5);

    CHECK(h.overlay.outcomes().at(qid).state == OutcomeState::ResolvedFound);
    RunReport r = h.metrics.finalize(h.sim.now());
    CHECK(r.reissues >= 1);
    CHECK(r.duplicate_queries == 0); // the original forwarder was dead
}

TEST_CASE("a slow forwarder causes duplicate queries and duplicate answers") {
    auto op = small_params(3, 6, 8);
    op.protocol.t_ack_s = 0.2;
    NetworkModel nm = lossless();
    nm.latency_s_lo = 0.5; // advice can never beat the deadline
    nm.latency_s_hi = 0.6;
    Harness h(op, nm);
    h.join_n(7);
    for (int i = 0; i < 8; ++i) h.overlay.seed_datum("datum-" + std::to_string(i), "v");

    auto groups = h.overlay.groups();
    IntervalId left = groups.begin()->first;
    IntervalId right = std::next(groups.begin())->first;
    PeerId src = groups.at(left).members.front();
    Key k;
    bool found_key = false;
    for (Key rk : h.overlay.key_registry())
        if (contains(right, rk, h.overlay.keyspace())) {
            k = rk;
            found_key = true;
        }
    REQUIRE(found_key);

    std::uint64_t qid = h.overlay.issue_query(QueryKind::Lookup, k, {}, src);
    h.settle(20);
    const QueryOutcome& o = h.overlay.outcomes().at(qid);
    CHECK(o.state == OutcomeState::ResolvedFound);
    CHECK(o.answers.size() >= 2); // the paper's duplication case
    RunReport r = h.metrics.finalize(h.sim.now());
    CHECK(r.duplicate_queries >= 1);
    CHECK(r.duplicate_answers >= 1);
}

TEST_CASE("generous timeouts produce zero spurious reissues") {
    auto op = small_params(2, 4, 8);
    op.protocol.t_ack_s = 0.4; // 4x the maximum latency of 0.1
    Harness h(op);
    h.join_n(10);
    for (int i = 0; i < 10; ++i) h.overlay.seed_datum("datum-" + std::to_string(i), "v");

    for (int i = 0; i < 200; ++i) {
        Key k = h.overlay.key_registry()[static_cast<std::size_t>(i) %
                                         h.overlay.key_registry().size()];
        h.overlay.issue_query(QueryKind::Lookup, k, {});
        h.settle(0.05);
    }
    h.settle(5);
    RunReport r = h.metrics.finalize(h.sim.now());
    CHECK(r.reissues == 0);
    CHECK(r.duplicate_queries == 0);
    CHECK(r.lookups_found == r.lookups_issued);
}

TEST_CASE("route exhaustion is a counted failure") {
    auto op = small_params(2, 4, 8);
    op.protocol.heartbeat_s = 1e6;
    op.protocol.anti_entropy_s = 1e6;
    op.protocol.max_reissues = 5;
    Harness h(op);
    h.join_n(5);
    REQUIRE(h.overlay.groups().size() == 2);
    for (int i = 0; i < 6; ++i) h.overlay.seed_datum("datum-" + std::to_string(i), "v");

    auto groups = h.overlay.groups();
    IntervalId left = groups.begin()->first;
    IntervalId right = std::next(groups.begin())->first;

    // kill the whole right side silently; no repair can help
    for (PeerId m : groups.at(right).members) h.overlay.handle_leave(m, false);

    PeerId src = h.overlay.groups().at(left).members.front();
    Key k;
    for (Key rk : h.overlay.key_registry())
        if (contains(right, rk, h.overlay.keyspace())) k = rk;
    std::uint64_t qid = h.overlay.issue_query(QueryKind::Lookup, k, {}, src);
    h.settle(30);

    CHECK(h.overlay.outcomes().at(qid).state == OutcomeState::Failed);
    RunReport r = h.metrics.finalize(h.sim.now());
    CHECK(r.failed_queries == 1);
}

TEST_CASE("joins avoid groups with no live member") {
    auto op = small_params(2, 4, 8);
    op.protocol.heartbeat_s = 1e6; // discovery frozen: the dead group lingers
    Harness h(op);
    h.join_n(5);
    REQUIRE(h.overlay.groups().size() == 2);
    auto groups = h.overlay.groups();
    IntervalId left = groups.begin()->first;
    IntervalId right = std::next(groups.begin())->first;
    for (PeerId m : groups.at(right).members) h.overlay.handle_leave(m, false);

    // every new join lands in the live subtree, never in the dead leaf
    for (int i = 0; i < 5; ++i) {
        PeerId id = h.join();
        CHECK(is_prefix_of(left, h.overlay.find_peer(id)->rt.own_interval));
    }
}
