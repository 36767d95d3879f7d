#include "fluctsim/scenario.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace fluctsim {

namespace {

std::string fmt_g(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

struct Field {
    std::string section; // empty = top level
    std::string key;
    std::string value;
    std::size_t line;
};

std::vector<Field> tokenize(std::string_view text) {
    std::vector<Field> fields;
    std::string section;
    std::size_t lineno = 0;
    std::istringstream in{std::string(text)};
    std::string raw;
    while (std::getline(in, raw)) {
        ++lineno;
        std::string_view line = trim(raw);
        if (line.empty() || line.front() == '#') continue;
        if (line == "}") {
            if (section.empty())
                throw std::invalid_argument("scenario line " + std::to_string(lineno) +
                                            ": '}' outside a section");
            section.clear();
            continue;
        }
        if (line.back() == '{') {
            if (!section.empty())
                throw std::invalid_argument("scenario line " + std::to_string(lineno) +
                                            ": nested sections are not supported");
            section = std::string(trim(line.substr(0, line.size() - 1)));
            if (section.empty())
                throw std::invalid_argument("scenario line " + std::to_string(lineno) +
                                            ": section without a name");
            continue;
        }
        std::size_t sp = line.find_first_of(" \t");
        if (sp == std::string_view::npos)
            throw std::invalid_argument("scenario line " + std::to_string(lineno) +
                                        ": expected 'key value'");
        Field f;
        f.section = section;
        f.key = std::string(line.substr(0, sp));
        f.value = std::string(trim(line.substr(sp)));
        f.line = lineno;
        fields.push_back(std::move(f));
    }
    if (!section.empty())
        throw std::invalid_argument("scenario: unterminated section '" + section + "'");
    return fields;
}

[[noreturn]] void bad_field(const Field& f, const std::string& why) {
    std::string name = f.section.empty() ? f.key : f.section + "." + f.key;
    throw std::invalid_argument("scenario line " + std::to_string(f.line) + ": field '" + name +
                                "': " + why);
}

double parse_double(const Field& f) {
    try {
        std::size_t pos = 0;
        double v = std::stod(f.value, &pos);
        if (pos != f.value.size()) throw std::invalid_argument("");
        return v;
    } catch (...) {
        bad_field(f, "expected a number, got '" + f.value + "'");
    }
}

std::int64_t parse_int(const Field& f) {
    try {
        std::size_t pos = 0;
        std::int64_t v = std::stoll(f.value, &pos);
        if (pos != f.value.size()) throw std::invalid_argument("");
        return v;
    } catch (...) {
        bad_field(f, "expected an integer, got '" + f.value + "'");
    }
}

std::uint64_t parse_u64(const Field& f) {
    try {
        std::size_t pos = 0;
        std::uint64_t v = std::stoull(f.value, &pos);
        if (pos != f.value.size()) throw std::invalid_argument("");
        return v;
    } catch (...) {
        bad_field(f, "expected an unsigned integer, got '" + f.value + "'");
    }
}

PartitionWindow parse_partition(const Field& f) {
    std::istringstream in(f.value);
    PartitionWindow w;
    std::string peers;
    if (!(in >> w.start_s >> w.end_s >> peers))
        bad_field(f, "expected '<start_s> <end_s> <id,id,...>'");
    std::istringstream ps(peers);
    std::string tok;
    while (std::getline(ps, tok, ','))
        if (!tok.empty()) w.peers.push_back(std::stoull(tok));
    if (w.peers.empty()) bad_field(f, "partition needs at least one peer id");
    return w;
}

} // namespace

Scenario parse_scenario(std::string_view text) {
    Scenario s;
    for (const Field& f : tokenize(text)) {
        const std::string& sec = f.section;
        const std::string& k = f.key;
        if (sec.empty()) {
            if (k == "seed") s.seed = parse_u64(f);
            else if (k == "horizon_h") s.horizon_h = parse_double(f);
            else if (k == "bootstrap_peers") s.bootstrap_peers = static_cast<int>(parse_int(f));
            else if (k == "initial_data") s.initial_data = static_cast<int>(parse_int(f));
            else if (k == "quiesce_at_h") s.quiesce_at_h = parse_double(f);
            else bad_field(f, "unknown field");
        } else if (sec == "keyspace") {
            if (k == "l_bits") s.keyspace.l_bits = static_cast<int>(parse_int(f));
            else if (k == "digest") s.digest = f.value;
            else bad_field(f, "unknown field");
        } else if (sec == "protocol") {
            if (k == "g_s") s.protocol.g_s = static_cast<int>(parse_int(f));
            else if (k == "g_c") s.protocol.g_c = static_cast<int>(parse_int(f));
            else if (k == "t_ack_s") s.protocol.t_ack_s = parse_double(f);
            else if (k == "max_reissues") s.protocol.max_reissues = static_cast<int>(parse_int(f));
            else if (k == "anti_entropy_s") s.protocol.anti_entropy_s = parse_double(f);
            else if (k == "heartbeat_s") s.protocol.heartbeat_s = parse_double(f);
            else bad_field(f, "unknown field");
        } else if (sec == "backup") {
            if (k == "epsilon") s.backup.epsilon = parse_double(f);
            else if (k == "window") s.backup.window = static_cast<int>(parse_int(f));
            else if (k == "b_max") s.backup.b_max = static_cast<int>(parse_int(f));
            else bad_field(f, "unknown field");
        } else if (sec == "network") {
            if (k == "latency_s_lo") s.network.latency_s_lo = parse_double(f);
            else if (k == "latency_s_hi") s.network.latency_s_hi = parse_double(f);
            else if (k == "q_f_link") s.network.q_f_link = parse_double(f);
            else if (k == "drop_first_attempt_prob") s.network.drop_first_attempt_prob = parse_double(f);
            else if (k == "partition") s.network.partitions.push_back(parse_partition(f));
            else bad_field(f, "unknown field");
        } else if (sec == "churn") {
            if (k == "base_rate_per_h") s.churn.base_rate_per_h = parse_double(f);
            else if (k == "diurnal_amplitude") s.churn.diurnal_amplitude = parse_double(f);
            else if (k == "period_h") s.churn.period_h = parse_double(f);
            else if (k == "session") {
                if (f.value == "exponential") s.churn.session_dist = SessionDist::Exponential;
                else if (f.value == "pareto") s.churn.session_dist = SessionDist::Pareto;
                else bad_field(f, "expected 'exponential' or 'pareto'");
            } else if (k == "session_mean_min") s.churn.session_mean_min = parse_double(f);
            else if (k == "pareto_shape") s.churn.pareto_shape = parse_double(f);
            else if (k == "pareto_scale_min") s.churn.pareto_scale_min = parse_double(f);
            else if (k == "crash_fraction") s.churn.crash_fraction = parse_double(f);
            else bad_field(f, "unknown field");
        } else if (sec == "workload") {
            if (k == "query_rate_per_h") s.workload.query_rate_per_h = parse_double(f);
            else if (k == "lookup_frac") s.workload.lookup_frac = parse_double(f);
            else if (k == "insert_frac") s.workload.insert_frac = parse_double(f);
            else if (k == "update_frac") s.workload.update_frac = parse_double(f);
            else bad_field(f, "unknown field");
        } else {
            bad_field(f, "unknown section '" + sec + "'");
        }
    }
    validate_scenario(s);
    return s;
}

Scenario load_scenario(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open scenario file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_scenario(buf.str());
}

void validate_scenario(const Scenario& s) {
    validate(s.keyspace);
    validate(s.protocol);
    validate(s.backup);
    validate(s.network);
    validate(s.churn);
    validate(s.workload);
    if (s.horizon_h <= 0) throw std::invalid_argument("horizon_h: must be > 0");
    if (s.bootstrap_peers < 1) throw std::invalid_argument("bootstrap_peers: must be >= 1");
    if (s.initial_data < 0) throw std::invalid_argument("initial_data: must be >= 0");
    if (s.quiesce_at_h && (*s.quiesce_at_h <= 0 || *s.quiesce_at_h > s.horizon_h))
        throw std::invalid_argument("quiesce_at_h: must be in (0, horizon_h]");
    if (s.digest != "sha256")
        throw std::invalid_argument("keyspace.digest: only 'sha256' is supported");
}

std::string serialize_scenario(const Scenario& s) {
    std::ostringstream o;
    o << "seed " << s.seed << '\n';
    o << "horizon_h " << fmt_g(s.horizon_h) << '\n';
    o << "bootstrap_peers " << s.bootstrap_peers << '\n';
    o << "initial_data " << s.initial_data << '\n';
    if (s.quiesce_at_h) o << "quiesce_at_h " << fmt_g(*s.quiesce_at_h) << '\n';
    o << '\n';
    o << "keyspace {\n";
    o << "  l_bits " << s.keyspace.l_bits << '\n';
    o << "  digest " << s.digest << '\n';
    o << "}\n\n";
    o << "protocol {\n";
    o << "  g_s " << s.protocol.g_s << '\n';
    o << "  g_c " << s.protocol.g_c << '\n';
    o << "  t_ack_s " << fmt_g(s.protocol.t_ack_s) << '\n';
    o << "  max_reissues " << s.protocol.max_reissues << '\n';
    o << "  anti_entropy_s " << fmt_g(s.protocol.anti_entropy_s) << '\n';
    o << "  heartbeat_s " << fmt_g(s.protocol.heartbeat_s) << '\n';
    o << "}\n\n";
    o << "backup {\n";
    o << "  epsilon " << fmt_g(s.backup.epsilon) << '\n';
    o << "  window " << s.backup.window << '\n';
    o << "  b_max " << s.backup.b_max << '\n';
    o << "}\n\n";
    o << "network {\n";
    o << "  latency_s_lo " << fmt_g(s.network.latency_s_lo) << '\n';
    o << "  latency_s_hi " << fmt_g(s.network.latency_s_hi) << '\n';
    o << "  q_f_link " << fmt_g(s.network.q_f_link) << '\n';
    o << "  drop_first_attempt_prob " << fmt_g(s.network.drop_first_attempt_prob) << '\n';
    for (const PartitionWindow& w : s.network.partitions) {
        o << "  partition " << fmt_g(w.start_s) << ' ' << fmt_g(w.end_s) << ' ';
        for (std::size_t i = 0; i < w.peers.size(); ++i)
            o << (i ? "," : "") << w.peers[i];
        o << '\n';
    }
    o << "}\n\n";
    o << "churn {\n";
    o << "  base_rate_per_h " << fmt_g(s.churn.base_rate_per_h) << '\n';
    o << "  diurnal_amplitude " << fmt_g(s.churn.diurnal_amplitude) << '\n';
    o << "  period_h " << fmt_g(s.churn.period_h) << '\n';
    o << "  session " << (s.churn.session_dist == SessionDist::Pareto ? "pareto" : "exponential")
      << '\n';
    o << "  session_mean_min " << fmt_g(s.churn.session_mean_min) << '\n';
    o << "  pareto_shape " << fmt_g(s.churn.pareto_shape) << '\n';
    o << "  pareto_scale_min " << fmt_g(s.churn.pareto_scale_min) << '\n';
    o << "  crash_fraction " << fmt_g(s.churn.crash_fraction) << '\n';
    o << "}\n\n";
    o << "workload {\n";
    o << "  query_rate_per_h " << fmt_g(s.workload.query_rate_per_h) << '\n';
    o << "  lookup_frac " << fmt_g(s.workload.lookup_frac) << '\n';
    o << "  insert_frac " << fmt_g(s.workload.insert_frac) << '\n';
    o << "  update_frac " << fmt_g(s.workload.update_frac) << '\n';
    o << "}\n";
    return o.str();
}

} // namespace fluctsim
