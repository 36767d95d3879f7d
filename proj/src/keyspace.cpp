#include "fluctsim/keyspace.hpp"

#include <openssl/sha.h>

namespace fluctsim {

void validate(const KeyspaceConfig& cfg) {
    if (cfg.l_bits < 1 || cfg.l_bits > 64)
        throw std::invalid_argument("keyspace.l_bits: must be in [1, 64], got " +
                                    std::to_string(cfg.l_bits));
}

std::uint64_t interval_low(IntervalId iv, const KeyspaceConfig& cfg) {
    if (iv.depth == 0) return 0;
    return iv.path << (cfg.l_bits - iv.depth);
}

Key key_of_datum(std::string_view datum, const KeyspaceConfig& cfg) {
    if (datum.empty()) throw std::invalid_argument("key_of_datum: empty datum");
    unsigned char digest[SHA256_DIGEST_LENGTH];
    SHA256(reinterpret_cast<const unsigned char*>(datum.data()), datum.size(), digest);
    // big-endian read of the first 8 bytes, then keep the top l_bits
    std::uint64_t top = 0;
    for (int i = 0; i < 8; ++i) top = (top << 8) | digest[i];
    if (cfg.l_bits < 64) top >>= (64 - cfg.l_bits);
    return Key{top};
}

std::pair<IntervalId, IntervalId> split(IntervalId iv, const KeyspaceConfig& cfg) {
    if (iv.depth >= cfg.l_bits)
        throw std::domain_error("split: interval " + to_string(iv) +
                                " is a single key, keyspace exhausted");
    IntervalId left{iv.path << 1, iv.depth + 1};
    IntervalId right{(iv.path << 1) | 1, iv.depth + 1};
    return {left, right};
}

IntervalId coalesce(IntervalId left, IntervalId right) {
    bool siblings = left.depth == right.depth && left.depth > 0 &&
                    (left.path & 1) == 0 && right.path == (left.path | 1);
    if (!siblings)
        throw std::invalid_argument("coalesce: " + to_string(left) + " and " +
                                    to_string(right) + " are not a left/right sibling pair");
    return IntervalId{left.path >> 1, left.depth - 1};
}

bool contains(IntervalId iv, Key k, const KeyspaceConfig& cfg) {
    if (iv.depth == 0) return true;
    return (k.value >> (cfg.l_bits - iv.depth)) == iv.path;
}

std::optional<int> first_diff_level(IntervalId iv, Key k, const KeyspaceConfig& cfg) {
    for (int level = 1; level <= iv.depth; ++level) {
        std::uint64_t path_bit = (iv.path >> (iv.depth - level)) & 1;
        std::uint64_t key_bit = (k.value >> (cfg.l_bits - level)) & 1;
        if (path_bit != key_bit) return level;
    }
    return std::nullopt;
}

bool is_prefix_of(IntervalId prefix, IntervalId iv) {
    if (prefix.depth > iv.depth) return false;
    if (prefix.depth == 0) return true;
    return (iv.path >> (iv.depth - prefix.depth)) == prefix.path;
}

IntervalId flip_level(IntervalId iv, int level) {
    if (level < 1 || level > iv.depth)
        throw std::invalid_argument("flip_level: level " + std::to_string(level) +
                                    " out of range for " + to_string(iv));
    return IntervalId{iv.path ^ (std::uint64_t{1} << (iv.depth - level)), iv.depth};
}

std::string to_string(IntervalId iv) {
    if (iv.depth == 0) return "@";
    std::string s;
    s.reserve(static_cast<std::size_t>(iv.depth));
    for (int level = 1; level <= iv.depth; ++level)
        s += ((iv.path >> (iv.depth - level)) & 1) ? 'r' : 'l';
    return s;
}

IntervalId interval_from_label(std::string_view label) {
    if (label == "@") return root_interval();
    IntervalId iv{0, 0};
    for (char c : label) {
        if (c != 'l' && c != 'r')
            throw std::invalid_argument("interval label: bad symbol '" + std::string(1, c) + "'");
        iv.path = (iv.path << 1) | (c == 'r' ? 1 : 0);
        ++iv.depth;
    }
    return iv;
}

} // namespace fluctsim
