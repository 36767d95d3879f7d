#pragma once

#include <compare>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>

namespace fluctsim {

struct KeyspaceConfig {
    int l_bits = 16; // number of key bits, keys live in [0, 2^l_bits)
};

void validate(const KeyspaceConfig& cfg); // throws std::invalid_argument

// A search key. Invariant: value < 2^l_bits for the configured keyspace.
struct Key {
    std::uint64_t value = 0;
    auto operator<=>(const Key&) const = default;
};

// A dyadic interval of the keyspace, identified by its bit path from the
// root. `path` holds the top `depth` bits shared by all contained keys,
// level 1 in the most significant position; 0 = left half, 1 = right half.
// Root is (path=0, depth=0). Covered range is [low, low + 2^(l-depth)) with
// low = path << (l - depth).
struct IntervalId {
    std::uint64_t path = 0;
    int depth = 0;
    auto operator<=>(const IntervalId&) const = default;
};

inline IntervalId root_interval() { return IntervalId{0, 0}; }

// Lower bound of the covered range.
std::uint64_t interval_low(IntervalId iv, const KeyspaceConfig& cfg);

// log2 of the number of keys covered (avoids overflow at depth 0, l = 64).
inline int interval_width_log2(IntervalId iv, const KeyspaceConfig& cfg) {
    return cfg.l_bits - iv.depth;
}

// Key for a datum: top l_bits of a SHA-256 digest of the bytes.
// Throws std::invalid_argument on an empty datum.
Key key_of_datum(std::string_view datum, const KeyspaceConfig& cfg);

// Halve an interval. Throws std::domain_error once depth == l_bits
// (keyspace exhausted). Left child covers keys below the midpoint.
std::pair<IntervalId, IntervalId> split(IntervalId iv, const KeyspaceConfig& cfg);

// Merge a sibling pair back into its parent. Throws std::invalid_argument
// unless `left` and `right` are the left/right children of the same parent.
IntervalId coalesce(IntervalId left, IntervalId right);

bool contains(IntervalId iv, Key k, const KeyspaceConfig& cfg);

// 1-based index of the first level where k's most significant bits disagree
// with the interval path; nullopt iff contains(iv, k). The smallest ancestor
// of iv containing k is the path prefix of length (level - 1).
std::optional<int> first_diff_level(IntervalId iv, Key k, const KeyspaceConfig& cfg);

inline bool is_left_child(IntervalId iv) { return iv.depth > 0 && (iv.path & 1) == 0; }

inline IntervalId parent(IntervalId iv) {
    if (iv.depth == 0) throw std::domain_error("root interval has no parent");
    return IntervalId{iv.path >> 1, iv.depth - 1};
}

inline IntervalId sibling(IntervalId iv) {
    if (iv.depth == 0) throw std::domain_error("root interval has no sibling");
    return IntervalId{iv.path ^ 1, iv.depth};
}

// True when `prefix` is an ancestor of (or equal to) `iv`.
bool is_prefix_of(IntervalId prefix, IntervalId iv);

// Interval at the same depth with the bit at `level` flipped, truncated to
// the full depth (i.e. only that one bit differs).
IntervalId flip_level(IntervalId iv, int level);

// "lr"-style label used in logs and error messages; root prints as "@".
std::string to_string(IntervalId iv);

// Parses labels produced by to_string (e.g. "ll", "rlr", "@").
IntervalId interval_from_label(std::string_view label);

} // namespace fluctsim
