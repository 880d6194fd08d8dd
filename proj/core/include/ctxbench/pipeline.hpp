#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ctxbench/corpus.hpp"
#include "ctxbench/random.hpp"

namespace ctxbench {

/// Train: t < t1, Valid: t1 <= t < t2, Test: t >= t2.
struct SplitBoundaries {
    Timestamp t1 = 0;
    Timestamp t2 = 0;

    bool operator==(const SplitBoundaries&) const = default;
};

enum class Split { train, valid, test };

std::string_view to_string(Split s);

/// Integer ratio such as 8:1:1.
struct SplitRatio {
    std::array<std::uint32_t, 3> parts{8, 1, 1};

    static SplitRatio parse(std::string_view text);
    std::string to_string() const;
};

struct SplitSearchResult {
    SplitBoundaries bounds;
    std::array<std::size_t, 3> counts{};
    /// L1 distance between the realized counts and n * ratio / sum(ratio).
    double deviation = 0.0;
};

/// Chooses (t1, t2) among the observed timestamps (plus max+1, which leaves a
/// split empty) so that the realized train/valid/test counts are as close as
/// possible to the target ratio in L1. Ties prefer the smaller t1, then the
/// smaller t2. Throws DataError when fewer than 3 timestamps are given.
SplitSearchResult find_split_boundaries(std::span<const Timestamp> timestamps,
                                        const SplitRatio& ratio = {});

/// Per-domain variant: one search per category tag.
std::map<std::string, SplitSearchResult>
find_split_boundaries_per_domain(std::span<const Review> reviews, const SplitRatio& ratio = {});

constexpr Split assign_split(Timestamp t, const SplitBoundaries& b) {
    if (t < b.t1) {
        return Split::train;
    }
    return t < b.t2 ? Split::valid : Split::test;
}

inline Split assign_split(const Review& r, const SplitBoundaries& b) {
    return assign_split(r.timestamp, b);
}

struct TrainingPair {
    std::string context;
    std::string metadata;
    std::string item_id;
    std::string domain;
    Timestamp timestamp = 0;

    bool operator==(const TrainingPair&) const = default;
};

inline constexpr std::size_t kDefaultMinChars = 30;

/// Flattened item text: title, features and description joined by spaces.
std::string flatten_metadata(const ItemMeta& meta);

/// Review title and text joined by a space.
std::string review_context(const Review& review);

/// Builds the <context, metadata> pair, or nullopt when either side is
/// shorter than `min_chars` characters. Throws UsageError if the review and
/// metadata refer to different items.
std::optional<TrainingPair> build_pair(const Review& review, const ItemMeta& meta,
                                       std::size_t min_chars = kDefaultMinChars);

/// Independent Bernoulli(fraction) filter driven by a seeded generator. Feed
/// records in a fixed order to get a reproducible selection.
class Downsampler {
public:
    Downsampler(double fraction, std::uint64_t seed);

    bool keep();

private:
    double fraction_;
    Rng rng_;
};

std::vector<TrainingPair> downsample(std::span<const TrainingPair> pairs, double fraction,
                                     std::uint64_t seed);

struct Interaction {
    std::string item_id;
    Timestamp timestamp = 0;

    bool operator==(const Interaction&) const = default;
};

/// One next-item example: up to `max_len` interactions immediately preceding
/// the target, oldest first.
struct SequenceExample {
    std::string user_id;
    std::string domain;
    std::vector<Interaction> history;
    Interaction target;
    Split split = Split::train;

    bool operator==(const SequenceExample&) const = default;
};

inline constexpr std::size_t kDefaultMaxHistory = 50;

/// Groups reviews by (domain, user), orders each group by (timestamp,
/// item_id), and emits one example per interaction after the first. The
/// target's split decides which evaluation set the example belongs to.
/// Output is ordered by domain, user, then target position.
std::vector<SequenceExample> build_sequences(std::span<const Review> reviews,
                                             const SplitBoundaries& bounds,
                                             std::size_t max_len = kDefaultMaxHistory);

std::string to_jsonl(const TrainingPair& p);
std::optional<TrainingPair> parse_training_pair(std::string_view line);
std::string to_jsonl(const SequenceExample& e);
std::optional<SequenceExample> parse_sequence_example(std::string_view line);

} // namespace ctxbench
