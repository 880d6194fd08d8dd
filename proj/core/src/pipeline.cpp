#include "ctxbench/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <limits>

#include <json.hpp>

#include "ctxbench/error.hpp"
#include "ctxbench/text.hpp"

namespace ctxbench {

using nlohmann::json;

std::string_view to_string(Split s) {
    switch (s) {
    case Split::train:
        return "train";
    case Split::valid:
        return "valid";
    case Split::test:
        return "test";
    }
    return "?";
}

namespace {

std::optional<Split> split_from_string(std::string_view s) {
    if (s == "train") {
        return Split::train;
    }
    if (s == "valid") {
        return Split::valid;
    }
    if (s == "test") {
        return Split::test;
    }
    return std::nullopt;
}

} // namespace

SplitRatio SplitRatio::parse(std::string_view text) {
    SplitRatio r;
    std::size_t part = 0;
    std::size_t pos = 0;
    while (part < 3) {
        auto colon = text.find(':', pos);
        auto field = text.substr(pos, colon == std::string_view::npos ? text.size() - pos : colon - pos);
        std::uint32_t value = 0;
        auto [end, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
        if (ec != std::errc{} || end != field.data() + field.size() || value == 0) {
            throw UsageError("ratio must be three positive integers like 8:1:1, got '" +
                             std::string(text) + "'");
        }
        r.parts[part++] = value;
        if (colon == std::string_view::npos) {
            break;
        }
        pos = colon + 1;
    }
    if (part != 3 || text.find(':', pos) != std::string_view::npos) {
        throw UsageError("ratio must have exactly three components: '" + std::string(text) + "'");
    }
    return r;
}

std::string SplitRatio::to_string() const {
    return std::to_string(parts[0]) + ":" + std::to_string(parts[1]) + ":" + std::to_string(parts[2]);
}

SplitSearchResult find_split_boundaries(std::span<const Timestamp> timestamps,
                                        const SplitRatio& ratio) {
    if (timestamps.size() < 3) {
        throw DataError("corpus is unsplittable: need at least 3 timestamps, got " +
                        std::to_string(timestamps.size()));
    }
    for (auto p : ratio.parts) {
        if (p == 0) {
            throw UsageError("ratio components must be positive");
        }
    }

    std::vector<Timestamp> sorted(timestamps.begin(), timestamps.end());
    std::sort(sorted.begin(), sorted.end());

    // Candidate boundaries and, for each, the number of timestamps below it.
    std::vector<Timestamp> cand;
    std::vector<std::int64_t> below;
    for (std::size_t i = 0; i < sorted.size(); ++i) {
        if (i == 0 || sorted[i] != sorted[i - 1]) {
            cand.push_back(sorted[i]);
            below.push_back(static_cast<std::int64_t>(i));
        }
    }
    if (sorted.back() == std::numeric_limits<Timestamp>::max()) {
        throw DataError("timestamp overflow while building split candidates");
    }
    cand.push_back(sorted.back() + 1);
    below.push_back(static_cast<std::int64_t>(sorted.size()));

    // Everything is scaled by R = sum(ratio) so the objective stays integral
    // and ties are exact.
    const auto n = static_cast<std::int64_t>(sorted.size());
    const std::int64_t r_sum = std::int64_t{ratio.parts[0]} + ratio.parts[1] + ratio.parts[2];
    if (n > (std::int64_t{1} << 62) / (r_sum * 3)) {
        throw UsageError("corpus too large for the requested ratio");
    }
    const std::int64_t target0 = n * ratio.parts[0];
    const std::int64_t target1 = n * ratio.parts[1];
    const std::int64_t target2 = n * ratio.parts[2];

    auto tail_cost = [&](std::int64_t a, std::int64_t c) {
        return std::llabs(r_sum * (c - a) - target1) + std::llabs(r_sum * (n - c) - target2);
    };

    const std::size_t m = cand.size();
    std::int64_t best = std::numeric_limits<std::int64_t>::max();
    std::size_t best_i = 0;
    std::size_t best_j = 0;
    for (std::size_t i = 0; i < m; ++i) {
        const std::int64_t a = below[i];
        // tail_cost is convex in c and below[] is strictly increasing, so the
        // first j whose successor is not cheaper is the smallest minimizer.
        std::size_t lo = i;
        std::size_t hi = m - 1;
        while (lo < hi) {
            std::size_t mid = lo + (hi - lo) / 2;
            if (tail_cost(a, below[mid + 1]) >= tail_cost(a, below[mid])) {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        std::int64_t cost = std::llabs(r_sum * a - target0) + tail_cost(a, below[lo]);
        if (cost < best) {
            best = cost;
            best_i = i;
            best_j = lo;
        }
    }

    SplitSearchResult out;
    out.bounds = {cand[best_i], cand[best_j]};
    const auto a = static_cast<std::size_t>(below[best_i]);
    const auto c = static_cast<std::size_t>(below[best_j]);
    out.counts = {a, c - a, sorted.size() - c};
    out.deviation = static_cast<double>(best) / static_cast<double>(r_sum);
    return out;
}

std::map<std::string, SplitSearchResult>
find_split_boundaries_per_domain(std::span<const Review> reviews, const SplitRatio& ratio) {
    std::map<std::string, std::vector<Timestamp>> by_domain;
    for (const auto& r : reviews) {
        by_domain[r.domain].push_back(r.timestamp);
    }
    std::map<std::string, SplitSearchResult> out;
    for (const auto& [domain, ts] : by_domain) {
        out.emplace(domain, find_split_boundaries(ts, ratio));
    }
    return out;
}

std::string flatten_metadata(const ItemMeta& meta) {
    std::vector<std::string_view> parts;
    parts.reserve(1 + meta.features.size() + meta.description.size());
    parts.emplace_back(meta.title);
    for (const auto& f : meta.features) {
        parts.emplace_back(f);
    }
    for (const auto& d : meta.description) {
        parts.emplace_back(d);
    }
    return join_nonempty(parts);
}

std::string review_context(const Review& review) {
    std::array<std::string_view, 2> parts{review.title, review.text};
    return join_nonempty(parts);
}

std::optional<TrainingPair> build_pair(const Review& review, const ItemMeta& meta,
                                       std::size_t min_chars) {
    if (review.item_id != meta.item_id) {
        throw UsageError("build_pair: review item '" + review.item_id +
                         "' does not match metadata item '" + meta.item_id + "'");
    }
    TrainingPair p;
    p.context = review_context(review);
    if (utf8_length(p.context) < min_chars) {
        return std::nullopt;
    }
    p.metadata = flatten_metadata(meta);
    if (utf8_length(p.metadata) < min_chars) {
        return std::nullopt;
    }
    p.item_id = review.item_id;
    p.domain = review.domain;
    p.timestamp = review.timestamp;
    return p;
}

Downsampler::Downsampler(double fraction, std::uint64_t seed) : fraction_(fraction), rng_(seed) {
    if (!(fraction > 0.0 && fraction <= 1.0)) {
        throw UsageError("downsample fraction must be in (0, 1]");
    }
}

bool Downsampler::keep() {
    return uniform_unit(rng_) < fraction_;
}

std::vector<TrainingPair> downsample(std::span<const TrainingPair> pairs, double fraction,
                                     std::uint64_t seed) {
    Downsampler sampler(fraction, seed);
    std::vector<TrainingPair> out;
    for (const auto& p : pairs) {
        if (sampler.keep()) {
            out.push_back(p);
        }
    }
    return out;
}

std::vector<SequenceExample> build_sequences(std::span<const Review> reviews,
                                             const SplitBoundaries& bounds, std::size_t max_len) {
    std::map<std::pair<std::string, std::string>, std::vector<Interaction>> groups;
    for (const auto& r : reviews) {
        groups[{r.domain, r.user_id}].push_back({r.item_id, r.timestamp});
    }

    std::vector<SequenceExample> out;
    for (auto& [key, events] : groups) {
        std::sort(events.begin(), events.end(), [](const Interaction& a, const Interaction& b) {
            return a.timestamp != b.timestamp ? a.timestamp < b.timestamp : a.item_id < b.item_id;
        });
        for (std::size_t k = 1; k < events.size(); ++k) {
            SequenceExample ex;
            ex.domain = key.first;
            ex.user_id = key.second;
            const std::size_t start = k > max_len ? k - max_len : 0;
            ex.history.assign(events.begin() + static_cast<std::ptrdiff_t>(start),
                              events.begin() + static_cast<std::ptrdiff_t>(k));
            ex.target = events[k];
            ex.split = assign_split(ex.target.timestamp, bounds);
            out.push_back(std::move(ex));
        }
    }
    return out;
}

std::string to_jsonl(const TrainingPair& p) {
    json j = {{"context", p.context},
              {"metadata", p.metadata},
              {"item_id", p.item_id},
              {"domain", p.domain},
              {"timestamp", p.timestamp}};
    return j.dump();
}

std::optional<TrainingPair> parse_training_pair(std::string_view line) {
    auto j = json::parse(line.begin(), line.end(), nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
        return std::nullopt;
    }
    try {
        TrainingPair p;
        p.context = j.at("context").get<std::string>();
        p.metadata = j.at("metadata").get<std::string>();
        p.item_id = j.at("item_id").get<std::string>();
        p.domain = j.value("domain", std::string{});
        p.timestamp = j.value("timestamp", Timestamp{0});
        return p;
    } catch (const json::exception&) {
        return std::nullopt;
    }
}

std::string to_jsonl(const SequenceExample& e) {
    json history = json::array();
    for (const auto& h : e.history) {
        history.push_back(h.item_id);
    }
    json j = {{"user_id", e.user_id},
              {"history", std::move(history)},
              {"target", e.target.item_id},
              {"split", std::string(to_string(e.split))},
              {"domain", e.domain}};
    return j.dump();
}

std::optional<SequenceExample> parse_sequence_example(std::string_view line) {
    auto j = json::parse(line.begin(), line.end(), nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
        return std::nullopt;
    }
    try {
        SequenceExample e;
        e.user_id = j.at("user_id").get<std::string>();
        for (const auto& h : j.at("history")) {
            e.history.push_back({h.get<std::string>(), 0});
        }
        e.target.item_id = j.at("target").get<std::string>();
        auto split = split_from_string(j.at("split").get<std::string>());
        if (!split) {
            return std::nullopt;
        }
        e.split = *split;
        e.domain = j.value("domain", std::string{});
        return e;
    } catch (const json::exception&) {
        return std::nullopt;
    }
}

} // namespace ctxbench
