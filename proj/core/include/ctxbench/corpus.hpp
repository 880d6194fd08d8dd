#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

namespace ctxbench {

using Timestamp = std::int64_t; ///< milliseconds since the Unix epoch

struct Review {
    std::string user_id;
    std::string item_id;
    double rating = 0.0;
    std::string title;
    std::string text;
    Timestamp timestamp = 0;
    std::string domain;
    std::optional<bool> verified;

    /// Stable identifier for a review, "user_id|item_id|timestamp".
    std::string review_id() const;

    bool operator==(const Review&) const = default;
};

struct ItemMeta {
    std::string item_id;
    std::string domain;
    std::string title;
    std::vector<std::string> features;
    std::vector<std::string> description;

    bool operator==(const ItemMeta&) const = default;
};

struct CorpusStats {
    std::size_t n_reviews = 0;
    std::size_t n_users = 0;
    std::size_t n_items = 0;
    std::size_t n_meta = 0;
    Timestamp min_time = 0;
    Timestamp max_time = 0;
    std::size_t approx_tokens = 0;

    bool operator==(const CorpusStats&) const = default;
};

enum class RecordKind { reviews, metadata };

struct IngestOptions {
    /// Category tag stamped on every record (one file per category).
    std::string domain;
    /// Preferred item key. "parent_asin" falls back to "asin" and vice versa
    /// when the preferred key is missing from a line.
    std::string item_key = "parent_asin";
    /// When non-empty, `domain` must be one of these tags.
    std::vector<std::string> allowed_domains;
};

/// Parses one JSONL line. Returns nullopt for malformed JSON, missing required
/// fields, or values that break the record invariants.
std::optional<Review> parse_review(std::string_view line, const IngestOptions& opts);
std::optional<ItemMeta> parse_item_meta(std::string_view line, const IngestOptions& opts);

/// Canonical single-line JSON forms written by `ctxbench ingest`.
std::string to_jsonl(const Review& r);
std::string to_jsonl(const ItemMeta& m);

/// Lazily reads one record per line. Memory use is bounded by the longest
/// line. Single consumer.
template <typename Record>
class RecordStream {
public:
    RecordStream(const std::filesystem::path& path, IngestOptions opts);

    std::optional<Record> next();

    /// Lines that were skipped because they were malformed or incomplete.
    std::size_t skipped() const { return skipped_; }
    std::size_t lines_read() const { return lines_; }

    class iterator {
    public:
        using iterator_category = std::input_iterator_tag;
        using value_type = Record;
        using difference_type = std::ptrdiff_t;
        using pointer = const Record*;
        using reference = const Record&;

        iterator() = default;
        explicit iterator(RecordStream* s) : stream_(s) { advance(); }

        reference operator*() const { return *current_; }
        pointer operator->() const { return &*current_; }
        iterator& operator++() {
            advance();
            return *this;
        }
        void operator++(int) { advance(); }
        friend bool operator==(const iterator& a, const iterator& b) {
            return a.stream_ == b.stream_;
        }

    private:
        void advance() {
            current_ = stream_->next();
            if (!current_) {
                stream_ = nullptr;
            }
        }

        RecordStream* stream_ = nullptr;
        std::optional<Record> current_;
    };

    iterator begin() { return iterator(this); }
    iterator end() { return iterator(); }

private:
    std::ifstream in_;
    IngestOptions opts_;
    std::string line_;
    std::size_t skipped_ = 0;
    std::size_t lines_ = 0;
};

using ReviewStream = RecordStream<Review>;
using MetaStream = RecordStream<ItemMeta>;

extern template class RecordStream<Review>;
extern template class RecordStream<ItemMeta>;

template <typename Record>
struct Loaded {
    std::vector<Record> records;
    std::size_t skipped = 0;
};

Loaded<Review> load_reviews(const std::filesystem::path& path, const IngestOptions& opts);
Loaded<ItemMeta> load_metadata(const std::filesystem::path& path, const IngestOptions& opts);

/// Incremental statistics so the inputs never need to be materialized.
class StatsAccumulator {
public:
    void add(const Review& r);
    void add(const ItemMeta& m);
    CorpusStats finish() const;

private:
    CorpusStats stats_;
    std::unordered_set<std::string> users_;
    std::unordered_set<std::string> items_;
};

CorpusStats compute_stats(std::span<const Review> reviews, std::span<const ItemMeta> metadata);

} // namespace ctxbench
