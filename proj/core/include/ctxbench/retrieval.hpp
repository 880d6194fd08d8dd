#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "ctxbench/embedding_store.hpp"

namespace ctxbench {

struct ScoredItem {
    std::string item_id;
    double score = 0.0;

    bool operator==(const ScoredItem&) const = default;
};

/// Scores are non-increasing; equal scores are ordered by ascending id.
using RankedList = std::vector<ScoredItem>;

/// Orders (score desc, id asc).
bool ranks_before(double score_a, std::string_view id_a, double score_b, std::string_view id_b);

/// Top-k selection over `scores[i]` for candidate ordinals in `subset` (or all
/// ordinals when `subset` is null). With `positive_only`, scores <= 0 are
/// dropped.
RankedList select_top_k(std::span<const double> scores, std::span<const std::string> ids,
                        std::size_t k, const std::vector<std::uint32_t>* subset = nullptr,
                        bool positive_only = false);

// ---------------------------------------------------------------------------

struct Bm25Params {
    double k1 = 1.2;
    double b = 0.75;
};

struct Posting {
    std::uint32_t doc = 0;
    std::uint32_t tf = 0;

    bool operator==(const Posting&) const = default;
};

/// Immutable in-memory inverted index.
class Bm25Index {
public:
    struct Document {
        std::string id;
        std::string text;
    };

    /// Throws UsageError on duplicate ids.
    static Bm25Index build(std::span<const Document> docs, Bm25Params params = {});

    std::size_t size() const { return ids_.size(); }
    double avgdl() const { return avgdl_; }
    const Bm25Params& params() const { return params_; }
    const std::vector<std::string>& ids() const { return ids_; }
    const std::vector<std::uint32_t>& doc_lengths() const { return doc_lengths_; }
    /// Postings for a (lowercased) term, ascending by doc ordinal.
    std::span<const Posting> postings(std::string_view term) const;
    std::size_t document_frequency(std::string_view term) const { return postings(term).size(); }

    /// ln(1 + (N - df + 0.5) / (df + 0.5)); never negative.
    double idf(std::size_t df) const;

    /// BM25 score of every document (ordinal order). Each query token
    /// occurrence contributes, so repeated terms count repeatedly.
    std::vector<double> score_all(std::string_view query) const;

    /// Top-k documents with positive score.
    RankedList rank(std::string_view query, std::size_t k) const;

private:
    Bm25Params params_;
    std::vector<std::string> ids_;
    std::vector<std::uint32_t> doc_lengths_;
    double avgdl_ = 0.0;
    std::vector<std::string> terms_;
    std::vector<std::vector<Posting>> postings_;
    std::unordered_map<std::string, std::uint32_t> term_ids_;
};

RankedList bm25_rank(const Bm25Index& index, std::string_view query, std::size_t k);

// ---------------------------------------------------------------------------

/// Row-major float matrix of unit vectors with a parallel id list.
class DenseIndex {
public:
    DenseIndex() = default;
    /// Throws DataError when a row is not unit-norm within 1e-6.
    DenseIndex(std::size_t dim, std::vector<std::string> ids, std::vector<float> rows);

    /// Rows for `ids` taken from the store, in the given order. Missing ids
    /// are reported through `missing` (or throw if it is null).
    static DenseIndex from_store(const EmbeddingStore& store, std::span<const std::string> ids,
                                 std::vector<std::string>* missing = nullptr);

    std::size_t dim() const { return dim_; }
    std::size_t size() const { return ids_.size(); }
    const std::vector<std::string>& ids() const { return ids_; }
    std::span<const float> row(std::size_t i) const { return {rows_.data() + i * dim_, dim_}; }

    /// Dot products with every row, accumulated in double. Throws UsageError
    /// on a dimension mismatch.
    std::vector<double> score_all(std::span<const double> query) const;
    std::vector<double> score_all(std::span<const float> query) const;

    /// Scores for a batch of queries (one per row), blocked over the index
    /// rows. Produces the same values as score_all row by row.
    Matrix score_many(const Matrix& queries) const;

    RankedList rank(std::span<const double> query, std::size_t k) const;

private:
    std::size_t dim_ = 0;
    std::vector<std::string> ids_;
    std::vector<float> rows_;
};

RankedList dense_rank(const DenseIndex& index, std::span<const double> query, std::size_t k);

// ---------------------------------------------------------------------------

enum class PoolMode { shared, per_query };

std::string_view to_string(PoolMode m);
PoolMode parse_pool_mode(std::string_view s);

struct PoolQuery {
    std::string query_id;
    std::string gt_item;
    std::string domain;
    /// Only filled in per_query mode: the sampled items plus the gt item,
    /// sorted.
    std::vector<std::string> private_items;

    bool operator==(const PoolQuery&) const = default;
};

struct CandidatePool {
    PoolMode mode = PoolMode::shared;
    /// Sorted, unique. Always contains every gt item.
    std::vector<std::string> items;
    std::vector<PoolQuery> queries;

    bool contains(std::string_view item) const;
    bool operator==(const CandidatePool&) const = default;
};

struct EvalPair {
    std::string query_id;
    std::string gt_item;
    std::string domain;
};

/// For each query draws `n_per_query` distinct items of the gt item's domain
/// (excluding the gt item itself) with a generator seeded once by `seed`;
/// domains with too few items contribute all of them. The pool is the union
/// of all samples and all gt items.
CandidatePool build_candidate_pool(std::span<const EvalPair> pairs,
                                   const std::map<std::string, std::vector<std::string>>& universe,
                                   std::size_t n_per_query, std::uint64_t seed,
                                   PoolMode mode = PoolMode::shared);

/// Writes `<prefix>.jsonl` ({"query_id","gt_item","domain"} per line, plus
/// "items" in per_query mode) and `<prefix>.ids` (one sorted id per line).
void save_pool(const std::filesystem::path& prefix, const CandidatePool& pool);
CandidatePool load_pool(const std::filesystem::path& prefix);

/// "query_id<TAB>rank<TAB>item_id<TAB>score" with 1-based ranks.
std::string ranked_to_tsv(std::string_view query_id, const RankedList& ranked);

} // namespace ctxbench
