#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "ctxbench/corpus.hpp"
#include "ctxbench/embedding_store.hpp"
#include "ctxbench/pipeline.hpp"
#include "ctxbench/retrieval.hpp"
#include "ctxbench/trainer.hpp"

namespace ctxbench {

// ---------------------------------------------------------------------------
// Single-relevant-item metrics

/// 1-based rank of `gt` in `ranked`, if present.
std::optional<std::size_t> rank_of(const RankedList& ranked, std::string_view gt);

/// 1 / log2(rank + 1) when gt is ranked within the first k, else 0.
double ndcg_at_k(const RankedList& ranked, std::string_view gt, std::size_t k);

/// 1 when gt is ranked within the first k (inclusive), else 0.
double recall_at_k(const RankedList& ranked, std::string_view gt, std::size_t k);

double ndcg_for_rank(std::size_t rank, std::size_t k);

// ---------------------------------------------------------------------------

struct MetricReport {
    std::string task;
    std::string model;
    /// Metric reported as the scalar "All" in JSON output.
    std::string primary_metric;
    std::map<std::string, std::map<std::string, double>> per_domain;
    /// Unweighted mean over the domains in per_domain.
    std::map<std::string, double> all;
    /// Mean over individual examples (diagnostic only).
    std::map<std::string, double> micro;
    std::map<std::string, std::size_t> examples_per_domain;
    std::size_t evaluated = 0;
    std::size_t excluded = 0;
    std::string note;

    std::string to_json() const;
    /// Inverse of to_json. Throws DataError on malformed input.
    static MetricReport from_json(std::string_view text);
    std::string to_table() const;
    /// task,model,domain,metric,value rows including an "All" domain.
    std::string to_csv(bool header = true) const;

    bool operator==(const MetricReport&) const = default;
};

/// Per-example metric values grouped by domain.
struct MetricAccumulator {
    std::map<std::string, std::map<std::string, double>> sums;
    std::map<std::string, std::size_t> counts;

    void add(const std::string& domain, const std::map<std::string, double>& values);
    /// Fills per_domain, all, micro and counts. Domains are visited in
    /// sorted order, so the reduction is deterministic.
    void finish(MetricReport& report) const;
};

// ---------------------------------------------------------------------------
// Product search

enum class TaskKind { conventional_search, complex_search, seqrec };

std::string_view to_string(TaskKind k);
TaskKind parse_task_kind(std::string_view s);

struct EvalQuery {
    std::string query_id;
    std::string text;
    std::string gt_item;
    std::string domain;
};

struct EvalTask {
    std::string name;
    TaskKind kind = TaskKind::complex_search;
    std::vector<EvalQuery> queries;
};

/// Reads JSONL with "qid"|"query_id", "query", "item_id"|"gt_item", "domain".
EvalTask load_eval_task(const std::filesystem::path& path, TaskKind kind, std::string name = {});

std::vector<EvalPair> eval_pairs(const EvalTask& task);

/// Scores every candidate of a fixed item list for a query.
class SearchRetriever {
public:
    virtual ~SearchRetriever() = default;
    virtual std::string name() const = 0;
    virtual const std::vector<std::string>& ids() const = 0;
    virtual std::vector<double> score_all(const EvalQuery& query) const = 0;
    /// Drop candidates whose score is not positive (BM25).
    virtual bool positive_only() const { return false; }
};

/// BM25 over the flattened metadata of each pool item that has metadata.
class Bm25Retriever final : public SearchRetriever {
public:
    Bm25Retriever(std::span<const std::string> items,
                  const std::unordered_map<std::string, const ItemMeta*>& metadata,
                  Bm25Params params = {});

    std::string name() const override { return "bm25"; }
    const std::vector<std::string>& ids() const override { return index_.ids(); }
    std::vector<double> score_all(const EvalQuery& query) const override;
    bool positive_only() const override { return true; }

    const Bm25Index& index() const { return index_; }

private:
    Bm25Index index_;
};

using QueryEmbedder = std::function<std::optional<Vector>(const EvalQuery&)>;

/// Cosine scoring against item vectors; queries are embedded on demand.
class DenseRetriever final : public SearchRetriever {
public:
    DenseRetriever(std::string name, DenseIndex index, QueryEmbedder embed_query);

    std::string name() const override { return name_; }
    const std::vector<std::string>& ids() const override { return index_.ids(); }
    std::vector<double> score_all(const EvalQuery& query) const override;

    const DenseIndex& index() const { return index_; }

private:
    std::string name_;
    DenseIndex index_;
    QueryEmbedder embed_query_;
};

/// Query embedder for the hashing encoder.
QueryEmbedder encoder_query_embedder(std::shared_ptr<const ToyEncoderParams> params);
/// Query embedder that looks up precomputed vectors by query id.
QueryEmbedder store_query_embedder(std::shared_ptr<const EmbeddingStore> store);

struct SearchEvalOptions {
    std::size_t k = 100;
    /// 0 picks the hardware concurrency.
    std::size_t threads = 0;
    /// Called once per evaluated query, in task order, with its ranking.
    std::function<void(const EvalQuery&, const RankedList&)> on_ranked;
};

/// Ranks each query against the whole pool (or its private pool) and
/// reports NDCG@k and Recall@k per domain with a macro "All". Queries whose
/// gt item is not rankable (missing from the pool or from the retriever's
/// item list) are excluded and counted.
MetricReport evaluate_search(const EvalTask& task, const SearchRetriever& retriever,
                             const CandidatePool& pool, const SearchEvalOptions& opts = {});

// ---------------------------------------------------------------------------
// Next-item baseline

struct SeqRecOptions {
    std::vector<std::size_t> ks{10, 50};
    /// Number of most recent history items averaged into the user vector.
    std::size_t recent = 10;
    std::size_t threads = 0;
};

/// Embedding-similarity baseline: score(candidate) = cos(mean of the last
/// `recent` history vectors, candidate vector), ranked within the target's
/// domain. Examples with no usable history or an unembedded target are
/// skipped and counted as excluded.
MetricReport evaluate_seqrec(std::span<const SequenceExample> examples, const EmbeddingStore& store,
                             const std::map<std::string, std::vector<std::string>>& candidates,
                             const SeqRecOptions& opts = {});

struct SeqRecSelection {
    std::string selected;
    std::vector<std::pair<std::string, MetricReport>> validation;
    MetricReport test;
};

/// Picks the store with the best validation "All" NDCG@10 (first wins ties)
/// and reports its test metrics.
SeqRecSelection select_and_evaluate_seqrec(
    const std::vector<std::pair<std::string, std::shared_ptr<const EmbeddingStore>>>& stores,
    std::span<const SequenceExample> examples,
    const std::map<std::string, std::vector<std::string>>& candidates, const SeqRecOptions& opts = {});

// ---------------------------------------------------------------------------
// Ablation matrix

struct AblationConfig {
    std::string label;
    TrainConfig config;
};

struct AblationTask {
    std::string name;
    EvalTask task;
    CandidatePool pool;
};

struct AblationRow {
    std::string label;
    bool ok = false;
    std::string error;
    std::map<std::string, MetricReport> reports; ///< keyed by task name
};

struct AblationTable {
    std::vector<std::string> tasks;
    std::vector<std::string> metrics;
    std::vector<AblationRow> rows;

    /// Value for (label, task, metric) from the "All" column.
    std::optional<double> value(std::string_view label, std::string_view task, std::string_view metric) const;

    std::string to_json() const;
    std::string to_csv() const;
    std::string to_text() const;
};

std::string to_json(const AblationRow& row);
AblationRow ablation_row_from_json(std::string_view text);

/// Optional row cache so an interrupted grid can resume.
struct AblationCache {
    std::function<std::optional<AblationRow>(const AblationConfig&)> lookup;
    std::function<void(const AblationConfig&, const AblationRow&)> store;
};

/// The all-domains vs. single-domain and scratch vs. auxiliary-pretrained
/// grid around `base`.
std::vector<AblationConfig> standard_ablation_configs(const TrainConfig& base, const std::string& target_domain);

/// Trains every config, embeds the items of each task's pool, and runs dense
/// search evaluation. A failing config yields a row with ok = false; the rest
/// still run.
AblationTable run_ablation_matrix(std::span<const AblationConfig> configs,
                                  std::span<const AblationTask> tasks,
                                  std::span<const TrainingPair> pairs,
                                  std::span<const ItemMeta> metadata,
                                  const SearchEvalOptions& opts = {}, const AblationCache* cache = nullptr);

} // namespace ctxbench
