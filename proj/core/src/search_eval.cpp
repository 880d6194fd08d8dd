#include <fstream>

#include <json.hpp>

#include "ctxbench/error.hpp"
#include "ctxbench/evalbench.hpp"
#include "ctxbench/text.hpp"
#include "parallel.hpp"

namespace ctxbench {

using nlohmann::json;

std::string_view to_string(TaskKind k) {
    switch (k) {
    case TaskKind::conventional_search:
        return "conventional_search";
    case TaskKind::complex_search:
        return "complex_search";
    case TaskKind::seqrec:
        return "seqrec";
    }
    return "?";
}

TaskKind parse_task_kind(std::string_view s) {
    if (s == "conventional_search") {
        return TaskKind::conventional_search;
    }
    if (s == "complex_search") {
        return TaskKind::complex_search;
    }
    if (s == "seqrec") {
        return TaskKind::seqrec;
    }
    throw UsageError("unknown task kind '" + std::string(s) + "'");
}

namespace {

std::string first_string(const json& j, std::initializer_list<const char*> keys) {
    for (const char* k : keys) {
        auto it = j.find(k);
        if (it == j.end()) {
            continue;
        }
        if (it->is_string()) {
            return it->get<std::string>();
        }
        if (it->is_number_integer() || it->is_number_unsigned()) {
            return it->dump();
        }
    }
    throw DataError(std::string("missing field '") + *keys.begin() + "'");
}

} // namespace

EvalTask load_eval_task(const std::filesystem::path& path, TaskKind kind, std::string name) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot read " + path.string());
    }
    EvalTask task;
    task.name = name.empty() ? path.stem().string() : std::move(name);
    task.kind = kind;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) {
            continue;
        }
        try {
            auto j = json::parse(line);
            EvalQuery q;
            q.query_id = first_string(j, {"qid", "query_id"});
            q.text = first_string(j, {"query"});
            q.gt_item = first_string(j, {"item_id", "gt_item", "parent_asin"});
            q.domain = first_string(j, {"domain", "category"});
            task.queries.push_back(std::move(q));
        } catch (const std::exception& e) {
            throw DataError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return task;
}

std::vector<EvalPair> eval_pairs(const EvalTask& task) {
    std::vector<EvalPair> out;
    out.reserve(task.queries.size());
    for (const auto& q : task.queries) {
        out.push_back({q.query_id, q.gt_item, q.domain});
    }
    return out;
}

Bm25Retriever::Bm25Retriever(std::span<const std::string> items,
                             const std::unordered_map<std::string, const ItemMeta*>& metadata,
                             Bm25Params params) {
    std::vector<Bm25Index::Document> docs;
    docs.reserve(items.size());
    for (const auto& id : items) {
        auto it = metadata.find(id);
        if (it == metadata.end()) {
            continue;
        }
        docs.push_back({id, flatten_metadata(*it->second)});
    }
    index_ = Bm25Index::build(docs, params);
}

std::vector<double> Bm25Retriever::score_all(const EvalQuery& query) const {
    return index_.score_all(query.text);
}

DenseRetriever::DenseRetriever(std::string name, DenseIndex index, QueryEmbedder embed_query)
    : name_(std::move(name)), index_(std::move(index)), embed_query_(std::move(embed_query)) {}

std::vector<double> DenseRetriever::score_all(const EvalQuery& query) const {
    auto v = embed_query_(query);
    if (!v) {
        return {};
    }
    return index_.score_all(std::span<const double>(v->data(), static_cast<std::size_t>(v->size())));
}

QueryEmbedder encoder_query_embedder(std::shared_ptr<const ToyEncoderParams> params) {
    return [params = std::move(params)](const EvalQuery& q) -> std::optional<Vector> {
        return encode(*params, q.text);
    };
}

QueryEmbedder store_query_embedder(std::shared_ptr<const EmbeddingStore> store) {
    return [store = std::move(store)](const EvalQuery& q) -> std::optional<Vector> {
        auto v = store->vector(q.query_id);
        if (!v) {
            return std::nullopt;
        }
        Vector out(static_cast<Eigen::Index>(v->size()));
        for (std::size_t i = 0; i < v->size(); ++i) {
            out[static_cast<Eigen::Index>(i)] = (*v)[i];
        }
        return out;
    };
}

MetricReport evaluate_search(const EvalTask& task, const SearchRetriever& retriever,
                             const CandidatePool& pool, const SearchEvalOptions& opts) {
    if (opts.k == 0) {
        throw UsageError("evaluate_search: k must be >= 1");
    }
    const auto& ids = retriever.ids();
    std::unordered_map<std::string_view, std::uint32_t> ordinal;
    ordinal.reserve(ids.size());
    for (std::uint32_t i = 0; i < ids.size(); ++i) {
        ordinal.emplace(ids[i], i);
    }
    auto ordinals_of = [&](const std::vector<std::string>& items) {
        std::vector<std::uint32_t> out;
        out.reserve(items.size());
        for (const auto& id : items) {
            auto it = ordinal.find(id);
            if (it != ordinal.end()) {
                out.push_back(it->second);
            }
        }
        return out;
    };
    const auto shared_subset = ordinals_of(pool.items);
    std::unordered_map<std::string_view, const PoolQuery*> pool_queries;
    for (const auto& pq : pool.queries) {
        pool_queries.emplace(pq.query_id, &pq);
    }

    const auto n = task.queries.size();
    std::vector<std::optional<RankedList>> ranked(n);
    detail::parallel_for(n, opts.threads, [&](std::size_t i) {
        const auto& q = task.queries[i];
        if (!ordinal.contains(q.gt_item)) {
            return;
        }
        std::vector<std::uint32_t> private_subset;
        const std::vector<std::uint32_t>* subset = &shared_subset;
        if (pool.mode == PoolMode::per_query) {
            auto it = pool_queries.find(q.query_id);
            if (it == pool_queries.end()) {
                return;
            }
            private_subset = ordinals_of(it->second->private_items);
            subset = &private_subset;
        } else if (!pool.contains(q.gt_item)) {
            return;
        }
        auto scores = retriever.score_all(q);
        if (scores.size() != ids.size()) {
            return; // query could not be embedded
        }
        ranked[i] = select_top_k(scores, ids, opts.k, subset, retriever.positive_only());
    });

    MetricReport report;
    report.task = task.name;
    report.model = retriever.name();
    const std::string ndcg = "NDCG@" + std::to_string(opts.k);
    const std::string recall = "Recall@" + std::to_string(opts.k);
    report.primary_metric = ndcg;
    MetricAccumulator acc;
    for (std::size_t i = 0; i < n; ++i) {
        const auto& q = task.queries[i];
        if (!ranked[i]) {
            ++report.excluded;
            continue;
        }
        ++report.evaluated;
        acc.add(q.domain, {{ndcg, ndcg_at_k(*ranked[i], q.gt_item, opts.k)},
                           {recall, recall_at_k(*ranked[i], q.gt_item, opts.k)}});
        if (opts.on_ranked) {
            opts.on_ranked(q, *ranked[i]);
        }
    }
    acc.finish(report);
    return report;
}

} // namespace ctxbench
