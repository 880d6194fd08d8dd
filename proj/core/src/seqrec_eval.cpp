#include <algorithm>

#include "ctxbench/error.hpp"
#include "ctxbench/evalbench.hpp"
#include "parallel.hpp"

namespace ctxbench {

MetricReport evaluate_seqrec(std::span<const SequenceExample> examples, const EmbeddingStore& store,
                             const std::map<std::string, std::vector<std::string>>& candidates,
                             const SeqRecOptions& opts) {
    if (opts.ks.empty() || std::find(opts.ks.begin(), opts.ks.end(), 0) != opts.ks.end()) {
        throw UsageError("seqrec: ks must be non-empty and positive");
    }
    if (opts.recent == 0) {
        throw UsageError("seqrec: recent must be >= 1");
    }
    const std::size_t max_k = *std::max_element(opts.ks.begin(), opts.ks.end());

    std::map<std::string, DenseIndex> indexes;
    for (const auto& [domain, items] : candidates) {
        std::vector<std::string> sorted = items;
        std::sort(sorted.begin(), sorted.end());
        sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
        std::vector<std::string> missing;
        indexes.emplace(domain, DenseIndex::from_store(store, sorted, &missing));
    }

    const auto n = examples.size();
    std::vector<std::optional<RankedList>> ranked(n);
    detail::parallel_for(n, opts.threads, [&](std::size_t i) {
        const auto& ex = examples[i];
        auto idx = indexes.find(ex.domain);
        if (idx == indexes.end() || ex.history.empty() || !store.find(ex.target.item_id)) {
            return;
        }
        Vector user = Vector::Zero(static_cast<Eigen::Index>(store.dim()));
        std::size_t used = 0;
        const std::size_t start = ex.history.size() > opts.recent ? ex.history.size() - opts.recent : 0;
        for (std::size_t h = start; h < ex.history.size(); ++h) {
            auto v = store.vector(ex.history[h].item_id);
            if (!v) {
                continue;
            }
            for (std::size_t j = 0; j < v->size(); ++j) {
                user[static_cast<Eigen::Index>(j)] += (*v)[j];
            }
            ++used;
        }
        if (used == 0) {
            return;
        }
        // Cosine with unit candidates only needs the direction of the mean.
        Vector q = l2_normalize(user);
        auto scores = idx->second.score_all(std::span<const double>(q.data(), static_cast<std::size_t>(q.size())));
        ranked[i] = select_top_k(scores, idx->second.ids(), max_k);
    });

    MetricReport report;
    report.task = "seqrec";
    report.model = "mean-history-cosine";
    report.note = "embedding-similarity baseline (plumbing), not a sequential recommender";
    report.primary_metric = "NDCG@" + std::to_string(std::min<std::size_t>(10, max_k));
    if (std::find(opts.ks.begin(), opts.ks.end(), 10) == opts.ks.end()) {
        report.primary_metric = "NDCG@" + std::to_string(opts.ks.front());
    }
    MetricAccumulator acc;
    for (std::size_t i = 0; i < n; ++i) {
        if (!ranked[i]) {
            ++report.excluded;
            continue;
        }
        ++report.evaluated;
        std::map<std::string, double> values;
        for (auto k : opts.ks) {
            values["Recall@" + std::to_string(k)] = recall_at_k(*ranked[i], examples[i].target.item_id, k);
            values["NDCG@" + std::to_string(k)] = ndcg_at_k(*ranked[i], examples[i].target.item_id, k);
        }
        acc.add(examples[i].domain, values);
    }
    acc.finish(report);
    return report;
}

SeqRecSelection select_and_evaluate_seqrec(
    const std::vector<std::pair<std::string, std::shared_ptr<const EmbeddingStore>>>& stores,
    std::span<const SequenceExample> examples,
    const std::map<std::string, std::vector<std::string>>& candidates, const SeqRecOptions& opts) {
    if (stores.empty()) {
        throw UsageError("seqrec selection needs at least one store");
    }
    std::vector<SequenceExample> valid;
    std::vector<SequenceExample> test;
    for (const auto& ex : examples) {
        if (ex.split == Split::valid) {
            valid.push_back(ex);
        } else if (ex.split == Split::test) {
            test.push_back(ex);
        }
    }
    SeqRecOptions select_opts = opts;
    if (std::find(select_opts.ks.begin(), select_opts.ks.end(), 10) == select_opts.ks.end()) {
        select_opts.ks.push_back(10);
    }

    SeqRecSelection out;
    double best = -1.0;
    std::size_t best_i = 0;
    for (std::size_t i = 0; i < stores.size(); ++i) {
        auto report = evaluate_seqrec(valid, *stores[i].second, candidates, select_opts);
        report.model = stores[i].first;
        report.task = "seqrec-valid";
        auto it = report.all.find("NDCG@10");
        const double score = it == report.all.end() ? 0.0 : it->second;
        if (score > best) {
            best = score;
            best_i = i;
        }
        out.validation.emplace_back(stores[i].first, std::move(report));
    }
    out.selected = stores[best_i].first;
    out.test = evaluate_seqrec(test, *stores[best_i].second, candidates, opts);
    out.test.model = out.selected;
    out.test.task = "seqrec-test";
    return out;
}

} // namespace ctxbench
