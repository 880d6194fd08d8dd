#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_set>

#include "ctxbench/error.hpp"
#include "ctxbench/retrieval.hpp"
#include "ctxbench/text.hpp"

namespace ctxbench {

bool ranks_before(double score_a, std::string_view id_a, double score_b, std::string_view id_b) {
    if (score_a != score_b) {
        return score_a > score_b;
    }
    return id_a < id_b;
}

RankedList select_top_k(std::span<const double> scores, std::span<const std::string> ids,
                        std::size_t k, const std::vector<std::uint32_t>* subset, bool positive_only) {
    std::vector<std::uint32_t> cand;
    auto consider = [&](std::uint32_t i) {
        if (positive_only && !(scores[i] > 0.0)) {
            return;
        }
        cand.push_back(i);
    };
    if (subset != nullptr) {
        cand.reserve(subset->size());
        for (auto i : *subset) {
            consider(i);
        }
    } else {
        cand.reserve(scores.size());
        for (std::uint32_t i = 0; i < scores.size(); ++i) {
            consider(i);
        }
    }
    const std::size_t keep = std::min(k, cand.size());
    auto cmp = [&](std::uint32_t a, std::uint32_t b) {
        return ranks_before(scores[a], ids[a], scores[b], ids[b]);
    };
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(keep), cand.end(), cmp);
    RankedList out;
    out.reserve(keep);
    for (std::size_t r = 0; r < keep; ++r) {
        out.push_back({ids[cand[r]], scores[cand[r]]});
    }
    return out;
}

Bm25Index Bm25Index::build(std::span<const Document> docs, Bm25Params params) {
    Bm25Index index;
    index.params_ = params;
    index.ids_.reserve(docs.size());
    index.doc_lengths_.reserve(docs.size());

    std::unordered_set<std::string_view> seen;
    std::unordered_map<std::string, std::uint32_t> tf;
    std::uint64_t total_len = 0;
    for (std::size_t d = 0; d < docs.size(); ++d) {
        if (!seen.insert(docs[d].id).second) {
            throw UsageError("bm25: duplicate document id '" + docs[d].id + "'");
        }
        index.ids_.push_back(docs[d].id);
        auto tokens = tokenize(docs[d].text);
        index.doc_lengths_.push_back(static_cast<std::uint32_t>(tokens.size()));
        total_len += tokens.size();

        tf.clear();
        for (auto& t : tokens) {
            ++tf[std::move(t)];
        }
        // Postings are appended in document order, so each list stays sorted.
        std::vector<std::pair<std::string, std::uint32_t>> sorted_terms(tf.begin(), tf.end());
        std::sort(sorted_terms.begin(), sorted_terms.end());
        for (auto& [term, count] : sorted_terms) {
            auto [it, inserted] = index.term_ids_.try_emplace(term, static_cast<std::uint32_t>(index.terms_.size()));
            if (inserted) {
                index.terms_.push_back(term);
                index.postings_.emplace_back();
            }
            index.postings_[it->second].push_back({static_cast<std::uint32_t>(d), count});
        }
    }
    index.avgdl_ = docs.empty() ? 0.0 : static_cast<double>(total_len) / static_cast<double>(docs.size());
    return index;
}

std::span<const Posting> Bm25Index::postings(std::string_view term) const {
    auto it = term_ids_.find(std::string(term));
    if (it == term_ids_.end()) {
        return {};
    }
    return postings_[it->second];
}

double Bm25Index::idf(std::size_t df) const {
    const auto n = static_cast<double>(ids_.size());
    const auto f = static_cast<double>(df);
    return std::log(1.0 + (n - f + 0.5) / (f + 0.5));
}

std::vector<double> Bm25Index::score_all(std::string_view query) const {
    std::vector<double> scores(ids_.size(), 0.0);
    if (ids_.empty()) {
        return scores;
    }
    const double k1 = params_.k1;
    const double b = params_.b;
    for (const auto& term : tokenize(query)) {
        auto plist = postings(term);
        if (plist.empty()) {
            continue;
        }
        const double w = idf(plist.size());
        for (const auto& p : plist) {
            const double tf = p.tf;
            const double norm = avgdl_ > 0.0 ? doc_lengths_[p.doc] / avgdl_ : 0.0;
            scores[p.doc] += w * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * norm));
        }
    }
    return scores;
}

RankedList Bm25Index::rank(std::string_view query, std::size_t k) const {
    auto scores = score_all(query);
    return select_top_k(scores, ids_, k, nullptr, /*positive_only=*/true);
}

RankedList bm25_rank(const Bm25Index& index, std::string_view query, std::size_t k) {
    return index.rank(query, k);
}

} // namespace ctxbench
