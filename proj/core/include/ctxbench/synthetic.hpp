#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ctxbench/corpus.hpp"
#include "ctxbench/evalbench.hpp"

namespace ctxbench {

/// Shared-vocabulary corpus. Every item carries a few "concepts"; metadata
/// spells a concept one way and reviews/queries spell it another, so a
/// model only matches them after learning the correspondence. Domains draw
/// concepts from overlapping windows of one global list.
struct SyntheticConfig {
    std::vector<std::string> domains{"Games", "Beauty", "Office", "Toys"};
    std::size_t items_per_domain = 50;
    std::size_t reviews_per_item = 10;
    std::size_t queries_per_item = 1;
    std::size_t concepts = 48;
    std::size_t concepts_per_domain = 24;
    std::size_t concepts_per_item = 4;
    std::size_t users = 300;
    Timestamp start_time = 1'600'000'000'000;
    std::uint64_t seed = 7;

    void validate() const;
};

struct SyntheticCorpus {
    std::vector<ItemMeta> metadata;
    /// In timestamp order; timestamps are distinct.
    std::vector<Review> reviews;
    /// Held out: generated from a separate stream, never part of reviews.
    std::vector<EvalQuery> queries;
};

SyntheticCorpus generate_synthetic(const SyntheticConfig& cfg);

/// Surface form of a concept on the metadata side or the review side.
std::string concept_word(std::size_t concept_id, bool metadata_form);

} // namespace ctxbench
