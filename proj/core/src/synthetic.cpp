#include "ctxbench/synthetic.hpp"

#include <algorithm>
#include <array>
#include <cstdio>

#include "ctxbench/error.hpp"
#include "ctxbench/hashing.hpp"
#include "ctxbench/random.hpp"

namespace ctxbench {

void SyntheticConfig::validate() const {
    if (domains.empty() || items_per_domain == 0 || reviews_per_item == 0 || users == 0) {
        throw UsageError("synthetic corpus needs domains, items, reviews and users");
    }
    if (concepts_per_item < 2 || concepts_per_item > concepts_per_domain || concepts_per_domain > concepts) {
        throw UsageError("synthetic corpus needs 2 <= concepts_per_item <= concepts_per_domain <= concepts");
    }
    if (concepts > 512) {
        throw UsageError("synthetic corpus supports at most 512 concepts");
    }
}

namespace {

constexpr std::array<const char*, 8> kMetaSyllables{"ka", "lo", "ri", "tu", "ne", "sa", "vi", "mo"};
constexpr std::array<const char*, 8> kContextSyllables{"zeb", "dor", "fin", "gul", "hax", "jom", "pel", "wak"};

constexpr std::array<const char*, 24> kReviewFiller{
    "really", "great", "the",  "for",  "with",  "and",    "very",   "good",
    "my",     "this",  "it",   "was",  "use",   "nice",   "quality", "price",
    "works",  "well",  "love", "daily", "after", "months", "worth",  "happy"};
constexpr std::array<const char*, 8> kReviewTitles{"Great buy",   "Works well", "Pretty good", "Love it",
                                                    "Solid choice", "Not bad",   "Would buy again", "Happy"};
constexpr std::array<const char*, 8> kMetaFiller{"premium", "design", "includes", "perfect",
                                                 "for",     "the",    "and",      "with"};

std::string domain_noun(const std::string& domain) {
    std::string s;
    for (char c : domain) {
        s += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    }
    return s;
}

template <std::size_t N>
const char* pick(const std::array<const char*, N>& words, Rng& rng) {
    return words[uniform_index(rng, N)];
}

// Review-side sentence mentioning a random subset (at least two) of the
// item's concepts among filler words.
std::string context_sentence(const std::vector<std::size_t>& concepts, const std::string& noun, Rng& rng,
                             bool long_form) {
    std::vector<std::string> words;
    std::vector<std::string> mentioned;
    for (auto c : concepts) {
        if (uniform_unit(rng) < 0.75) {
            mentioned.push_back(concept_word(c, false));
        }
    }
    for (std::size_t i = 0; mentioned.size() < 2 && i < concepts.size(); ++i) {
        auto w = concept_word(concepts[i], false);
        if (std::find(mentioned.begin(), mentioned.end(), w) == mentioned.end()) {
            mentioned.push_back(std::move(w));
        }
    }
    words = mentioned;
    words.push_back(noun);
    const std::size_t filler = 6 + uniform_index(rng, 5) + (long_form ? 14 : 0);
    for (std::size_t i = 0; i < filler; ++i) {
        words.push_back(pick(kReviewFiller, rng));
    }
    shuffle(std::span<std::string>(words), rng);
    std::string out;
    for (const auto& w : words) {
        if (!out.empty()) {
            out += ' ';
        }
        out += w;
    }
    return out;
}

} // namespace

std::string concept_word(std::size_t concept_id, bool metadata_form) {
    const auto& syl = metadata_form ? kMetaSyllables : kContextSyllables;
    std::string w;
    std::size_t v = concept_id;
    for (int i = 0; i < 3; ++i) {
        w += syl[v % 8];
        v /= 8;
    }
    return w;
}

SyntheticCorpus generate_synthetic(const SyntheticConfig& cfg) {
    cfg.validate();
    SyntheticCorpus out;
    Rng item_rng(mix64(cfg.seed ^ 0x17e3));
    Rng review_rng(mix64(cfg.seed ^ 0x4e71));
    Rng query_rng(mix64(cfg.seed ^ 0x9ae5));

    const std::size_t stride = std::max<std::size_t>(1, cfg.concepts / cfg.domains.size());
    struct Item {
        std::string id;
        std::string domain;
        std::string noun;
        std::vector<std::size_t> concepts;
    };
    std::vector<Item> items;
    for (std::size_t d = 0; d < cfg.domains.size(); ++d) {
        const auto& domain = cfg.domains[d];
        const auto noun = domain_noun(domain);
        for (std::size_t i = 0; i < cfg.items_per_domain; ++i) {
            Item it;
            char id[32];
            std::snprintf(id, sizeof(id), "S%02zuI%04zu", d, i);
            it.id = id;
            it.domain = domain;
            it.noun = noun;
            for (auto k : sample_indices(cfg.concepts_per_domain, cfg.concepts_per_item, item_rng)) {
                it.concepts.push_back((d * stride + k) % cfg.concepts);
            }
            shuffle(std::span<std::size_t>(it.concepts), item_rng);

            ItemMeta m;
            m.item_id = it.id;
            m.domain = domain;
            m.title = noun;
            for (auto c : it.concepts) {
                m.title += ' ' + concept_word(c, true);
            }
            for (std::size_t f = 0; f + 1 < it.concepts.size(); f += 2) {
                m.features.push_back(std::string(pick(kMetaFiller, item_rng)) + ' ' + concept_word(it.concepts[f], true) +
                                     ' ' + concept_word(it.concepts[f + 1], true));
            }
            m.description.push_back(std::string("A ") + pick(kMetaFiller, item_rng) + ' ' + noun + " with " +
                                    concept_word(it.concepts.back(), true) + " and " +
                                    concept_word(it.concepts.front(), true) + ".");
            out.metadata.push_back(std::move(m));
            items.push_back(std::move(it));
        }
    }

    for (const auto& it : items) {
        for (std::size_t r = 0; r < cfg.reviews_per_item; ++r) {
            Review rv;
            rv.user_id = "U" + std::to_string(uniform_index(review_rng, cfg.users));
            rv.item_id = it.id;
            rv.domain = it.domain;
            rv.rating = uniform_unit(review_rng) < 0.6 ? 5.0 : static_cast<double>(1 + uniform_index(review_rng, 4));
            rv.title = pick(kReviewTitles, review_rng);
            rv.text = context_sentence(it.concepts, it.noun, review_rng, uniform_unit(review_rng) < 0.5);
            rv.verified = true;
            out.reviews.push_back(std::move(rv));
        }
        for (std::size_t q = 0; q < cfg.queries_per_item; ++q) {
            EvalQuery eq;
            eq.query_id = "sq-" + it.id + "-" + std::to_string(q);
            eq.text = context_sentence(it.concepts, it.noun, query_rng, false);
            eq.gt_item = it.id;
            eq.domain = it.domain;
            out.queries.push_back(std::move(eq));
        }
    }

    // Interleave reviews in time; a minute apart plus jitter keeps timestamps
    // distinct.
    shuffle(std::span<Review>(out.reviews), review_rng);
    for (std::size_t i = 0; i < out.reviews.size(); ++i) {
        out.reviews[i].timestamp = cfg.start_time + static_cast<Timestamp>(i) * 60'000 +
                                   static_cast<Timestamp>(uniform_index(review_rng, 30'000));
    }
    return out;
}

} // namespace ctxbench
