#include <cmath>
#include <set>

#include <gtest/gtest.h>

#include "ctxbench/error.hpp"
#include "ctxbench/random.hpp"
#include "ctxbench/retrieval.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace ctxbench;

namespace {

std::vector<Bm25Index::Document> fish_docs() {
    return {{"D1", "red fish"}, {"D2", "blue fish"}, {"D3", "red bird"}};
}

const char* kVocab[] = {"lamp", "red", "blue", "chair", "oak", "desk", "soft", "mug", "tea", "game",
                        "cable", "fast", "quiet", "steel", "wool"};

std::string random_text(Rng& rng, std::size_t max_len) {
    std::string s;
    const auto n = uniform_index(rng, max_len + 1);
    for (std::size_t i = 0; i < n; ++i) {
        s += kVocab[uniform_index(rng, std::size(kVocab))];
        s += ' ';
    }
    return s;
}

std::vector<float> unit_rows(std::size_t n, std::size_t d, Rng& rng) {
    std::vector<float> out;
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> r(d);
        double norm = 0;
        for (auto& x : r) {
            x = standard_normal(rng);
            norm += x * x;
        }
        for (auto x : r) {
            out.push_back(static_cast<float>(x / std::sqrt(norm)));
        }
    }
    return out;
}

} // namespace

TEST(Bm25, FixtureCorpus) {
    auto docs = fish_docs();
    auto idx = Bm25Index::build(docs);
    EXPECT_EQ(idx.size(), 3u);
    EXPECT_DOUBLE_EQ(idx.avgdl(), 2.0);
    EXPECT_EQ(idx.document_frequency("red"), 2u);
    EXPECT_EQ(idx.document_frequency("nothing"), 0u);

    auto ranked = idx.rank("red", 10);
    ASSERT_EQ(ranked.size(), 2u);
    EXPECT_EQ(ranked[0].item_id, "D1");
    EXPECT_EQ(ranked[1].item_id, "D3");
    // tf=1, |d|=avgdl: score collapses to idf = ln(1 + 1.5/2.5)
    EXPECT_NEAR(ranked[0].score, std::log(1.6), 1e-12);
    EXPECT_NEAR(ranked[0].score, 0.470004, 1e-6);
    EXPECT_EQ(ranked[0].score, ranked[1].score);
}

TEST(Bm25, MatchesBruteForceOracle) {
    Rng rng(5);
    for (int trial = 0; trial < 100; ++trial) {
        const auto n = 1 + uniform_index(rng, 200);
        std::vector<Bm25Index::Document> docs;
        std::vector<oracle::Doc> odocs;
        for (std::size_t i = 0; i < n; ++i) {
            auto text = random_text(rng, 12);
            docs.push_back({"d" + std::to_string(i), text});
            odocs.push_back({"d" + std::to_string(i), text});
        }
        Bm25Params p{0.5 + uniform_unit(rng) * 1.5, uniform_unit(rng)};
        auto idx = Bm25Index::build(docs, p);
        const auto query = random_text(rng, 20);
        const auto got = idx.score_all(query);
        const auto want = oracle::bm25_scores(odocs, query, p.k1, p.b);
        ASSERT_EQ(got.size(), want.size());
        for (std::size_t i = 0; i < n; ++i) {
            EXPECT_NEAR(got[i], want[i], 1e-9);
        }
        const auto k = 1 + uniform_index(rng, 30);
        const auto ranked = idx.rank(query, k);
        auto full = oracle::full_sort(idx.ids(), want, true);
        ASSERT_EQ(ranked.size(), std::min(k, full.size()));
        for (std::size_t r = 0; r < ranked.size(); ++r) {
            EXPECT_NEAR(ranked[r].score, full[r].score, 1e-9);
            if (r > 0) {
                EXPECT_TRUE(ranks_before(ranked[r - 1].score, ranked[r - 1].item_id, ranked[r].score,
                                         ranked[r].item_id) ||
                            ranked[r - 1] == ranked[r]);
            }
        }
    }
}

TEST(Bm25, AdditiveOverQueryTerms) {
    Rng rng(9);
    for (int trial = 0; trial < 30; ++trial) {
        std::vector<Bm25Index::Document> docs;
        for (int i = 0; i < 40; ++i) {
            docs.push_back({"d" + std::to_string(i), random_text(rng, 10)});
        }
        auto idx = Bm25Index::build(docs);
        const auto a = random_text(rng, 5), b = random_text(rng, 5);
        const auto sa = idx.score_all(a), sb = idx.score_all(b), sab = idx.score_all(a + " " + b);
        for (std::size_t i = 0; i < docs.size(); ++i) {
            EXPECT_NEAR(sab[i], sa[i] + sb[i], 1e-9);
        }
    }
}

TEST(Bm25, IdfNeverNegative) {
    auto idx = Bm25Index::build(fish_docs());
    for (std::size_t df = 0; df <= 3; ++df) {
        EXPECT_GE(idx.idf(df), 0.0);
    }
    // a term in every document still scores above zero
    std::vector<Bm25Index::Document> docs{{"a", "x"}, {"b", "x y"}};
    EXPECT_EQ(Bm25Index::build(docs).rank("x", 5).size(), 2u);
}

TEST(Bm25, EdgeCases) {
    auto dup = fish_docs();
    dup.push_back({"D1", "again"});
    EXPECT_THROW(Bm25Index::build(dup), UsageError);
    auto empty = Bm25Index::build(std::vector<Bm25Index::Document>{});
    EXPECT_TRUE(empty.rank("red", 10).empty());
    auto idx = Bm25Index::build(fish_docs());
    EXPECT_TRUE(idx.rank("", 10).empty());
    EXPECT_TRUE(idx.rank("zebra", 10).empty());
    EXPECT_EQ(idx.rank("fish", 1).size(), 1u);
}

TEST(Dense, SelfQueryRanksFirst) {
    DenseIndex idx(2, {"A", "B", "C"}, {1, 0, 0, 1, 0.6f, 0.8f});
    const std::vector<double> q{1, 0};
    auto r = idx.rank(q, 3);
    ASSERT_EQ(r.size(), 3u);
    EXPECT_EQ(r[0].item_id, "A");
    EXPECT_DOUBLE_EQ(r[0].score, 1.0);
    EXPECT_EQ(r[1].item_id, "C");
    EXPECT_EQ(r[2].item_id, "B");
}

TEST(Dense, MatchesSortOracle) {
    Rng rng(12);
    for (int trial = 0; trial < 50; ++trial) {
        const auto n = 1 + uniform_index(rng, 300);
        const auto d = 1 + uniform_index(rng, 16);
        std::vector<std::string> ids;
        for (std::size_t i = 0; i < n; ++i) {
            ids.push_back("i" + std::to_string(i));
        }
        auto rows = unit_rows(n, d, rng);
        DenseIndex idx(d, ids, rows);
        std::vector<double> q(d);
        for (auto& x : q) {
            x = standard_normal(rng);
        }
        std::vector<double> want(n, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < d; ++j) {
                want[i] += q[j] * static_cast<double>(rows[i * d + j]);
            }
        }
        const auto k = 1 + uniform_index(rng, 120);
        auto got = idx.rank(q, k);
        auto full = oracle::full_sort(ids, want, false);
        ASSERT_EQ(got.size(), std::min(k, n));
        for (std::size_t r = 0; r < got.size(); ++r) {
            EXPECT_NEAR(got[r].score, full[r].score, 1e-12);
        }
        // batched scoring agrees with single queries
        Matrix qs(1, static_cast<Eigen::Index>(d));
        for (std::size_t j = 0; j < d; ++j) {
            qs(0, static_cast<Eigen::Index>(j)) = q[j];
        }
        const auto many = idx.score_many(qs);
        const auto one = idx.score_all(std::span<const double>(q));
        for (std::size_t i = 0; i < n; ++i) {
            EXPECT_NEAR(many(0, static_cast<Eigen::Index>(i)), one[i], 1e-12);
        }
    }
}

TEST(Dense, IdenticalVectorsAdjacentById) {
    DenseIndex idx(2, {"z", "b", "m", "a"}, {0.6f, 0.8f, 0, 1, 0.6f, 0.8f, 0.6f, 0.8f});
    auto r = idx.rank(std::vector<double>{0.6, 0.8}, 4);
    ASSERT_EQ(r.size(), 4u);
    EXPECT_EQ(r[0].item_id, "a");
    EXPECT_EQ(r[1].item_id, "m");
    EXPECT_EQ(r[2].item_id, "z");
    EXPECT_EQ(r[3].item_id, "b");
}

TEST(Dense, Errors) {
    DenseIndex idx(2, {"A"}, {1, 0});
    EXPECT_THROW(idx.rank(std::vector<double>{1, 0, 0}, 1), UsageError);
    EXPECT_THROW(DenseIndex(2, {"A"}, {1, 1}), DataError);
}

TEST(Dense, FromStoreReportsMissing) {
    EmbeddingStoreBuilder b(2);
    b.add("x", std::vector<double>{1, 0});
    b.add("y", std::vector<double>{0, 1});
    const auto store = b.build();
    std::vector<std::string> want{"y", "nope", "x"};
    std::vector<std::string> missing;
    auto idx = DenseIndex::from_store(store, want, &missing);
    EXPECT_EQ(idx.ids(), (std::vector<std::string>{"y", "x"}));
    EXPECT_EQ(missing, std::vector<std::string>{"nope"});
    EXPECT_ANY_THROW(DenseIndex::from_store(store, want));
}

TEST(TopK, PositiveOnlyAndSubset) {
    std::vector<double> s{0.5, -1.0, 0.0, 2.0};
    std::vector<std::string> ids{"a", "b", "c", "d"};
    auto r = select_top_k(s, ids, 10, nullptr, true);
    ASSERT_EQ(r.size(), 2u);
    EXPECT_EQ(r[0].item_id, "d");
    std::vector<std::uint32_t> subset{0, 1, 2};
    r = select_top_k(s, ids, 2, &subset, false);
    ASSERT_EQ(r.size(), 2u);
    EXPECT_EQ(r[0].item_id, "a");
    EXPECT_EQ(r[1].item_id, "c");
}

namespace {

std::map<std::string, std::vector<std::string>> universe(std::map<std::string, std::size_t> sizes) {
    std::map<std::string, std::vector<std::string>> u;
    for (const auto& [d, n] : sizes) {
        for (std::size_t i = 0; i < n; ++i) {
            u[d].push_back(d + "_" + std::to_string(i));
        }
    }
    return u;
}

} // namespace

TEST(Pool, SingleQueryGetsFiftyPlusTarget) {
    auto u = universe({{"G", 51}});
    std::vector<EvalPair> q{{"q1", "G_7", "G"}};
    auto pool = build_candidate_pool(q, u, 50, 1);
    EXPECT_EQ(pool.items.size(), 51u);
    EXPECT_TRUE(pool.contains("G_7"));
}

TEST(Pool, DisjointDomainsBounded) {
    auto u = universe({{"A", 300}, {"B", 300}});
    std::vector<EvalPair> q{{"q1", "A_1", "A"}, {"q2", "B_2", "B"}};
    auto pool = build_candidate_pool(q, u, 50, 1);
    EXPECT_LE(pool.items.size(), 102u);
    EXPECT_EQ(pool.items.size(), 102u);
    for (const auto& id : pool.items) {
        EXPECT_TRUE(id.rfind("A_", 0) == 0 || id.rfind("B_", 0) == 0);
    }
}

TEST(Pool, SmallDomainContributesEverything) {
    auto u = universe({{"A", 10}});
    std::vector<EvalPair> q{{"q1", "A_1", "A"}};
    EXPECT_EQ(build_candidate_pool(q, u, 50, 1).items.size(), 10u);
}

TEST(Pool, PropertiesOverRandomQueries) {
    Rng rng(33);
    auto u = universe({{"A", 120}, {"B", 80}, {"C", 40}});
    for (int trial = 0; trial < 30; ++trial) {
        std::vector<EvalPair> qs;
        const auto n = 1 + uniform_index(rng, 20);
        for (std::size_t i = 0; i < n; ++i) {
            const char* d = std::array{"A", "B", "C"}[uniform_index(rng, 3)];
            qs.push_back({"q" + std::to_string(i), std::string(d) + "_" + std::to_string(uniform_index(rng, 40)), d});
        }
        const auto seed = uniform_index(rng, 1000);
        auto a = build_candidate_pool(qs, u, 25, seed);
        EXPECT_EQ(a, build_candidate_pool(qs, u, 25, seed));
        EXPECT_LE(a.items.size(), n * 26);
        EXPECT_TRUE(std::is_sorted(a.items.begin(), a.items.end()));
        for (const auto& q : qs) {
            EXPECT_TRUE(a.contains(q.gt_item));
        }
        auto p = build_candidate_pool(qs, u, 25, seed, PoolMode::per_query);
        for (const auto& pq : p.queries) {
            EXPECT_EQ(pq.private_items.size(), 26u);
            EXPECT_TRUE(std::binary_search(pq.private_items.begin(), pq.private_items.end(), pq.gt_item));
            std::set<std::string> uniq(pq.private_items.begin(), pq.private_items.end());
            EXPECT_EQ(uniq.size(), pq.private_items.size());
            for (const auto& it : pq.private_items) {
                EXPECT_EQ(it.substr(0, 1), pq.domain);
            }
        }
    }
}

TEST(Pool, SaveLoadRoundTrip) {
    ctxbench::testing::TempDir dir;
    auto u = universe({{"A", 60}});
    std::vector<EvalPair> qs{{"q1", "A_1", "A"}, {"q2", "A_2", "A"}};
    for (auto mode : {PoolMode::shared, PoolMode::per_query}) {
        auto pool = build_candidate_pool(qs, u, 5, 3, mode);
        save_pool(dir / "pool", pool);
        EXPECT_EQ(load_pool(dir / "pool"), pool);
    }
    EXPECT_THROW(load_pool(dir / "missing"), IoError);
    EXPECT_EQ(parse_pool_mode("per_query"), PoolMode::per_query);
    EXPECT_THROW(parse_pool_mode("x"), UsageError);
}

TEST(Pool, RankedTsv) {
    RankedList r{{"a", 0.5}, {"b", 0.25}};
    EXPECT_EQ(ranked_to_tsv("q", r), "q\t1\ta\t0.5\nq\t2\tb\t0.25\n");
}
