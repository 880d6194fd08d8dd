#include <cmath>
#include <set>
#include <unordered_map>

#include <gtest/gtest.h>

#include "ctxbench/error.hpp"
#include "ctxbench/evalbench.hpp"
#include "ctxbench/random.hpp"
#include "ctxbench/synthetic.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace ctxbench;

namespace {

RankedList ranked_ids(std::initializer_list<const char*> ids) {
    RankedList r;
    double s = 1.0;
    for (const char* id : ids) {
        r.push_back({id, s});
        s -= 0.01;
    }
    return r;
}

// Scores from a fixed table keyed by (query text, item id).
class TableRetriever final : public SearchRetriever {
public:
    TableRetriever(std::vector<std::string> ids, std::map<std::pair<std::string, std::string>, double> table)
        : ids_(std::move(ids)), table_(std::move(table)) {}
    std::string name() const override { return "table"; }
    const std::vector<std::string>& ids() const override { return ids_; }
    std::vector<double> score_all(const EvalQuery& q) const override {
        std::vector<double> out;
        for (const auto& id : ids_) {
            auto it = table_.find({q.text, id});
            out.push_back(it == table_.end() ? 0.0 : it->second);
        }
        return out;
    }

private:
    std::vector<std::string> ids_;
    std::map<std::pair<std::string, std::string>, double> table_;
};

} // namespace

TEST(Metrics, NdcgAtRanks) {
    auto r = ranked_ids({"a", "b", "c", "d"});
    EXPECT_DOUBLE_EQ(ndcg_at_k(r, "a", 10), 1.0);
    EXPECT_DOUBLE_EQ(ndcg_at_k(r, "c", 10), 0.5);
    EXPECT_EQ(ndcg_at_k(r, "d", 3), 0.0);
    EXPECT_EQ(ndcg_at_k(r, "zz", 10), 0.0);
    EXPECT_THROW(ndcg_at_k(r, "a", 0), UsageError);
    for (std::size_t rank = 1; rank <= 120; ++rank) {
        EXPECT_DOUBLE_EQ(ndcg_for_rank(rank, 100), oracle::ndcg(rank, 100));
    }
}

TEST(Metrics, RecallInclusiveAtK) {
    auto r = ranked_ids({"a", "b", "c"});
    EXPECT_EQ(recall_at_k(r, "c", 3), 1.0);
    EXPECT_EQ(recall_at_k(r, "c", 2), 0.0);
    EXPECT_EQ(rank_of(r, "b"), std::optional<std::size_t>(2));
    EXPECT_FALSE(rank_of(r, "q"));
}

TEST(Metrics, RecallDominatesNdcg) {
    Rng rng(1);
    std::vector<std::string> ids;
    for (int i = 0; i < 50; ++i) {
        ids.push_back("i" + std::to_string(i));
    }
    for (int trial = 0; trial < 500; ++trial) {
        RankedList r;
        for (auto idx : sample_indices(ids.size(), 30, rng)) {
            r.push_back({ids[idx], 0.0});
        }
        shuffle(std::span(r), rng);
        const auto& gt = ids[uniform_index(rng, ids.size())];
        const auto k = 1 + uniform_index(rng, 40);
        EXPECT_GE(recall_at_k(r, gt, k), ndcg_at_k(r, gt, k));
    }
}

TEST(Metrics, MacroAllAcrossDomains) {
    MetricAccumulator acc;
    acc.add("A", {{"NDCG@10", 0.2}});
    acc.add("B", {{"NDCG@10", 0.4}});
    acc.add("B", {{"NDCG@10", 0.4}});
    MetricReport rep;
    rep.primary_metric = "NDCG@10";
    acc.finish(rep);
    EXPECT_NEAR(rep.all.at("NDCG@10"), 0.3, 1e-15);
    EXPECT_NEAR(rep.micro.at("NDCG@10"), 1.0 / 3.0, 1e-15);
    EXPECT_EQ(rep.examples_per_domain.at("B"), 2u);
}

TEST(Metrics, ReportJsonRoundTrip) {
    MetricAccumulator acc;
    acc.add("A", {{"NDCG@10", 0.25}, {"Recall@10", 1.0}});
    MetricReport rep;
    rep.task = "t";
    rep.model = "m";
    rep.primary_metric = "NDCG@10";
    rep.evaluated = 1;
    rep.excluded = 2;
    rep.note = "n";
    acc.finish(rep);
    EXPECT_EQ(MetricReport::from_json(rep.to_json()), rep);
    EXPECT_NE(rep.to_table().find("All"), std::string::npos);
    EXPECT_THROW(MetricReport::from_json("{}"), DataError);
}

TEST(SearchEval, OracleRetrieverScoresOne) {
    EvalTask task;
    task.name = "t";
    task.queries = {{"q1", "x", "a", "A"}, {"q2", "y", "b", "A"}, {"q3", "z", "c", "B"}};
    TableRetriever r({"a", "b", "c", "d"}, {{{"x", "a"}, 2.0}, {{"y", "b"}, 2.0}, {{"z", "c"}, 2.0}});
    CandidatePool pool;
    pool.items = {"a", "b", "c", "d"};
    std::size_t calls = 0;
    SearchEvalOptions o;
    o.k = 10;
    o.threads = 2;
    o.on_ranked = [&](const EvalQuery&, const RankedList&) { ++calls; };
    auto rep = evaluate_search(task, r, pool, o);
    EXPECT_EQ(rep.all.at("NDCG@10"), 1.0);
    EXPECT_EQ(rep.all.at("Recall@10"), 1.0);
    EXPECT_EQ(rep.evaluated, 3u);
    EXPECT_EQ(calls, 3u);
}

TEST(SearchEval, PoolRestrictsCandidatesAndExcludes) {
    EvalTask task;
    task.queries = {{"q1", "x", "a", "A"}, {"q2", "x", "gone", "A"}};
    // "d" would outrank "a" but is outside the pool
    TableRetriever r({"a", "b", "d"}, {{{"x", "d"}, 9.0}, {{"x", "a"}, 1.0}, {{"x", "b"}, 0.5}});
    CandidatePool pool;
    pool.items = {"a", "b"};
    SearchEvalOptions o;
    o.k = 10;
    auto rep = evaluate_search(task, r, pool, o);
    EXPECT_EQ(rep.evaluated, 1u);
    EXPECT_EQ(rep.excluded, 1u);
    EXPECT_EQ(rep.all.at("NDCG@10"), 1.0);
    pool.items = {"a", "b", "d"};
    rep = evaluate_search(task, r, pool, o);
    EXPECT_DOUBLE_EQ(rep.all.at("NDCG@10"), 1.0 / std::log2(3.0)); // gt now at rank 2
}

TEST(SearchEval, ThreadCountDoesNotChangeResults) {
    Rng rng(4);
    std::vector<std::string> ids;
    std::map<std::pair<std::string, std::string>, double> table;
    EvalTask task;
    for (int i = 0; i < 60; ++i) {
        ids.push_back("i" + std::to_string(i));
    }
    for (int q = 0; q < 40; ++q) {
        const auto text = "q" + std::to_string(q);
        for (const auto& id : ids) {
            table[{text, id}] = uniform_unit(rng);
        }
        task.queries.push_back({text, text, ids[uniform_index(rng, ids.size())], q % 2 ? "A" : "B"});
    }
    TableRetriever r(ids, table);
    CandidatePool pool;
    pool.items = ids;
    std::sort(pool.items.begin(), pool.items.end());
    SearchEvalOptions one, many;
    one.threads = 1;
    many.threads = 8;
    EXPECT_EQ(evaluate_search(task, r, pool, one), evaluate_search(task, r, pool, many));
}

// A random dense scorer ranks gt uniformly among N candidates, so
// E[NDCG@100] = (1/N) * sum_{r<=min(100,N)} 1/log2(r+1).
TEST(SearchEval, RandomDenseMatchesExpectation) {
    Rng rng(2024);
    const std::size_t n = 200, d = 16, nq = 4000;
    std::vector<std::string> ids;
    std::vector<float> rows;
    for (std::size_t i = 0; i < n; ++i) {
        ids.push_back("i" + std::to_string(1000 + i));
        Vector v(static_cast<Eigen::Index>(d));
        for (auto& x : v) {
            x = standard_normal(rng);
        }
        v = l2_normalize(v);
        for (auto x : v) {
            rows.push_back(static_cast<float>(x));
        }
    }
    std::map<std::string, Vector> qvec;
    EvalTask task;
    for (std::size_t q = 0; q < nq; ++q) {
        Vector v(static_cast<Eigen::Index>(d));
        for (auto& x : v) {
            x = standard_normal(rng);
        }
        const auto qid = "q" + std::to_string(q);
        qvec[qid] = v;
        task.queries.push_back({qid, "", ids[uniform_index(rng, n)], "A"});
    }
    DenseRetriever r("rand", DenseIndex(d, ids, rows),
                     [&](const EvalQuery& q) -> std::optional<Vector> { return qvec.at(q.query_id); });
    CandidatePool pool;
    pool.items = ids;
    auto rep = evaluate_search(task, r, pool);
    double expect = 0.0;
    for (std::size_t rank = 1; rank <= 100; ++rank) {
        expect += oracle::ndcg(rank, 100);
    }
    expect /= static_cast<double>(n);
    // per-query sd is about 0.33; 4 sigma on the mean of 4000
    EXPECT_NEAR(rep.all.at("NDCG@100"), expect, 4 * 0.33 / std::sqrt(static_cast<double>(nq)));
    EXPECT_NEAR(rep.all.at("Recall@100"), 0.5, 4 * 0.5 / std::sqrt(static_cast<double>(nq)));
}

TEST(SearchEval, Bm25RetrieverOverMetadata) {
    std::vector<ItemMeta> meta{{"a", "A", "red oak desk", {}, {}},
                               {"b", "A", "blue wool rug", {}, {}},
                               {"c", "A", "steel mug", {}, {}}};
    std::unordered_map<std::string, const ItemMeta*> by_id;
    for (const auto& m : meta) {
        by_id[m.item_id] = &m;
    }
    std::vector<std::string> items{"a", "b", "c", "missing"};
    Bm25Retriever r(items, by_id);
    EXPECT_EQ(r.ids().size(), 3u);
    EvalTask task;
    task.queries = {{"q1", "an oak desk", "a", "A"}, {"q2", "wool", "b", "A"}};
    CandidatePool pool;
    pool.items = {"a", "b", "c"};
    EXPECT_EQ(evaluate_search(task, r, pool).all.at("NDCG@100"), 1.0);
}

TEST(SearchEval, LoadTaskFile) {
    ctxbench::testing::TempDir dir;
    ctxbench::testing::write_lines(dir / "q.jsonl", {R"({"qid":"1","query":"x","item_id":"a","domain":"G"})",
                                                     R"({"query_id":"2","query":"y","gt_item":"b","category":"H"})"});
    auto t = load_eval_task(dir / "q.jsonl", TaskKind::complex_search);
    EXPECT_EQ(t.name, "q");
    ASSERT_EQ(t.queries.size(), 2u);
    EXPECT_EQ(t.queries[1].domain, "H");
    EXPECT_EQ(eval_pairs(t)[0].gt_item, "a");
    ctxbench::testing::write_lines(dir / "bad.jsonl", {R"({"qid":"1"})"});
    EXPECT_THROW(load_eval_task(dir / "bad.jsonl", TaskKind::complex_search), DataError);
}

namespace {

EmbeddingStore store_of(std::vector<std::pair<std::string, std::vector<double>>> rows) {
    EmbeddingStoreBuilder b(rows[0].second.size());
    for (auto& [id, v] : rows) {
        b.add(id, v);
    }
    return b.build();
}

SequenceExample example(std::string domain, std::vector<std::string> history, std::string target) {
    SequenceExample e;
    e.user_id = "u";
    e.domain = std::move(domain);
    Timestamp t = 1;
    for (auto& h : history) {
        e.history.push_back({h, t++});
    }
    e.target = {std::move(target), t};
    e.split = Split::test;
    return e;
}

} // namespace

TEST(SeqRec, HistoryVectorRanksMatchFirst) {
    auto store = store_of({{"A", {1, 0}}, {"B", {0, 1}}, {"C", {1, 0}}, {"D", {0.6, -0.8}}});
    std::vector<SequenceExample> ex{example("G", {"A"}, "C")};
    std::map<std::string, std::vector<std::string>> cands{{"G", {"B", "C", "D"}}};
    SeqRecOptions o;
    o.ks = {1, 3};
    auto rep = evaluate_seqrec(ex, store, cands, o);
    EXPECT_EQ(rep.all.at("NDCG@1"), 1.0);
    EXPECT_EQ(rep.all.at("Recall@1"), 1.0);
}

TEST(SeqRec, TiesBreakById) {
    auto store = store_of({{"h", {1, 0}}, {"b", {1, 0}}, {"a", {1, 0}}});
    std::vector<SequenceExample> ex{example("G", {"h"}, "b")};
    std::map<std::string, std::vector<std::string>> cands{{"G", {"a", "b"}}};
    SeqRecOptions o;
    o.ks = {1, 2};
    auto rep = evaluate_seqrec(ex, store, cands, o);
    EXPECT_EQ(rep.all.at("Recall@1"), 0.0); // "a" wins the tie
    EXPECT_DOUBLE_EQ(rep.all.at("NDCG@2"), 1.0 / std::log2(3.0));
}

TEST(SeqRec, MatchesBruteForce) {
    Rng rng(55);
    std::vector<std::pair<std::string, std::vector<double>>> rows;
    std::vector<std::string> ids;
    for (int i = 0; i < 40; ++i) {
        std::vector<double> v(5);
        for (auto& x : v) {
            x = standard_normal(rng);
        }
        ids.push_back("i" + std::to_string(i));
        rows.push_back({ids.back(), v});
    }
    auto store = store_of(rows);
    std::map<std::string, std::vector<std::string>> cands{{"G", ids}};
    std::vector<SequenceExample> ex;
    double want = 0.0;
    for (int e = 0; e < 50; ++e) {
        std::vector<std::string> hist;
        const auto len = 1 + uniform_index(rng, 15);
        for (std::size_t h = 0; h < len; ++h) {
            hist.push_back(ids[uniform_index(rng, ids.size())]);
        }
        const auto target = ids[uniform_index(rng, ids.size())];
        ex.push_back(example("G", hist, target));
        // oracle: mean of the last 10 stored vectors, cosine with every item
        std::vector<double> u(5, 0.0);
        for (std::size_t h = len > 10 ? len - 10 : 0; h < len; ++h) {
            auto v = store.vector(hist[h]);
            for (int j = 0; j < 5; ++j) {
                u[j] += (*v)[j];
            }
        }
        std::vector<double> scores;
        for (const auto& id : ids) {
            auto v = store.vector(id);
            double dot = 0.0, nu = 0.0;
            for (int j = 0; j < 5; ++j) {
                dot += u[j] * (*v)[j];
                nu += u[j] * u[j];
            }
            scores.push_back(dot / std::sqrt(nu));
        }
        auto full = oracle::full_sort(ids, scores, false);
        for (std::size_t r = 0; r < full.size(); ++r) {
            if (full[r].id == target) {
                want += oracle::ndcg(r + 1, 10);
            }
        }
    }
    auto rep = evaluate_seqrec(ex, store, cands);
    EXPECT_NEAR(rep.all.at("NDCG@10"), want / 50.0, 1e-9);
    EXPECT_EQ(rep.primary_metric, "NDCG@10");
}

TEST(SeqRec, SkipsUnusableExamples) {
    auto store = store_of({{"A", {1, 0}}, {"B", {0, 1}}});
    std::vector<SequenceExample> ex{example("G", {}, "A"), example("G", {"zz"}, "A"),
                                    example("G", {"B"}, "unknown"), example("H", {"A"}, "B")};
    std::map<std::string, std::vector<std::string>> cands{{"G", {"A", "B"}}};
    auto rep = evaluate_seqrec(ex, store, cands);
    EXPECT_EQ(rep.evaluated, 0u);
    EXPECT_EQ(rep.excluded, 4u);
}

TEST(SeqRec, SelectionUsesValidation) {
    auto good = std::make_shared<const EmbeddingStore>(store_of({{"A", {1, 0}}, {"B", {0, 1}}, {"C", {0.6, 0.8}}}));
    auto bad = std::make_shared<const EmbeddingStore>(store_of({{"A", {1, 0}}, {"B", {1, 0}}, {"C", {-1, 0}}}));
    std::vector<SequenceExample> ex{example("G", {"B"}, "C"), example("G", {"A"}, "B")};
    ex[0].split = Split::valid;
    std::map<std::string, std::vector<std::string>> cands{{"G", {"A", "B", "C"}}};
    auto sel = select_and_evaluate_seqrec({{"bad", bad}, {"good", good}}, ex, cands);
    EXPECT_EQ(sel.selected, "good");
    EXPECT_EQ(sel.validation.size(), 2u);
    EXPECT_EQ(sel.test.evaluated, 1u);
}

namespace {

struct SmallWorld {
    SyntheticCorpus corpus;
    std::vector<TrainingPair> pairs;
    std::vector<AblationTask> tasks;
};

SmallWorld small_world() {
    SyntheticConfig cfg;
    cfg.domains = {"Games", "Toys"};
    cfg.items_per_domain = 12;
    cfg.reviews_per_item = 3;
    cfg.users = 20;
    SmallWorld w{generate_synthetic(cfg), {}, {}};
    std::unordered_map<std::string, const ItemMeta*> by_id;
    std::map<std::string, std::vector<std::string>> universe;
    for (const auto& m : w.corpus.metadata) {
        by_id[m.item_id] = &m;
        universe[m.domain].push_back(m.item_id);
    }
    for (const auto& r : w.corpus.reviews) {
        if (auto p = build_pair(r, *by_id.at(r.item_id))) {
            w.pairs.push_back(*p);
        }
    }
    EvalTask t;
    t.name = "all";
    t.queries = w.corpus.queries;
    w.tasks.push_back({"all", t, build_candidate_pool(eval_pairs(t), universe, 5, 1)});
    return w;
}

} // namespace

TEST(Ablation, StandardGridShape) {
    TrainConfig base;
    auto cfgs = standard_ablation_configs(base, "Games");
    ASSERT_EQ(cfgs.size(), 4u);
    EXPECT_TRUE(cfgs[0].config.domain_filter.empty());
    EXPECT_EQ(cfgs[3].config.domain_filter, std::vector<std::string>{"Games"});
    EXPECT_EQ(cfgs[1].config.init_mode, InitMode::from_aux_pretrained);
    EXPECT_THROW(standard_ablation_configs(base, ""), UsageError);
}

TEST(Ablation, RowsShareColumnsAndAreDeterministic) {
    auto w = small_world();
    TrainConfig base;
    base.epochs = 1;
    base.aux_epochs = 1;
    base.hash.buckets = 1024;
    auto cfgs = standard_ablation_configs(base, "Games");
    cfgs.push_back({"broken", base});
    cfgs.back().config.domain_filter = {"Nowhere"};
    SearchEvalOptions o;
    o.k = 10;
    auto a = run_ablation_matrix(cfgs, w.tasks, w.pairs, w.corpus.metadata, o);
    ASSERT_EQ(a.rows.size(), 5u);
    for (std::size_t i = 0; i < 4; ++i) {
        ASSERT_TRUE(a.rows[i].ok) << a.rows[i].error;
        ASSERT_EQ(a.rows[i].reports.size(), 1u);
        std::set<std::string> cols;
        for (const auto& [m, v] : a.rows[i].reports.at("all").all) {
            cols.insert(m);
        }
        EXPECT_EQ(cols, (std::set<std::string>{"NDCG@10", "Recall@10"}));
    }
    EXPECT_FALSE(a.rows[4].ok);
    EXPECT_FALSE(a.rows[4].error.empty());
    EXPECT_FALSE(a.value("broken", "all", "NDCG@10"));
    auto b = run_ablation_matrix(cfgs, w.tasks, w.pairs, w.corpus.metadata, o);
    EXPECT_EQ(a.to_json(), b.to_json());
    EXPECT_EQ(a.to_csv(), b.to_csv());
    EXPECT_TRUE(a.value("all-domains/scratch", "all", "NDCG@10"));

    auto row = ablation_row_from_json(to_json(a.rows[0]));
    EXPECT_EQ(row.label, a.rows[0].label);
    EXPECT_EQ(row.reports, a.rows[0].reports);
}

TEST(Ablation, CacheSkipsTraining) {
    auto w = small_world();
    TrainConfig base;
    base.epochs = 1;
    base.hash.buckets = 1024;
    std::vector<AblationConfig> cfgs{{"x", base}};
    std::map<std::string, AblationRow> saved;
    AblationCache cache{[&](const AblationConfig& c) -> std::optional<AblationRow> {
                            auto it = saved.find(c.label);
                            return it == saved.end() ? std::nullopt : std::optional<AblationRow>(it->second);
                        },
                        [&](const AblationConfig& c, const AblationRow& r) { saved[c.label] = r; }};
    auto first = run_ablation_matrix(cfgs, w.tasks, w.pairs, w.corpus.metadata, {}, &cache);
    ASSERT_EQ(saved.size(), 1u);
    saved["x"].error = "from cache";
    auto second = run_ablation_matrix(cfgs, w.tasks, w.pairs, w.corpus.metadata, {}, &cache);
    EXPECT_EQ(second.rows[0].error, "from cache");
}
