#include <sstream>

#include <gtest/gtest.h>
#include <json.hpp>

#include "cli.hpp"
#include "ctxbench/corpus.hpp"
#include "ctxbench/manifest.hpp"
#include "test_util.hpp"

using namespace ctxbench;
using ctxbench::testing::TempDir;
using ctxbench::testing::read_file;

namespace {

struct Result {
    int code = 0;
    std::string out;
    std::string err;
};

Result run_cli(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = cli::run(args, out, err);
    return {code, out.str(), err.str()};
}

std::string p(const std::filesystem::path& x) { return x.string(); }

// Ten reviews at t = 1..10, plus metadata with one distinctive word per item.
void write_fixture(const TempDir& dir) {
    std::vector<std::string> reviews, metas, queries;
    const char* words[] = {"anvil", "banjo", "cactus", "dynamo", "easel"};
    for (int i = 0; i < 10; ++i) {
        Review r;
        r.user_id = "u" + std::to_string(i % 3);
        r.item_id = std::string("item_") + words[i % 5];
        r.rating = 5;
        r.title = "Works well";
        r.text = std::string("A lovely ") + words[i % 5] + " that has been part of my routine for weeks now";
        r.timestamp = i + 1;
        r.domain = "Toys";
        reviews.push_back(to_jsonl(r));
    }
    for (const char* w : words) {
        ItemMeta m{std::string("item_") + w, "Toys", std::string("Deluxe ") + w + " set", {"sturdy build"}, {}};
        metas.push_back(to_jsonl(m));
        nlohmann::json q = {{"qid", std::string("q_") + w},
                            {"query", std::string("I want a ") + w + " for my kid"},
                            {"item_id", m.item_id},
                            {"domain", "Toys"}};
        queries.push_back(q.dump());
    }
    ctxbench::testing::write_lines(dir / "toys.reviews.jsonl", reviews);
    ctxbench::testing::write_lines(dir / "toys.meta.jsonl", metas);
    ctxbench::testing::write_lines(dir / "queries.jsonl", queries);
}

} // namespace

TEST(Cli, SplitOnTenTimestamps) {
    TempDir dir;
    write_fixture(dir);
    auto r = run_cli({"split", "--reviews", "Toys=" + p(dir / "toys.reviews.jsonl"), "--ratio", "8:1:1"});
    EXPECT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("t1=9 t2=10"), std::string::npos) << r.out;
}

TEST(Cli, UnknownSubcommandIsUsageError) {
    auto r = run_cli({"frobnicate"});
    EXPECT_EQ(r.code, 1);
    EXPECT_FALSE(r.err.empty());
    EXPECT_EQ(run_cli({}).code, 1);
    EXPECT_EQ(run_cli({"split", "--ratio", "8:1"}).code, 1);
}

TEST(Cli, HelpOnEverySubcommand) {
    for (const char* sub : {"ingest", "stats", "split", "pairs", "sequences", "train", "embed", "index",
                            "eval-search", "eval-seqrec", "gen-queries", "ablate", "synth"}) {
        auto r = run_cli({sub, "--help"});
        EXPECT_EQ(r.code, 0) << sub;
        EXPECT_NE(r.out.find("--"), std::string::npos) << sub;
    }
    EXPECT_EQ(run_cli({"--help"}).code, 0);
    EXPECT_EQ(run_cli({"--version"}).code, 0);
}

TEST(Cli, MissingInputIsDataError) {
    TempDir dir;
    auto r = run_cli({"split", "--reviews", "Toys=" + p(dir / "absent.jsonl")});
    EXPECT_EQ(r.code, 2);
}

TEST(Cli, Bm25OracleFixtureScoresOne) {
    TempDir dir;
    write_fixture(dir);
    const auto meta = "Toys=" + p(dir / "toys.meta.jsonl");
    auto idx = run_cli({"index", "--metadata", meta, "--queries", p(dir / "queries.jsonl"), "--out", p(dir / "pool")});
    ASSERT_EQ(idx.code, 0) << idx.err;
    auto ev = run_cli({"eval-search", "--metadata", meta, "--queries", p(dir / "queries.jsonl"), "--pool",
                       p(dir / "pool"), "--retriever", "bm25", "--k", "10", "--out", p(dir / "report.json")});
    ASSERT_EQ(ev.code, 0) << ev.err;
    auto j = nlohmann::json::parse(read_file(dir / "report.json"));
    EXPECT_EQ(j.at("All").get<double>(), 1.0);
    EXPECT_EQ(j.at("evaluated").get<int>(), 5);
    EXPECT_TRUE(std::filesystem::exists(dir / "report.json.manifest.json"));
}

TEST(Cli, ConfigFileFeedsSubcommand) {
    TempDir dir;
    write_fixture(dir);
    ctxbench::testing::write_file(dir / "cfg.json",
                                  R"({"split": {"reviews": ["Toys=)" + p(dir / "toys.reviews.jsonl") +
                                      R"("], "ratio": "8:1:1"}})");
    auto r = run_cli({"--config", p(dir / "cfg.json"), "split"});
    EXPECT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("t1=9 t2=10"), std::string::npos);
    ctxbench::testing::write_file(dir / "bad.json", R"({"split": {"no-such-option": 1}})");
    EXPECT_EQ(run_cli({"--config", p(dir / "bad.json"), "split"}).code, 1);
}

// synth -> split -> pairs -> train -> embed -> index -> eval-search, twice,
// comparing every artifact byte for byte.
TEST(Cli, PipelineIsByteIdenticalAcrossRuns) {
    std::vector<std::map<std::string, std::string>> runs;
    for (int round = 0; round < 2; ++round) {
        TempDir dir;
        auto d = [&](const char* name) { return p(dir / name); };
        auto ok = [](const Result& r) {
            EXPECT_EQ(r.code, 0) << r.err;
            return r.code == 0;
        };
        ASSERT_TRUE(ok(run_cli({"synth", "--domains", "Games", "Toys", "--items-per-domain", "10",
                                "--reviews-per-item", "4", "--users", "30", "--out-dir", d("c")})));
        const std::vector<std::string> reviews{"--reviews", "Games=" + d("c/Games.reviews.jsonl"), "--reviews",
                                               "Toys=" + d("c/Toys.reviews.jsonl")};
        const std::vector<std::string> metas{"--metadata", "Games=" + d("c/Games.meta.jsonl"), "--metadata",
                                             "Toys=" + d("c/Toys.meta.jsonl")};
        auto with = [](std::vector<std::string> a, const std::vector<std::string>& b,
                       const std::vector<std::string>& c = {}) {
            a.insert(a.end(), b.begin(), b.end());
            a.insert(a.end(), c.begin(), c.end());
            return a;
        };
        ASSERT_TRUE(ok(run_cli(with({"split", "--out", d("split.json")}, reviews))));
        ASSERT_TRUE(ok(run_cli(with({"pairs", "--downsample", "1.0", "--boundaries", d("split.json"), "--out",
                                     d("pairs.jsonl")},
                                    reviews, metas))));
        ASSERT_TRUE(ok(run_cli(with({"sequences", "--boundaries", d("split.json"), "--out", d("seq.jsonl")},
                                    reviews))));
        ASSERT_TRUE(ok(run_cli({"train", "--pairs", d("pairs.jsonl"), "--epochs", "1", "--buckets", "2048",
                                "--out", d("enc.ckpt")})));
        ASSERT_TRUE(ok(run_cli(with({"embed", "--checkpoint", d("enc.ckpt"), "--out", d("items.store")}, metas))));
        ASSERT_TRUE(ok(run_cli(with({"index", "--queries", d("c/queries.jsonl"), "--n-per-query", "5", "--out",
                                     d("pool")},
                                    metas))));
        ASSERT_TRUE(ok(run_cli(with({"eval-search", "--queries", d("c/queries.jsonl"), "--pool", d("pool"),
                                     "--retriever", "dense", "--checkpoint", d("enc.ckpt"), "--k", "10", "--out",
                                     d("dense.json"), "--ranked", d("dense.tsv")},
                                    metas))));
        ASSERT_TRUE(ok(run_cli(with({"eval-seqrec", "--sequences", d("seq.jsonl"), "--store",
                                     "toy=" + d("items.store"), "--out", d("seqrec.json")},
                                    metas))));
        std::map<std::string, std::string> files;
        for (const auto& e : std::filesystem::recursive_directory_iterator(dir.path())) {
            if (e.is_regular_file()) {
                files[std::filesystem::relative(e.path(), dir.path()).string()] = read_file(e.path());
            }
        }
        runs.push_back(std::move(files));
    }
    ASSERT_EQ(runs[0].size(), runs[1].size());
    for (const auto& [name, bytes] : runs[0]) {
        ASSERT_TRUE(runs[1].contains(name)) << name;
        // manifests embed absolute paths of this run's temp dir
        if (name.find("manifest") != std::string::npos) {
            auto m = Manifest::from_json(bytes);
            EXPECT_EQ(m.outputs.size(), Manifest::from_json(runs[1].at(name)).outputs.size());
            for (std::size_t i = 0; i < m.outputs.size(); ++i) {
                EXPECT_EQ(m.outputs[i].sha256, Manifest::from_json(runs[1].at(name)).outputs[i].sha256) << name;
            }
            continue;
        }
        EXPECT_EQ(bytes, runs[1].at(name)) << name;
    }
    EXPECT_TRUE(runs[0].contains("enc.ckpt.manifest.json"));
    EXPECT_TRUE(runs[0].contains("pairs.jsonl.manifest.json"));
}

TEST(Cli, GenQueriesMockRecordReplay) {
    TempDir dir;
    ASSERT_EQ(run_cli({"synth", "--domains", "Games", "--items-per-domain", "6", "--out-dir", p(dir / "c")}).code, 0);
    const std::vector<std::string> base{"gen-queries", "--reviews", "Games=" + p(dir / "c/Games.reviews.jsonl"),
                                        "--metadata", "Games=" + p(dir / "c/Games.meta.jsonl"), "--n", "5"};
    auto a = base;
    a.insert(a.end(), {"--endpoint", "mock", "--record", p(dir / "t.jsonl"), "--out", p(dir / "q1.jsonl")});
    auto r1 = run_cli(a);
    ASSERT_EQ(r1.code, 0) << r1.err;
    EXPECT_NE(r1.out.find("prompt first-person-need/v1 sha256="), std::string::npos);
    auto b = base;
    b.insert(b.end(), {"--endpoint", "replay", "--transcript", p(dir / "t.jsonl"), "--out", p(dir / "q2.jsonl")});
    auto r2 = run_cli(b);
    ASSERT_EQ(r2.code, 0) << r2.err;
    EXPECT_EQ(read_file(dir / "q1.jsonl"), read_file(dir / "q2.jsonl"));
    EXPECT_FALSE(read_file(dir / "q1.jsonl").empty());
}
