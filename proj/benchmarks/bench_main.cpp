#include <benchmark/benchmark.h>

#include "ctxbench/evalbench.hpp"
#include "ctxbench/random.hpp"
#include "ctxbench/synthetic.hpp"
#include "ctxbench/trainer.hpp"

using namespace ctxbench;

namespace {

const SyntheticCorpus& corpus() {
    static const SyntheticCorpus c = [] {
        SyntheticConfig cfg;
        cfg.items_per_domain = 250; // 1000 items
        return generate_synthetic(cfg);
    }();
    return c;
}

void BM_Bm25Build(benchmark::State& state) {
    std::vector<Bm25Index::Document> docs;
    for (const auto& m : corpus().metadata) {
        docs.push_back({m.item_id, flatten_metadata(m)});
    }
    for (auto _ : state) {
        benchmark::DoNotOptimize(Bm25Index::build(docs));
    }
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(docs.size()));
}
BENCHMARK(BM_Bm25Build);

void BM_Bm25Rank(benchmark::State& state) {
    std::vector<Bm25Index::Document> docs;
    for (const auto& m : corpus().metadata) {
        docs.push_back({m.item_id, flatten_metadata(m)});
    }
    const auto idx = Bm25Index::build(docs);
    const auto& qs = corpus().queries;
    std::size_t i = 0;
    for (auto _ : state) {
        benchmark::DoNotOptimize(idx.rank(qs[i++ % qs.size()].text, 100));
    }
}
BENCHMARK(BM_Bm25Rank);

DenseIndex random_index(std::size_t n, std::size_t d) {
    Rng rng(1);
    std::vector<std::string> ids;
    std::vector<float> rows;
    for (std::size_t i = 0; i < n; ++i) {
        ids.push_back("i" + std::to_string(i));
        Vector v(static_cast<Eigen::Index>(d));
        for (auto& x : v) {
            x = standard_normal(rng);
        }
        v = l2_normalize(v);
        for (auto x : v) {
            rows.push_back(static_cast<float>(x));
        }
    }
    return DenseIndex(d, std::move(ids), std::move(rows));
}

void BM_DenseRank(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    const auto idx = random_index(n, 32);
    std::vector<double> q(32, 1.0 / std::sqrt(32.0));
    for (auto _ : state) {
        benchmark::DoNotOptimize(idx.rank(q, 100));
    }
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n));
}
BENCHMARK(BM_DenseRank)->Arg(1000)->Arg(10000)->Arg(100000);

void BM_DenseScoreMany(benchmark::State& state) {
    const auto idx = random_index(10000, 32);
    Matrix qs = Matrix::Random(static_cast<Eigen::Index>(state.range(0)), 32);
    for (auto _ : state) {
        benchmark::DoNotOptimize(idx.score_many(qs));
    }
}
BENCHMARK(BM_DenseScoreMany)->Arg(16)->Arg(256);

void BM_Encode(benchmark::State& state) {
    const auto params = ToyEncoderParams::random(HashConfig{}, 64, 32, 1);
    const auto& ms = corpus().metadata;
    std::size_t i = 0;
    for (auto _ : state) {
        benchmark::DoNotOptimize(encode(params, flatten_metadata(ms[i++ % ms.size()])));
    }
}
BENCHMARK(BM_Encode);

void BM_ContrastiveLoss(benchmark::State& state) {
    const auto b = state.range(0);
    Matrix c = Matrix::Random(b, 32), m = Matrix::Random(b, 32);
    c.rowwise().normalize();
    m.rowwise().normalize();
    for (auto _ : state) {
        benchmark::DoNotOptimize(contrastive_loss_and_grad(c, m, 0.05));
    }
}
BENCHMARK(BM_ContrastiveLoss)->Arg(32)->Arg(256);

void BM_TrainStep(benchmark::State& state) {
    TrainConfig cfg;
    const auto params = ToyEncoderParams::random(cfg.hash, cfg.hidden, cfg.dim, cfg.seed);
    Rng rng(2);
    std::vector<std::vector<std::uint32_t>> ctx, meta;
    const auto& rs = corpus().reviews;
    for (std::size_t i = 0; i < cfg.batch_size; ++i) {
        ctx.push_back(hash_tokens(rs[i].text, cfg.hash));
        meta.push_back(hash_tokens(rs[i].title, cfg.hash));
    }
    const auto batch = make_batch(ctx, meta, cfg, cfg.hash.buckets, rng);
    for (auto _ : state) {
        ParamGradients g(params);
        benchmark::DoNotOptimize(compute_objective(params, batch, objective_options(cfg), &g));
    }
}
BENCHMARK(BM_TrainStep);

} // namespace
BENCHMARK_MAIN();
