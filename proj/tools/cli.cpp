#include "cli.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <memory>
#include <set>
#include <sstream>
#include <unordered_map>

#include <CLI11.hpp>
#include <json.hpp>

#include "ctxbench/checkpoint.hpp"
#include "ctxbench/corpus.hpp"
#include "ctxbench/embedding_store.hpp"
#include "ctxbench/error.hpp"
#include "ctxbench/evalbench.hpp"
#include "ctxbench/hashing.hpp"
#include "ctxbench/manifest.hpp"
#include "ctxbench/pipeline.hpp"
#include "ctxbench/querygen.hpp"
#include "ctxbench/retrieval.hpp"
#include "ctxbench/synthetic.hpp"
#include "ctxbench/trainer.hpp"
#include "json_config.hpp"

#ifndef CTXBENCH_VERSION
#define CTXBENCH_VERSION "dev"
#endif

namespace ctxbench::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// ---------------------------------------------------------------------------
// Shared plumbing

struct Io {
    std::ostream& out;
    std::ostream& err;

    void log(const std::string& msg) const { err << "[ctxbench] " << msg << "\n"; }
};

struct DomainPath {
    std::string domain;
    fs::path path;
};

std::vector<DomainPath> parse_domain_paths(const std::vector<std::string>& specs, const char* flag) {
    std::vector<DomainPath> out;
    for (const auto& s : specs) {
        const auto eq = s.find('=');
        if (eq == std::string::npos || eq == 0 || eq + 1 == s.size()) {
            throw UsageError(std::string(flag) + " expects DOMAIN=PATH, got '" + s + "'");
        }
        out.push_back({s.substr(0, eq), s.substr(eq + 1)});
    }
    return out;
}

struct CorpusArgs {
    std::vector<std::string> reviews;
    std::vector<std::string> metadata;
    std::string item_key = "parent_asin";
    std::vector<std::string> domains;

    IngestOptions options(const std::string& domain) const {
        IngestOptions o;
        o.domain = domain;
        o.item_key = item_key;
        o.allowed_domains = domains;
        return o;
    }
};

void add_corpus_options(CLI::App* app, CorpusArgs& a, bool need_reviews, bool need_metadata) {
    auto* r = app->add_option("--reviews", a.reviews, "Review JSONL files as DOMAIN=PATH");
    auto* m = app->add_option("--metadata", a.metadata, "Item metadata JSONL files as DOMAIN=PATH");
    if (need_reviews) {
        r->required();
    }
    if (need_metadata) {
        m->required();
    }
    app->add_option("--item-key", a.item_key, "Join key: parent_asin or asin");
    app->add_option("--domains", a.domains, "Allowed category tags (empty: any)");
}

std::vector<Review> load_all_reviews(const CorpusArgs& a, const Io& io, std::vector<fs::path>* inputs) {
    std::vector<Review> all;
    for (const auto& dp : parse_domain_paths(a.reviews, "--reviews")) {
        auto loaded = load_reviews(dp.path, a.options(dp.domain));
        io.log("reviews " + dp.domain + ": " + std::to_string(loaded.records.size()) + " read, " +
               std::to_string(loaded.skipped) + " skipped");
        all.insert(all.end(), std::make_move_iterator(loaded.records.begin()),
                   std::make_move_iterator(loaded.records.end()));
        if (inputs != nullptr) {
            inputs->push_back(dp.path);
        }
    }
    return all;
}

std::vector<ItemMeta> load_all_metadata(const CorpusArgs& a, const Io& io, std::vector<fs::path>* inputs) {
    std::vector<ItemMeta> all;
    for (const auto& dp : parse_domain_paths(a.metadata, "--metadata")) {
        auto loaded = load_metadata(dp.path, a.options(dp.domain));
        io.log("metadata " + dp.domain + ": " + std::to_string(loaded.records.size()) + " read, " +
               std::to_string(loaded.skipped) + " skipped");
        all.insert(all.end(), std::make_move_iterator(loaded.records.begin()),
                   std::make_move_iterator(loaded.records.end()));
        if (inputs != nullptr) {
            inputs->push_back(dp.path);
        }
    }
    return all;
}

std::unordered_map<std::string, const ItemMeta*> index_metadata(const std::vector<ItemMeta>& metas) {
    std::unordered_map<std::string, const ItemMeta*> by_id;
    for (const auto& m : metas) {
        by_id[m.item_id] = &m;
    }
    return by_id;
}

std::ofstream open_out(const fs::path& path) {
    if (path.has_parent_path()) {
        fs::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    return out;
}

void write_text(const fs::path& path, const std::string& text) {
    auto out = open_out(path);
    out << text;
    if (!out) {
        throw IoError("write failed: " + path.string());
    }
}

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot read " + path.string());
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

// Command state shared with the manifest writer.
struct Run {
    const Io& io;
    std::string command;
    json config;

    void write_manifest(const fs::path& anchor, const std::vector<fs::path>& inputs,
                        const std::vector<fs::path>& outputs) const {
        Manifest m;
        m.command = command;
        m.tool_version = CTXBENCH_VERSION;
        m.set_config(config.dump());
        for (const auto& p : inputs) {
            m.add_input(p);
        }
        for (const auto& p : outputs) {
            m.add_output(p);
        }
        const auto path = manifest_path_for(anchor);
        m.save(path);
        io.log("manifest " + path.string());
    }
};

// ---------------------------------------------------------------------------
// Split boundaries file

json search_to_json(const SplitSearchResult& r, const SplitRatio& ratio) {
    return {{"t1", r.bounds.t1},
            {"t2", r.bounds.t2},
            {"ratio", ratio.to_string()},
            {"counts", {r.counts[0], r.counts[1], r.counts[2]}},
            {"deviation", r.deviation}};
}

struct BoundaryFile {
    std::optional<SplitBoundaries> global;
    std::map<std::string, SplitBoundaries> per_domain;

    const SplitBoundaries& for_domain(const std::string& domain) const {
        auto it = per_domain.find(domain);
        if (it != per_domain.end()) {
            return it->second;
        }
        if (!global) {
            throw DataError("no split boundaries for domain '" + domain + "'");
        }
        return *global;
    }
};

BoundaryFile load_boundaries(const fs::path& path) {
    BoundaryFile b;
    try {
        auto j = json::parse(read_text(path));
        if (j.contains("t1")) {
            b.global = SplitBoundaries{j.at("t1").get<Timestamp>(), j.at("t2").get<Timestamp>()};
        }
        if (j.contains("per_domain")) {
            for (const auto& [d, v] : j.at("per_domain").items()) {
                b.per_domain[d] = {v.at("t1").get<Timestamp>(), v.at("t2").get<Timestamp>()};
            }
        }
    } catch (const json::exception& e) {
        throw DataError("bad boundaries file " + path.string() + ": " + e.what());
    }
    if (!b.global && b.per_domain.empty()) {
        throw DataError("boundaries file " + path.string() + " holds no boundaries");
    }
    return b;
}

// ---------------------------------------------------------------------------
// Training flags (train and ablate)

struct TrainArgs {
    TrainConfig cfg;
    std::string init_mode = "scratch";
    std::string reduction = "mean";
    std::uint32_t buckets = 1u << 14;
    std::vector<int> orders{1, 2};
    std::uint64_t hash_seed = 0x5eed;
    std::size_t max_tokens = 64;

    TrainConfig resolve() const {
        TrainConfig c = cfg;
        c.init_mode = parse_init_mode(init_mode);
        c.loss_reduction = parse_loss_reduction(reduction);
        c.hash.buckets = buckets;
        c.hash.orders = orders;
        c.hash.seed = hash_seed;
        c.hash.max_tokens = max_tokens;
        c.validate();
        return c;
    }
};

void add_train_options(CLI::App* app, TrainArgs& a, bool with_domain_filter) {
    app->add_option("--tau", a.cfg.tau, "Softmax temperature");
    app->add_option("--lambda", a.cfg.lambda, "Weight of the auxiliary loss");
    app->add_option("--batch-size", a.cfg.batch_size, "Pairs per batch (>= 2)");
    app->add_option("--learning-rate", a.cfg.learning_rate, "SGD step size");
    app->add_option("--epochs", a.cfg.epochs, "Epochs of the combined objective");
    app->add_option("--seed", a.cfg.seed, "Seed for init, shuffling and masking");
    if (with_domain_filter) {
        app->add_option("--domain-filter", a.cfg.domain_filter, "Train only on these domains");
    }
    app->add_option("--init-mode", a.init_mode, "scratch or from_aux_pretrained")
        ->check(CLI::IsMember({"scratch", "from_aux_pretrained"}));
    app->add_option("--loss-reduction", a.reduction, "mean or sum")->check(CLI::IsMember({"mean", "sum"}));
    app->add_flag("--symmetric", a.cfg.symmetric, "Average both contrastive directions");
    app->add_option("--aux-epochs", a.cfg.aux_epochs, "Auxiliary-only epochs for from_aux_pretrained");
    app->add_option("--aux-negatives", a.cfg.aux_negatives, "Sampled negatives per masked bucket");
    app->add_option("--mask-rate", a.cfg.mask_rate, "Fraction of buckets masked");
    app->add_option("--buckets", a.buckets, "Hash buckets V");
    app->add_option("--ngram-orders", a.orders, "n-gram orders");
    app->add_option("--hash-seed", a.hash_seed, "Hash seed");
    app->add_option("--max-tokens", a.max_tokens, "Tokens kept per sentence");
    app->add_option("--hidden", a.cfg.hidden, "Bucket embedding width h");
    app->add_option("--dim", a.cfg.dim, "Output dimension d");
}

std::vector<TrainingPair> load_pairs(const fs::path& path, const Io& io) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot read " + path.string());
    }
    std::vector<TrainingPair> pairs;
    std::size_t skipped = 0;
    std::string line;
    while (std::getline(in, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        if (auto p = parse_training_pair(line)) {
            pairs.push_back(std::move(*p));
        } else {
            ++skipped;
        }
    }
    io.log("pairs: " + std::to_string(pairs.size()) + " read, " + std::to_string(skipped) + " skipped");
    return pairs;
}

std::vector<SequenceExample> load_sequences(const fs::path& path, const Io& io) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot read " + path.string());
    }
    std::vector<SequenceExample> out;
    std::size_t skipped = 0;
    std::string line;
    while (std::getline(in, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        if (auto e = parse_sequence_example(line)) {
            out.push_back(std::move(*e));
        } else {
            ++skipped;
        }
    }
    io.log("sequences: " + std::to_string(out.size()) + " read, " + std::to_string(skipped) + " skipped");
    return out;
}

std::map<std::string, std::vector<std::string>> items_by_domain(const std::vector<ItemMeta>& metas) {
    std::map<std::string, std::vector<std::string>> out;
    for (const auto& m : metas) {
        out[m.domain].push_back(m.item_id);
    }
    for (auto& [d, ids] : out) {
        std::sort(ids.begin(), ids.end());
        ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    }
    return out;
}

// ---------------------------------------------------------------------------
// Subcommands

struct IngestCmd {
    CorpusArgs corpus;
    fs::path out_dir;

    void setup(CLI::App* app) {
        add_corpus_options(app, corpus, false, false);
        app->add_option("--out-dir", out_dir, "Directory for canonical JSONL files")->required();
    }

    void run(const Run& r) const {
        if (corpus.reviews.empty() && corpus.metadata.empty()) {
            throw UsageError("ingest needs --reviews and/or --metadata");
        }
        fs::create_directories(out_dir);
        std::vector<fs::path> inputs;
        std::vector<fs::path> outputs;
        for (const auto& dp : parse_domain_paths(corpus.reviews, "--reviews")) {
            ReviewStream stream(dp.path, corpus.options(dp.domain));
            const auto target = out_dir / (dp.domain + ".reviews.jsonl");
            auto out = open_out(target);
            std::size_t n = 0;
            for (const auto& rv : stream) {
                out << to_jsonl(rv) << '\n';
                ++n;
            }
            r.io.out << "reviews " << dp.domain << ": " << n << " records, " << stream.skipped() << " skipped\n";
            inputs.push_back(dp.path);
            outputs.push_back(target);
        }
        for (const auto& dp : parse_domain_paths(corpus.metadata, "--metadata")) {
            MetaStream stream(dp.path, corpus.options(dp.domain));
            const auto target = out_dir / (dp.domain + ".meta.jsonl");
            auto out = open_out(target);
            std::size_t n = 0;
            for (const auto& m : stream) {
                out << to_jsonl(m) << '\n';
                ++n;
            }
            r.io.out << "metadata " << dp.domain << ": " << n << " records, " << stream.skipped() << " skipped\n";
            inputs.push_back(dp.path);
            outputs.push_back(target);
        }
        r.write_manifest(out_dir / "ingest", inputs, outputs);
    }
};

struct StatsCmd {
    CorpusArgs corpus;
    fs::path out;

    void setup(CLI::App* app) {
        add_corpus_options(app, corpus, false, false);
        app->add_option("--out", out, "Write the statistics as JSON");
    }

    void run(const Run& r) const {
        StatsAccumulator acc;
        std::size_t skipped = 0;
        std::vector<fs::path> inputs;
        for (const auto& dp : parse_domain_paths(corpus.reviews, "--reviews")) {
            ReviewStream stream(dp.path, corpus.options(dp.domain));
            for (const auto& rv : stream) {
                acc.add(rv);
            }
            skipped += stream.skipped();
            inputs.push_back(dp.path);
        }
        for (const auto& dp : parse_domain_paths(corpus.metadata, "--metadata")) {
            MetaStream stream(dp.path, corpus.options(dp.domain));
            for (const auto& m : stream) {
                acc.add(m);
            }
            skipped += stream.skipped();
            inputs.push_back(dp.path);
        }
        const auto s = acc.finish();
        json j = {{"n_reviews", s.n_reviews}, {"n_users", s.n_users},   {"n_items", s.n_items},
                  {"n_meta", s.n_meta},       {"min_time", s.min_time}, {"max_time", s.max_time},
                  {"approx_tokens", s.approx_tokens}, {"skipped", skipped}};
        r.io.out << j.dump(2) << "\n";
        if (!out.empty()) {
            write_text(out, j.dump(2) + "\n");
            r.write_manifest(out, inputs, {out});
        }
    }
};

struct SplitCmd {
    CorpusArgs corpus;
    std::string ratio = "8:1:1";
    bool per_domain = false;
    fs::path out;

    void setup(CLI::App* app) {
        add_corpus_options(app, corpus, true, false);
        app->add_option("--ratio", ratio, "Train:valid:test ratio");
        app->add_flag("--per-domain", per_domain, "One pair of boundaries per domain");
        app->add_option("--out", out, "Write boundaries as JSON");
    }

    void run(const Run& r) const {
        const auto rat = SplitRatio::parse(ratio);
        std::vector<fs::path> inputs;
        const auto reviews = load_all_reviews(corpus, r.io, &inputs);
        json j;
        if (per_domain) {
            j["per_domain"] = json::object();
            for (const auto& [d, res] : find_split_boundaries_per_domain(reviews, rat)) {
                r.io.out << d << " t1=" << res.bounds.t1 << " t2=" << res.bounds.t2 << " train=" << res.counts[0]
                         << " valid=" << res.counts[1] << " test=" << res.counts[2]
                         << " deviation=" << res.deviation << "\n";
                j["per_domain"][d] = search_to_json(res, rat);
            }
        } else {
            std::vector<Timestamp> ts;
            ts.reserve(reviews.size());
            for (const auto& rv : reviews) {
                ts.push_back(rv.timestamp);
            }
            const auto res = find_split_boundaries(ts, rat);
            r.io.out << "t1=" << res.bounds.t1 << " t2=" << res.bounds.t2 << "\n"
                     << "train=" << res.counts[0] << " valid=" << res.counts[1] << " test=" << res.counts[2]
                     << " deviation=" << res.deviation << "\n";
            j = search_to_json(res, rat);
        }
        if (!out.empty()) {
            write_text(out, j.dump(2) + "\n");
            r.write_manifest(out, inputs, {out});
        }
    }
};

struct PairsCmd {
    CorpusArgs corpus;
    fs::path boundaries;
    std::size_t min_chars = kDefaultMinChars;
    double fraction = 0.1;
    std::uint64_t seed = 42;
    fs::path out;

    void setup(CLI::App* app) {
        add_corpus_options(app, corpus, true, true);
        app->add_option("--boundaries", boundaries, "Split file; only train-split reviews become pairs");
        app->add_option("--min-chars", min_chars, "Minimum characters on each side");
        app->add_option("--downsample", fraction, "Keep probability per pair, in (0, 1]");
        app->add_option("--seed", seed, "Downsampling seed");
        app->add_option("--out", out, "Output pairs JSONL")->required();
    }

    void run(const Run& r) const {
        std::vector<fs::path> inputs;
        const auto reviews = load_all_reviews(corpus, r.io, &inputs);
        const auto metas = load_all_metadata(corpus, r.io, &inputs);
        std::optional<BoundaryFile> bounds;
        if (!boundaries.empty()) {
            bounds = load_boundaries(boundaries);
            inputs.push_back(boundaries);
        } else {
            r.io.log("no --boundaries given: every review is eligible for pretraining");
        }
        const auto by_id = index_metadata(metas);
        Downsampler sampler(fraction, seed);
        auto os = open_out(out);
        std::size_t kept = 0, not_train = 0, no_meta = 0, too_short = 0, dropped = 0;
        for (const auto& rv : reviews) {
            if (bounds && assign_split(rv, bounds->for_domain(rv.domain)) != Split::train) {
                ++not_train;
                continue;
            }
            auto it = by_id.find(rv.item_id);
            if (it == by_id.end()) {
                ++no_meta;
                continue;
            }
            auto p = build_pair(rv, *it->second, min_chars);
            if (!p) {
                ++too_short;
                continue;
            }
            if (!sampler.keep()) {
                ++dropped;
                continue;
            }
            os << to_jsonl(*p) << '\n';
            ++kept;
        }
        os.close();
        r.io.out << "pairs: " << kept << " written; skipped " << not_train << " outside train, " << no_meta
                 << " without metadata, " << too_short << " too short, " << dropped << " downsampled\n";
        r.write_manifest(out, inputs, {out});
    }
};

struct SequencesCmd {
    CorpusArgs corpus;
    fs::path boundaries;
    std::size_t max_len = kDefaultMaxHistory;
    fs::path out;

    void setup(CLI::App* app) {
        add_corpus_options(app, corpus, true, false);
        app->add_option("--boundaries", boundaries, "Split file")->required();
        app->add_option("--max-len", max_len, "History length cap");
        app->add_option("--out", out, "Output sequences JSONL")->required();
    }

    void run(const Run& r) const {
        std::vector<fs::path> inputs;
        const auto reviews = load_all_reviews(corpus, r.io, &inputs);
        const auto bf = load_boundaries(boundaries);
        inputs.push_back(boundaries);
        std::vector<SequenceExample> all;
        if (bf.per_domain.empty()) {
            all = build_sequences(reviews, *bf.global, max_len);
        } else {
            std::map<std::string, std::vector<Review>> by_domain;
            for (const auto& rv : reviews) {
                by_domain[rv.domain].push_back(rv);
            }
            for (const auto& [d, rs] : by_domain) {
                auto part = build_sequences(rs, bf.for_domain(d), max_len);
                all.insert(all.end(), part.begin(), part.end());
            }
        }
        std::array<std::size_t, 3> counts{};
        auto os = open_out(out);
        for (const auto& e : all) {
            os << to_jsonl(e) << '\n';
            ++counts[static_cast<std::size_t>(e.split)];
        }
        os.close();
        r.io.out << "sequences: " << all.size() << " (train=" << counts[0] << " valid=" << counts[1]
                 << " test=" << counts[2] << ")\n";
        r.write_manifest(out, inputs, {out});
    }
};

struct TrainCmd {
    TrainArgs args;
    fs::path pairs;
    fs::path out;

    void setup(CLI::App* app) {
        app->add_option("--pairs", pairs, "Training pairs JSONL")->required();
        app->add_option("--out", out, "Checkpoint path (a .json sidecar is written next to it)")->required();
        add_train_options(app, args, true);
    }

    void run(const Run& r) const {
        const auto cfg = args.resolve();
        const auto ps = load_pairs(pairs, r.io);
        const auto t0 = std::chrono::steady_clock::now();
        auto result = train(cfg, ps, [&](const EpochReport& e) {
            std::ostringstream os;
            os << std::fixed << std::setprecision(6) << e.stage << " epoch " << e.epoch << ": batches=" << e.batches
               << " l_cl=" << e.loss.l_cl << " l_pt=" << e.loss.l_pt << " l_total=" << e.loss.l_total
               << " grad_norm=" << e.loss.grad_norm;
            r.io.out << os.str() << "\n";
        });
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        r.io.log("trained on " + std::to_string(result.pairs_used) + " pairs in " + std::to_string(secs) + " s");
        if (result.degenerate_aux_sentences > 0) {
            r.io.log(std::to_string(result.degenerate_aux_sentences) + " sentences had nothing to mask");
        }
        if (out.has_parent_path()) {
            fs::create_directories(out.parent_path());
        }
        save_checkpoint(out, {std::move(result.params), cfg, std::move(result.history)});
        r.write_manifest(out, {pairs}, {out, sidecar_path(out)});
    }
};

struct EmbedCmd {
    CorpusArgs corpus;
    fs::path checkpoint;
    fs::path import_text;
    fs::path out;

    void setup(CLI::App* app) {
        add_corpus_options(app, corpus, false, false);
        app->add_option("--checkpoint", checkpoint, "Encoder checkpoint");
        app->add_option("--import-text", import_text, "External vectors as id<TAB>v1,v2,...");
        app->add_option("--out", out, "Embedding store path")->required();
    }

    void run(const Run& r) const {
        if (checkpoint.empty() == import_text.empty()) {
            throw UsageError("embed needs exactly one of --checkpoint or --import-text");
        }
        std::vector<fs::path> inputs;
        EmbeddingStore store;
        if (!import_text.empty()) {
            store = EmbeddingStore::import_text(import_text);
            inputs.push_back(import_text);
        } else {
            if (corpus.metadata.empty()) {
                throw UsageError("embed --checkpoint needs --metadata");
            }
            const auto ckpt = load_checkpoint(checkpoint);
            inputs.push_back(checkpoint);
            const auto metas = load_all_metadata(corpus, r.io, &inputs);
            auto res = embed_corpus(ckpt.params, metas);
            if (res.duplicates > 0) {
                r.io.log("warning: " + std::to_string(res.duplicates) + " duplicate item ids (last one kept)");
            }
            store = std::move(res.store);
        }
        if (out.has_parent_path()) {
            fs::create_directories(out.parent_path());
        }
        store.save(out);
        r.io.out << "embedded " << store.size() << " items, d=" << store.dim() << "\n";
        r.write_manifest(out, inputs, {out});
    }
};

struct IndexCmd {
    CorpusArgs corpus;
    fs::path queries;
    std::size_t n_per_query = 50;
    std::uint64_t seed = 42;
    std::string mode = "shared";
    fs::path out;

    void setup(CLI::App* app) {
        add_corpus_options(app, corpus, false, true);
        app->add_option("--queries", queries, "Query JSONL (qid, query, item_id, domain)")->required();
        app->add_option("--n-per-query", n_per_query, "In-domain items sampled per query");
        app->add_option("--seed", seed, "Sampling seed");
        app->add_option("--mode", mode, "shared or per_query")->check(CLI::IsMember({"shared", "per_query"}));
        app->add_option("--out", out, "Pool prefix (writes PREFIX.jsonl and PREFIX.ids)")->required();
    }

    void run(const Run& r) const {
        std::vector<fs::path> inputs{queries};
        const auto task = load_eval_task(queries, TaskKind::complex_search);
        const auto metas = load_all_metadata(corpus, r.io, &inputs);
        const auto pool =
            build_candidate_pool(eval_pairs(task), items_by_domain(metas), n_per_query, seed, parse_pool_mode(mode));
        if (out.has_parent_path()) {
            fs::create_directories(out.parent_path());
        }
        save_pool(out, pool);
        r.io.out << "pool: " << pool.items.size() << " items for " << pool.queries.size() << " queries\n";
        auto jsonl = out;
        jsonl += ".jsonl";
        auto ids = out;
        ids += ".ids";
        r.write_manifest(out, inputs, {jsonl, ids});
    }
};

struct EvalSearchCmd {
    CorpusArgs corpus;
    fs::path queries;
    fs::path pool;
    std::string retriever = "bm25";
    fs::path checkpoint;
    fs::path item_store;
    fs::path query_store;
    std::size_t k = 100;
    double k1 = 1.2;
    double b = 0.75;
    std::size_t threads = 0;
    std::string task_kind = "complex_search";
    std::string name;
    fs::path out;
    fs::path csv;
    fs::path ranked;

    void setup(CLI::App* app) {
        add_corpus_options(app, corpus, false, false);
        app->add_option("--queries", queries, "Query JSONL")->required();
        app->add_option("--pool", pool, "Pool prefix from `index`")->required();
        app->add_option("--retriever", retriever, "bm25 or dense")->check(CLI::IsMember({"bm25", "dense"}));
        app->add_option("--checkpoint", checkpoint, "Encoder for dense retrieval");
        app->add_option("--item-store", item_store, "Precomputed item vectors for dense retrieval");
        app->add_option("--query-store", query_store, "Precomputed query vectors keyed by query id");
        app->add_option("--k", k, "Ranking depth and metric cutoff");
        app->add_option("--k1", k1, "BM25 k1");
        app->add_option("--b", b, "BM25 b");
        app->add_option("--threads", threads, "Worker threads (0: all cores)");
        app->add_option("--task-kind", task_kind, "conventional_search or complex_search")
            ->check(CLI::IsMember({"conventional_search", "complex_search"}));
        app->add_option("--name", name, "Task name in reports");
        app->add_option("--out", out, "Report JSON")->required();
        app->add_option("--csv", csv, "Also write plot-ready CSV");
        app->add_option("--ranked", ranked, "Write rankings as TSV");
    }

    void run(const Run& r) const {
        std::vector<fs::path> inputs{queries};
        const auto task = load_eval_task(queries, parse_task_kind(task_kind), name);
        const auto cp = load_pool(pool);
        {
            auto p = pool;
            p += ".jsonl";
            inputs.push_back(p);
        }
        const auto metas = load_all_metadata(corpus, r.io, &inputs);
        const auto by_id = index_metadata(metas);

        std::unique_ptr<SearchRetriever> ret;
        if (retriever == "bm25") {
            if (metas.empty()) {
                throw UsageError("bm25 retrieval needs --metadata");
            }
            ret = std::make_unique<Bm25Retriever>(cp.items, by_id, Bm25Params{k1, b});
        } else if (!checkpoint.empty()) {
            if (metas.empty()) {
                throw UsageError("dense retrieval with --checkpoint needs --metadata");
            }
            auto params = std::make_shared<const ToyEncoderParams>(load_checkpoint(checkpoint).params);
            inputs.push_back(checkpoint);
            std::vector<ItemMeta> items;
            for (const auto& id : cp.items) {
                if (auto it = by_id.find(id); it != by_id.end()) {
                    items.push_back(*it->second);
                }
            }
            auto store = embed_corpus(*params, items).store;
            ret = std::make_unique<DenseRetriever>("dense:" + checkpoint.filename().string(),
                                                   DenseIndex::from_store(store, store.ids()),
                                                   encoder_query_embedder(params));
        } else {
            if (item_store.empty() || query_store.empty()) {
                throw UsageError("dense retrieval needs --checkpoint or both --item-store and --query-store");
            }
            const auto items = EmbeddingStore::load(item_store);
            auto qs = std::make_shared<const EmbeddingStore>(EmbeddingStore::load(query_store));
            inputs.push_back(item_store);
            inputs.push_back(query_store);
            std::vector<std::string> ids;
            for (const auto& id : cp.items) {
                if (metas.empty() || by_id.contains(id)) {
                    ids.push_back(id);
                }
            }
            std::vector<std::string> missing;
            auto index = DenseIndex::from_store(items, ids, &missing);
            if (!missing.empty()) {
                r.io.log(std::to_string(missing.size()) + " pool items have no vector in the item store");
            }
            ret = std::make_unique<DenseRetriever>("dense:" + item_store.filename().string(), std::move(index),
                                                   store_query_embedder(qs));
        }

        SearchEvalOptions opts;
        opts.k = k;
        opts.threads = threads;
        std::optional<std::ofstream> tsv;
        if (!ranked.empty()) {
            tsv = open_out(ranked);
            opts.on_ranked = [&](const EvalQuery& q, const RankedList& list) { *tsv << ranked_to_tsv(q.query_id, list); };
        }
        auto report = evaluate_search(task, *ret, cp, opts);
        if (tsv) {
            tsv->close();
        }
        r.io.out << report.to_table();
        write_text(out, report.to_json() + "\n");
        std::vector<fs::path> outputs{out};
        if (!csv.empty()) {
            write_text(csv, report.to_csv());
            outputs.push_back(csv);
        }
        if (!ranked.empty()) {
            outputs.push_back(ranked);
        }
        r.write_manifest(out, inputs, outputs);
    }
};

struct EvalSeqrecCmd {
    CorpusArgs corpus;
    fs::path sequences;
    std::vector<std::string> stores;
    std::vector<std::string> checkpoints;
    std::vector<std::size_t> ks{10, 50};
    std::size_t recent = 10;
    std::size_t threads = 0;
    fs::path out;

    void setup(CLI::App* app) {
        add_corpus_options(app, corpus, false, true);
        app->add_option("--sequences", sequences, "Sequence JSONL from `sequences`")->required();
        app->add_option("--store", stores, "Candidate embedding stores as NAME=PATH");
        app->add_option("--checkpoint", checkpoints, "Encoder checkpoints as NAME=PATH");
        app->add_option("--ks", ks, "Cutoffs");
        app->add_option("--recent", recent, "History items averaged into the user vector");
        app->add_option("--threads", threads, "Worker threads (0: all cores)");
        app->add_option("--out", out, "Report JSON")->required();
    }

    void run(const Run& r) const {
        std::vector<fs::path> inputs{sequences};
        const auto examples = load_sequences(sequences, r.io);
        const auto metas = load_all_metadata(corpus, r.io, &inputs);
        const auto candidates = items_by_domain(metas);
        std::vector<std::pair<std::string, std::shared_ptr<const EmbeddingStore>>> models;
        for (const auto& dp : parse_domain_paths(stores, "--store")) {
            models.emplace_back(dp.domain, std::make_shared<const EmbeddingStore>(EmbeddingStore::load(dp.path)));
            inputs.push_back(dp.path);
        }
        for (const auto& dp : parse_domain_paths(checkpoints, "--checkpoint")) {
            const auto ckpt = load_checkpoint(dp.path);
            models.emplace_back(dp.domain, std::make_shared<const EmbeddingStore>(embed_corpus(ckpt.params, metas).store));
            inputs.push_back(dp.path);
        }
        if (models.empty()) {
            throw UsageError("eval-seqrec needs at least one --store or --checkpoint");
        }
        SeqRecOptions opts;
        opts.ks = ks;
        opts.recent = recent;
        opts.threads = threads;
        auto sel = select_and_evaluate_seqrec(models, examples, candidates, opts);
        json j = {{"selected", sel.selected}, {"validation", json::object()}};
        for (const auto& [name, rep] : sel.validation) {
            r.io.out << rep.to_table();
            j["validation"][name] = json::parse(rep.to_json());
        }
        r.io.out << "selected by validation NDCG@10: " << sel.selected << "\n" << sel.test.to_table();
        j["test"] = json::parse(sel.test.to_json());
        write_text(out, j.dump(2) + "\n");
        r.write_manifest(out, inputs, {out});
    }
};

struct GenQueriesCmd {
    CorpusArgs corpus;
    fs::path boundaries;
    std::size_t n = 100;
    std::uint64_t seed = 42;
    std::string endpoint = "mock";
    EndpointConfig ep;
    fs::path transcript;
    fs::path record;
    fs::path out;
    fs::path failures;

    void setup(CLI::App* app) {
        add_corpus_options(app, corpus, true, true);
        app->add_option("--boundaries", boundaries, "Split file; sources come from the test split");
        app->add_option("--n", n, "Number of source reviews to sample");
        app->add_option("--seed", seed, "Sampling seed");
        app->add_option("--endpoint", endpoint, "mock (offline), http, or replay")
            ->check(CLI::IsMember({"mock", "http", "replay"}));
        app->add_option("--base-url", ep.base_url, "Chat-completion server");
        app->add_option("--path", ep.path, "Chat-completion route");
        app->add_option("--model", ep.model, "Model identifier");
        app->add_option("--auth-env", ep.auth_env, "Environment variable holding the bearer token");
        app->add_option("--timeout", ep.timeout_seconds, "Request timeout in seconds");
        app->add_option("--max-retries", ep.max_retries, "Retries on transport errors, 429 and 5xx");
        app->add_option("--max-concurrency", ep.max_concurrency, "Requests in flight");
        app->add_option("--rate-per-minute", ep.rate_per_minute, "Request cap per rate window (0: off)");
        app->add_option("--rate-window", ep.rate_window_seconds, "Rate window in seconds");
        app->add_option("--backoff", ep.backoff_initial_seconds, "First retry delay in seconds");
        app->add_option("--backoff-max", ep.backoff_max_seconds, "Retry delay cap in seconds");
        app->add_option("--temperature", ep.temperature, "Sampling temperature sent to the model");
        app->add_option("--transcript", transcript, "Transcript to replay (--endpoint replay)");
        app->add_option("--record", record, "Write a transcript of every exchange");
        app->add_option("--out", out, "Query JSONL")->required();
        app->add_option("--failures", failures, "Write failed syntheses as JSONL");
    }

    void run(const Run& r) const {
        ep.validate();
        std::vector<fs::path> inputs;
        const auto reviews = load_all_reviews(corpus, r.io, &inputs);
        const auto metas = load_all_metadata(corpus, r.io, &inputs);
        std::optional<SplitBoundaries> test_only;
        if (!boundaries.empty()) {
            const auto bf = load_boundaries(boundaries);
            if (!bf.global) {
                throw UsageError("gen-queries needs global boundaries");
            }
            test_only = bf.global;
            inputs.push_back(boundaries);
        } else {
            r.io.log("no --boundaries given: sampling sources from every split");
        }
        const auto sources = select_sources(reviews, n, seed, test_only);
        r.io.log(std::to_string(sources.size()) + " source reviews selected");

        std::unique_ptr<ChatTransport> base;
        if (endpoint == "mock") {
            base = std::make_unique<MockResponder>();
        } else if (endpoint == "http") {
            base = std::make_unique<HttpTransport>(ep);
        } else {
            if (transcript.empty()) {
                throw UsageError("--endpoint replay needs --transcript");
            }
            base = std::make_unique<ReplayTransport>(transcript);
            inputs.push_back(transcript);
        }
        std::optional<RecordingTransport> recorder;
        ChatTransport* transport = base.get();
        if (!record.empty()) {
            recorder.emplace(*base);
            transport = &*recorder;
        }
        SteadyClock clock;
        const auto results = synthesize_batch(sources, index_metadata(metas), ep, *transport, clock);

        const auto hash = prompt_hash();
        auto os = open_out(out);
        std::map<std::string, std::size_t> reasons;
        std::size_t ok = 0;
        std::optional<std::ofstream> fail_os;
        if (!failures.empty()) {
            fail_os = open_out(failures);
        }
        for (const auto& q : results) {
            if (q.status == QueryStatus::ok) {
                os << to_jsonl(q, hash) << '\n';
                ++ok;
            } else {
                ++reasons[q.reason];
                if (fail_os) {
                    *fail_os << json({{"review_id", q.review_id}, {"item_id", q.item_id}, {"domain", q.domain},
                                      {"reason", q.reason}, {"attempts", q.attempts}})
                                    .dump()
                             << '\n';
                }
            }
        }
        os.close();
        r.io.out << "queries: " << ok << " ok of " << results.size() << "\n";
        for (const auto& [reason, count] : reasons) {
            r.io.out << "  failed(" << reason << "): " << count << "\n";
        }
        r.io.out << "prompt " << kPromptVersion << " sha256=" << hash << "\n";
        std::vector<fs::path> outputs{out};
        if (recorder) {
            recorder->flush(record);
            outputs.push_back(record);
        }
        if (fail_os) {
            fail_os->close();
            outputs.push_back(failures);
        }
        r.write_manifest(out, inputs, outputs);
    }
};

struct AblateCmd {
    CorpusArgs corpus;
    TrainArgs args;
    fs::path pairs;
    fs::path queries;
    std::string target_domain = "Games";
    std::size_t n_per_query = 50;
    std::uint64_t pool_seed = 42;
    std::size_t k = 100;
    std::size_t threads = 0;
    bool no_resume = false;
    fs::path out_dir;

    void setup(CLI::App* app) {
        add_corpus_options(app, corpus, false, true);
        app->add_option("--pairs", pairs, "Training pairs JSONL")->required();
        app->add_option("--queries", queries, "Held-out query JSONL")->required();
        app->add_option("--target-domain", target_domain, "Domain of the single-domain rows");
        app->add_option("--n-per-query", n_per_query, "Pool items sampled per query");
        app->add_option("--pool-seed", pool_seed, "Pool sampling seed");
        app->add_option("--k", k, "Metric cutoff");
        app->add_option("--threads", threads, "Evaluation threads (0: all cores)");
        app->add_flag("--no-resume", no_resume, "Ignore finished rows from earlier runs");
        app->add_option("--out-dir", out_dir, "Directory for the table and row cache")->required();
        add_train_options(app, args, false);
    }

    void run(const Run& r) const {
        const auto base = args.resolve();
        std::vector<fs::path> inputs{pairs, queries};
        const auto ps = load_pairs(pairs, r.io);
        const auto metas = load_all_metadata(corpus, r.io, &inputs);
        const auto all = load_eval_task(queries, TaskKind::complex_search, "all");
        const auto universe = items_by_domain(metas);

        std::vector<AblationTask> tasks;
        EvalTask in_domain{"in-domain", all.kind, {}};
        EvalTask out_domain{"out-of-domain", all.kind, {}};
        for (const auto& q : all.queries) {
            (q.domain == target_domain ? in_domain : out_domain).queries.push_back(q);
        }
        for (const EvalTask* t : std::array<const EvalTask*, 3>{&in_domain, &out_domain, &all}) {
            if (t->queries.empty()) {
                r.io.log("task " + t->name + " has no queries; skipped");
                continue;
            }
            tasks.push_back(AblationTask{t->name, *t, build_candidate_pool(eval_pairs(*t), universe, n_per_query, pool_seed)});
        }

        fs::create_directories(out_dir / "rows");
        AblationCache cache;
        auto row_path = [&](const AblationConfig& c) {
            const auto key = sha256_hex(c.label + "\n" + train_config_to_json(c.config) + "\n" + json(r.config).dump());
            return out_dir / "rows" / (key.substr(0, 24) + ".json");
        };
        cache.lookup = [&](const AblationConfig& c) -> std::optional<AblationRow> {
            const auto p = row_path(c);
            if (no_resume || !fs::exists(p)) {
                return std::nullopt;
            }
            r.io.log("reusing finished row " + c.label);
            return ablation_row_from_json(read_text(p));
        };
        cache.store = [&](const AblationConfig& c, const AblationRow& row) {
            if (row.ok) {
                write_text(row_path(c), to_json(row) + "\n");
            }
            r.io.log("row " + c.label + (row.ok ? " done" : " failed: " + row.error));
        };
        SearchEvalOptions opts;
        opts.k = k;
        opts.threads = threads;
        const auto configs = standard_ablation_configs(base, target_domain);
        const auto table = run_ablation_matrix(configs, tasks, ps, metas, opts, &cache);

        r.io.out << table.to_text();
        const auto json_path = out_dir / "ablation.json";
        const auto csv_path = out_dir / "ablation.csv";
        write_text(json_path, table.to_json() + "\n");
        write_text(csv_path, table.to_csv());
        r.write_manifest(json_path, inputs, {json_path, csv_path});
    }
};

struct SynthCmd {
    SyntheticConfig cfg;
    fs::path out_dir;

    void setup(CLI::App* app) {
        app->add_option("--domains", cfg.domains, "Category tags");
        app->add_option("--items-per-domain", cfg.items_per_domain, "Items per domain");
        app->add_option("--reviews-per-item", cfg.reviews_per_item, "Reviews per item");
        app->add_option("--queries-per-item", cfg.queries_per_item, "Held-out queries per item");
        app->add_option("--concepts", cfg.concepts, "Size of the shared concept list");
        app->add_option("--concepts-per-domain", cfg.concepts_per_domain, "Concept window per domain");
        app->add_option("--concepts-per-item", cfg.concepts_per_item, "Concepts per item");
        app->add_option("--users", cfg.users, "Number of users");
        app->add_option("--seed", cfg.seed, "Generator seed");
        app->add_option("--out-dir", out_dir, "Output directory")->required();
    }

    void run(const Run& r) const {
        const auto corpus = generate_synthetic(cfg);
        fs::create_directories(out_dir);
        std::vector<fs::path> outputs;
        std::map<std::string, std::ofstream> review_files, meta_files;
        for (const auto& d : cfg.domains) {
            outputs.push_back(out_dir / (d + ".reviews.jsonl"));
            review_files.emplace(d, open_out(outputs.back()));
            outputs.push_back(out_dir / (d + ".meta.jsonl"));
            meta_files.emplace(d, open_out(outputs.back()));
        }
        for (const auto& rv : corpus.reviews) {
            review_files.at(rv.domain) << to_jsonl(rv) << '\n';
        }
        for (const auto& m : corpus.metadata) {
            meta_files.at(m.domain) << to_jsonl(m) << '\n';
        }
        review_files.clear();
        meta_files.clear();
        const auto qpath = out_dir / "queries.jsonl";
        {
            auto os = open_out(qpath);
            for (const auto& q : corpus.queries) {
                nlohmann::ordered_json j = {
                    {"qid", q.query_id}, {"query", q.text}, {"item_id", q.gt_item}, {"domain", q.domain}};
                os << j.dump() << '\n';
            }
        }
        outputs.push_back(qpath);
        r.io.out << "synthetic corpus: " << corpus.metadata.size() << " items, " << corpus.reviews.size()
                 << " reviews, " << corpus.queries.size() << " held-out queries in " << out_dir.string() << "\n";
        r.write_manifest(out_dir / "synth", {}, outputs);
    }
};

int exit_code_for(const Error& e) {
    if (dynamic_cast<const UsageError*>(&e) != nullptr) {
        return 1;
    }
    if (dynamic_cast<const DataError*>(&e) != nullptr) {
        return 2;
    }
    return 3;
}

} // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    Io io{out, err};
    CLI::App app{"ctxbench: context-to-item retrieval benchmark and training toolkit", "ctxbench"};
    app.set_version_flag("--version", std::string(CTXBENCH_VERSION));
    app.config_formatter(std::make_shared<JsonConfig>());
    app.set_config("--config", "", "JSON config file; nested objects address subcommands");
    app.allow_config_extras(CLI::config_extras_mode::error);
    app.require_subcommand(1);
    app.failure_message(CLI::FailureMessage::help);
    app.option_defaults()->always_capture_default();

    IngestCmd ingest;
    StatsCmd stats;
    SplitCmd split;
    PairsCmd pairs;
    SequencesCmd sequences;
    TrainCmd train_cmd;
    EmbedCmd embed;
    IndexCmd index;
    EvalSearchCmd eval_search;
    EvalSeqrecCmd eval_seqrec;
    GenQueriesCmd gen_queries;
    AblateCmd ablate;
    SynthCmd synth;

    std::vector<std::pair<CLI::App*, std::function<void(const Run&)>>> commands;
    auto add = [&](const char* name, const char* help, auto& cmd) {
        auto* sub = app.add_subcommand(name, help);
        sub->option_defaults()->always_capture_default();
        cmd.setup(sub);
        commands.emplace_back(sub, [&cmd](const Run& r) { cmd.run(r); });
    };
    add("ingest", "Validate raw JSONL and write canonical per-domain files", ingest);
    add("stats", "Corpus statistics", stats);
    add("split", "Find temporal split boundaries", split);
    add("pairs", "Build <context, metadata> training pairs", pairs);
    add("sequences", "Build next-item examples", sequences);
    add("train", "Train the hashing encoder", train_cmd);
    add("embed", "Write an item embedding store", embed);
    add("index", "Sample the candidate pool for a query set", index);
    add("eval-search", "Product search evaluation", eval_search);
    add("eval-seqrec", "Embedding-similarity next-item baseline", eval_seqrec);
    add("gen-queries", "Synthesize first-person queries from reviews", gen_queries);
    add("ablate", "All-domain vs single-domain and init-mode grid", ablate);
    add("synth", "Generate a shared-vocabulary synthetic corpus", synth);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? 0 : 1;
    }

    for (const auto& [sub, fn] : commands) {
        if (!sub->parsed()) {
            continue;
        }
        Run r{io, sub->get_name(), JsonConfig::to_json(sub, true)};
        io.log(r.command + " config: " + r.config.dump());
        try {
            fn(r);
            return 0;
        } catch (const Error& e) {
            io.log(std::string("error: ") + e.what());
            return exit_code_for(e);
        } catch (const fs::filesystem_error& e) {
            io.log(std::string("error: ") + e.what());
            return 2;
        } catch (const std::exception& e) {
            io.log(std::string("runtime failure: ") + e.what());
            return 3;
        }
    }
    return 1;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    std::vector<const char*> argv;
    argv.reserve(args.size() + 1);
    argv.push_back("ctxbench");
    for (const auto& a : args) {
        argv.push_back(a.c_str());
    }
    return run(static_cast<int>(argv.size()), argv.data(), out, err);
}

} // namespace ctxbench::cli
