#include "ctxbench/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "ctxbench/error.hpp"

namespace ctxbench {

using nlohmann::json;

namespace {

constexpr char kMagic[4] = {'C', 'C', 'K', 'P'};
constexpr std::uint32_t kVersion = 1;

json hash_to_json(const HashConfig& h) {
    return {{"orders", h.orders}, {"buckets", h.buckets}, {"seed", h.seed}, {"max_tokens", h.max_tokens}};
}

HashConfig hash_from_json(const json& j) {
    HashConfig h;
    h.orders = j.at("orders").get<std::vector<int>>();
    h.buckets = j.at("buckets").get<std::uint32_t>();
    h.seed = j.at("seed").get<std::uint64_t>();
    h.max_tokens = j.at("max_tokens").get<std::size_t>();
    return h;
}

json config_to_json(const TrainConfig& c) {
    return {{"tau", c.tau},
            {"lambda", c.lambda},
            {"batch_size", c.batch_size},
            {"learning_rate", c.learning_rate},
            {"epochs", c.epochs},
            {"seed", c.seed},
            {"domain_filter", c.domain_filter},
            {"init_mode", std::string(to_string(c.init_mode))},
            {"loss_reduction", std::string(to_string(c.loss_reduction))},
            {"symmetric", c.symmetric},
            {"aux_epochs", c.aux_epochs},
            {"aux_negatives", c.aux_negatives},
            {"mask_rate", c.mask_rate},
            {"hidden", c.hidden},
            {"dim", c.dim},
            {"hash", hash_to_json(c.hash)}};
}

TrainConfig config_from_json(const json& j) {
    TrainConfig c;
    c.tau = j.at("tau").get<double>();
    c.lambda = j.at("lambda").get<double>();
    c.batch_size = j.at("batch_size").get<std::size_t>();
    c.learning_rate = j.at("learning_rate").get<double>();
    c.epochs = j.at("epochs").get<std::size_t>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.domain_filter = j.at("domain_filter").get<std::vector<std::string>>();
    c.init_mode = parse_init_mode(j.at("init_mode").get<std::string>());
    c.loss_reduction = parse_loss_reduction(j.at("loss_reduction").get<std::string>());
    c.symmetric = j.at("symmetric").get<bool>();
    c.aux_epochs = j.at("aux_epochs").get<std::size_t>();
    c.aux_negatives = j.at("aux_negatives").get<std::size_t>();
    c.mask_rate = j.at("mask_rate").get<double>();
    c.hidden = j.at("hidden").get<std::size_t>();
    c.dim = j.at("dim").get<std::size_t>();
    c.hash = hash_from_json(j.at("hash"));
    return c;
}

template <typename T>
void put(std::string& out, T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.append(buf, sizeof(T));
}

std::string read_file(const std::filesystem::path& path, bool binary) {
    std::ifstream in(path, binary ? std::ios::binary : std::ios::in);
    if (!in) {
        throw IoError("cannot read " + path.string());
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw IoError("write failed: " + path.string());
    }
}

} // namespace

std::filesystem::path sidecar_path(const std::filesystem::path& path) {
    auto p = path;
    p += ".json";
    return p;
}

std::string train_config_to_json(const TrainConfig& cfg) {
    return config_to_json(cfg).dump(2);
}

TrainConfig train_config_from_json(std::string_view text) {
    try {
        return config_from_json(json::parse(text));
    } catch (const json::exception& e) {
        throw DataError(std::string("bad training config: ") + e.what());
    }
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    const auto& p = ckpt.params;
    p.validate();
    std::string bin;
    bin.append(kMagic, 4);
    put<std::uint32_t>(bin, kVersion);
    put<std::uint32_t>(bin, static_cast<std::uint32_t>(p.buckets()));
    put<std::uint32_t>(bin, static_cast<std::uint32_t>(p.hidden()));
    put<std::uint32_t>(bin, static_cast<std::uint32_t>(p.dim()));
    bin.append(reinterpret_cast<const char*>(p.table.data()), static_cast<std::size_t>(p.table.size()) * sizeof(double));
    bin.append(reinterpret_cast<const char*>(p.projection.data()),
               static_cast<std::size_t>(p.projection.size()) * sizeof(double));
    write_file(path, bin);

    json history = json::array();
    for (const auto& e : ckpt.history) {
        history.push_back({{"stage", e.stage},
                           {"epoch", e.epoch},
                           {"batches", e.batches},
                           {"l_cl", e.loss.l_cl},
                           {"l_pt", e.loss.l_pt},
                           {"l_total", e.loss.l_total},
                           {"grad_norm", e.loss.grad_norm}});
    }
    json side = {{"format", "ctxbench-checkpoint"},
                 {"version", kVersion},
                 {"hash", hash_to_json(p.hash)},
                 {"config", config_to_json(ckpt.config)},
                 {"history", std::move(history)}};
    write_file(sidecar_path(path), side.dump(2) + "\n");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    auto bin = read_file(path, true);
    auto side_text = read_file(sidecar_path(path), false);

    constexpr std::size_t header = 4 + 4 * sizeof(std::uint32_t);
    if (bin.size() < header || std::memcmp(bin.data(), kMagic, 4) != 0) {
        throw DataError("not a ctxbench checkpoint: " + path.string());
    }
    std::uint32_t fields[4];
    std::memcpy(fields, bin.data() + 4, sizeof(fields));
    if (fields[0] != kVersion) {
        throw DataError("unsupported checkpoint version " + std::to_string(fields[0]));
    }
    const std::size_t buckets = fields[1];
    const std::size_t hidden = fields[2];
    const std::size_t dim = fields[3];
    const std::size_t expected = header + (buckets * hidden + hidden * dim) * sizeof(double);
    if (bin.size() != expected) {
        throw DataError("checkpoint size does not match its header: " + path.string());
    }

    Checkpoint ckpt;
    try {
        auto side = json::parse(side_text);
        ckpt.params.hash = hash_from_json(side.at("hash"));
        ckpt.config = config_from_json(side.at("config"));
        for (const auto& e : side.at("history")) {
            EpochReport r;
            r.stage = e.at("stage").get<std::string>();
            r.epoch = e.at("epoch").get<std::size_t>();
            r.batches = e.at("batches").get<std::size_t>();
            r.loss.l_cl = e.at("l_cl").get<double>();
            r.loss.l_pt = e.at("l_pt").get<double>();
            r.loss.l_total = e.at("l_total").get<double>();
            r.loss.grad_norm = e.at("grad_norm").get<double>();
            ckpt.history.push_back(r);
        }
    } catch (const json::exception& e) {
        throw DataError("bad checkpoint sidecar " + sidecar_path(path).string() + ": " + e.what());
    }
    ckpt.params.table.resize(static_cast<Eigen::Index>(buckets), static_cast<Eigen::Index>(hidden));
    ckpt.params.projection.resize(static_cast<Eigen::Index>(hidden), static_cast<Eigen::Index>(dim));
    std::memcpy(ckpt.params.table.data(), bin.data() + header, buckets * hidden * sizeof(double));
    std::memcpy(ckpt.params.projection.data(), bin.data() + header + buckets * hidden * sizeof(double),
                hidden * dim * sizeof(double));
    ckpt.params.validate();
    return ckpt;
}

} // namespace ctxbench
