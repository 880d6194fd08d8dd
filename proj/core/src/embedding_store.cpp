#include "ctxbench/embedding_store.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "ctxbench/corpus.hpp"
#include "ctxbench/error.hpp"
#include "ctxbench/pipeline.hpp"
#include "ctxbench/text.hpp"

namespace ctxbench {

namespace {

constexpr char kMagic[4] = {'C', 'E', 'M', 'B'};

static_assert(std::endian::native == std::endian::little,
              "store I/O assumes a little-endian host");

template <typename T>
void put(std::string& out, T value) {
    char buf[sizeof(T)];
    std::memcpy(buf, &value, sizeof(T));
    out.append(buf, sizeof(T));
}

class Reader {
public:
    explicit Reader(std::string_view bytes) : bytes_(bytes) {}

    template <typename T>
    T get() {
        need(sizeof(T));
        T value;
        std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return value;
    }

    std::string_view take(std::size_t n) {
        need(n);
        auto s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    bool done() const { return pos_ == bytes_.size(); }

private:
    void need(std::size_t n) const {
        if (bytes_.size() - pos_ < n) {
            throw DataError("embedding store is truncated");
        }
    }

    std::string_view bytes_;
    std::size_t pos_ = 0;
};

void check_unit(std::span<const float> row, std::string_view id) {
    double sq = 0.0;
    for (float v : row) {
        if (!std::isfinite(v)) {
            throw DataError("embedding for '" + std::string(id) + "' is not finite");
        }
        sq += static_cast<double>(v) * v;
    }
    if (std::abs(std::sqrt(sq) - 1.0) > EmbeddingStore::kNormTolerance) {
        throw DataError("embedding for '" + std::string(id) + "' is not unit-norm");
    }
}

std::vector<float> normalized_floats(std::span<const double> values) {
    double sq = 0.0;
    for (double v : values) {
        if (!std::isfinite(v)) {
            throw DataError("embedding contains non-finite values");
        }
        sq += v * v;
    }
    if (sq == 0.0) {
        throw DataError("cannot store a zero embedding");
    }
    const double norm = std::sqrt(sq);
    std::vector<float> out(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
        out[i] = static_cast<float>(values[i] / norm);
    }
    return out;
}

} // namespace

EmbeddingStore::EmbeddingStore(std::size_t dim, std::vector<std::string> sorted_ids,
                               std::vector<float> rows)
    : dim_(dim), ids_(std::move(sorted_ids)), data_(std::move(rows)) {
    if (dim_ == 0 && !ids_.empty()) {
        throw DataError("embedding store with entries must have positive dimension");
    }
    if (data_.size() != ids_.size() * dim_) {
        throw DataError("embedding store matrix size does not match count x d");
    }
    for (std::size_t i = 0; i < ids_.size(); ++i) {
        if (i > 0 && !(ids_[i - 1] < ids_[i])) {
            throw DataError("embedding store ids must be sorted and unique");
        }
        check_unit(row(i), ids_[i]);
    }
}

std::optional<std::size_t> EmbeddingStore::find(std::string_view id) const {
    auto it = std::lower_bound(ids_.begin(), ids_.end(), id,
                               [](const std::string& a, std::string_view b) { return a < b; });
    if (it == ids_.end() || *it != id) {
        return std::nullopt;
    }
    return static_cast<std::size_t>(it - ids_.begin());
}

std::optional<std::span<const float>> EmbeddingStore::vector(std::string_view id) const {
    auto i = find(id);
    if (!i) {
        return std::nullopt;
    }
    return row(*i);
}

std::string EmbeddingStore::serialize() const {
    std::string out;
    out.append(kMagic, sizeof(kMagic));
    put<std::uint32_t>(out, kVersion);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(dim_));
    put<std::uint64_t>(out, ids_.size());
    for (const auto& id : ids_) {
        put<std::uint32_t>(out, static_cast<std::uint32_t>(id.size()));
        out.append(id);
    }
    out.append(reinterpret_cast<const char*>(data_.data()), data_.size() * sizeof(float));
    return out;
}

EmbeddingStore EmbeddingStore::deserialize(std::string_view bytes) {
    Reader in(bytes);
    if (in.take(4) != std::string_view(kMagic, 4)) {
        throw DataError("not an embedding store (bad magic)");
    }
    auto version = in.get<std::uint32_t>();
    if (version != kVersion) {
        throw DataError("unsupported embedding store version " + std::to_string(version));
    }
    auto dim = in.get<std::uint32_t>();
    auto count = in.get<std::uint64_t>();
    std::vector<std::string> ids;
    ids.reserve(static_cast<std::size_t>(std::min<std::uint64_t>(count, bytes.size())));
    for (std::uint64_t i = 0; i < count; ++i) {
        auto len = in.get<std::uint32_t>();
        ids.emplace_back(in.take(len));
    }
    auto matrix = in.take(static_cast<std::size_t>(count) * dim * sizeof(float));
    std::vector<float> rows(static_cast<std::size_t>(count) * dim);
    std::memcpy(rows.data(), matrix.data(), matrix.size());
    if (!in.done()) {
        throw DataError("trailing bytes after embedding store matrix");
    }
    return EmbeddingStore(dim, std::move(ids), std::move(rows));
}

void EmbeddingStore::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    auto bytes = serialize();
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw IoError("write failed: " + path.string());
    }
}

EmbeddingStore EmbeddingStore::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot read " + path.string());
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    return deserialize(buf.str());
}

EmbeddingStore EmbeddingStore::import_text(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot read " + path.string());
    }
    std::optional<EmbeddingStoreBuilder> builder;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) {
            continue;
        }
        auto tab = line.find('\t');
        if (tab == std::string::npos || tab == 0) {
            throw DataError(path.string() + ":" + std::to_string(line_no) + ": expected id<TAB>values");
        }
        std::vector<double> values;
        std::string_view rest(line);
        rest.remove_prefix(tab + 1);
        while (!rest.empty()) {
            auto comma = rest.find(',');
            auto field = std::string(trim(rest.substr(0, comma)));
            char* end = nullptr;
            double v = std::strtod(field.c_str(), &end);
            if (field.empty() || end != field.c_str() + field.size()) {
                throw DataError(path.string() + ":" + std::to_string(line_no) + ": bad number '" + field + "'");
            }
            values.push_back(v);
            if (comma == std::string_view::npos) {
                break;
            }
            rest.remove_prefix(comma + 1);
        }
        if (!builder) {
            builder.emplace(values.size());
        }
        builder->add(line.substr(0, tab), values);
    }
    return builder ? builder->build() : EmbeddingStore{};
}

EmbeddingStoreBuilder::EmbeddingStoreBuilder(std::size_t dim) : dim_(dim) {
    if (dim_ == 0) {
        throw UsageError("embedding dimension must be positive");
    }
}

void EmbeddingStoreBuilder::add(std::string id, std::span<const double> values) {
    if (values.size() != dim_) {
        throw DataError("embedding for '" + id + "' has dimension " + std::to_string(values.size()) +
                        ", expected " + std::to_string(dim_));
    }
    auto [it, inserted] = rows_.insert_or_assign(std::move(id), normalized_floats(values));
    (void)it;
    if (!inserted) {
        ++duplicates_;
    }
}

EmbeddingStore EmbeddingStoreBuilder::build() const {
    std::vector<std::string> ids;
    std::vector<float> data;
    ids.reserve(rows_.size());
    data.reserve(rows_.size() * dim_);
    for (const auto& [id, row] : rows_) {
        ids.push_back(id);
        data.insert(data.end(), row.begin(), row.end());
    }
    return EmbeddingStore(dim_, std::move(ids), std::move(data));
}

EmbedResult embed_corpus(const ToyEncoderParams& params, std::span<const ItemMeta> metadata) {
    EmbeddingStoreBuilder builder(params.dim());
    for (const auto& m : metadata) {
        builder.add(m.item_id, encode(params, flatten_metadata(m)));
    }
    return {builder.build(), builder.duplicates()};
}

} // namespace ctxbench
