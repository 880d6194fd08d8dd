#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ctxbench/encoder.hpp"

namespace ctxbench {

struct ItemMeta;

/// Immutable id -> unit vector table.
///
/// File layout (all integers little-endian):
///   char[4]  magic "CEMB"
///   u32      version (1)
///   u32      d
///   u64      count
///   count x { u32 byte_length; byte_length bytes of UTF-8 id }   sorted, unique
///   count x d float32                                            row-major
class EmbeddingStore {
public:
    static constexpr std::uint32_t kVersion = 1;
    static constexpr double kNormTolerance = 1e-6;

    EmbeddingStore() = default;
    EmbeddingStore(std::size_t dim, std::vector<std::string> sorted_ids, std::vector<float> rows);

    std::size_t dim() const { return dim_; }
    std::size_t size() const { return ids_.size(); }
    const std::vector<std::string>& ids() const { return ids_; }
    std::span<const float> row(std::size_t i) const {
        return {data_.data() + i * dim_, dim_};
    }
    std::optional<std::size_t> find(std::string_view id) const;
    std::optional<std::span<const float>> vector(std::string_view id) const;

    std::string serialize() const;
    static EmbeddingStore deserialize(std::string_view bytes);

    void save(const std::filesystem::path& path) const;
    static EmbeddingStore load(const std::filesystem::path& path);

    /// Reads "id<TAB>v1,v2,..." lines; vectors are normalized on import.
    static EmbeddingStore import_text(const std::filesystem::path& path);

    bool operator==(const EmbeddingStore&) const = default;

private:
    std::size_t dim_ = 0;
    std::vector<std::string> ids_;
    std::vector<float> data_;
};

/// Single writer. Vectors are normalized when added; a repeated id replaces
/// the earlier vector and bumps `duplicates()`.
class EmbeddingStoreBuilder {
public:
    explicit EmbeddingStoreBuilder(std::size_t dim);

    void add(std::string id, std::span<const double> values);
    void add(std::string id, const Vector& values) {
        add(std::move(id), std::span<const double>(values.data(), static_cast<std::size_t>(values.size())));
    }
    std::size_t duplicates() const { return duplicates_; }
    EmbeddingStore build() const;

private:
    std::size_t dim_;
    std::map<std::string, std::vector<float>> rows_;
    std::size_t duplicates_ = 0;
};

struct EmbedResult {
    EmbeddingStore store;
    std::size_t duplicates = 0;
};

/// One vector per item, computed from the flattened metadata text.
EmbedResult embed_corpus(const ToyEncoderParams& params, std::span<const ItemMeta> metadata);

} // namespace ctxbench
