#include <algorithm>
#include <cmath>

#include "ctxbench/error.hpp"
#include "ctxbench/retrieval.hpp"

namespace ctxbench {

DenseIndex::DenseIndex(std::size_t dim, std::vector<std::string> ids, std::vector<float> rows)
    : dim_(dim), ids_(std::move(ids)), rows_(std::move(rows)) {
    if (rows_.size() != ids_.size() * dim_) {
        throw DataError("dense index: matrix size does not match ids x dim");
    }
    for (std::size_t i = 0; i < ids_.size(); ++i) {
        double sq = 0.0;
        for (float v : row(i)) {
            sq += static_cast<double>(v) * v;
        }
        if (!(std::abs(std::sqrt(sq) - 1.0) <= EmbeddingStore::kNormTolerance)) {
            throw DataError("dense index: row for '" + ids_[i] + "' is not unit-norm");
        }
    }
}

DenseIndex DenseIndex::from_store(const EmbeddingStore& store, std::span<const std::string> ids,
                                  std::vector<std::string>* missing) {
    std::vector<std::string> kept;
    std::vector<float> rows;
    kept.reserve(ids.size());
    rows.reserve(ids.size() * store.dim());
    for (const auto& id : ids) {
        auto v = store.vector(id);
        if (!v) {
            if (missing == nullptr) {
                throw DataError("no embedding for item '" + id + "'");
            }
            missing->push_back(id);
            continue;
        }
        kept.push_back(id);
        rows.insert(rows.end(), v->begin(), v->end());
    }
    return DenseIndex(store.dim(), std::move(kept), std::move(rows));
}

namespace {

template <typename T>
std::vector<double> dot_all(std::size_t dim, std::span<const float> rows, std::size_t n,
                            std::span<const T> query) {
    if (query.size() != dim) {
        throw UsageError("dense index: query has dimension " + std::to_string(query.size()) +
                         ", index has " + std::to_string(dim));
    }
    std::vector<double> q(query.begin(), query.end());
    std::vector<double> scores(n);
    for (std::size_t i = 0; i < n; ++i) {
        const float* r = rows.data() + i * dim;
        double acc = 0.0;
        for (std::size_t j = 0; j < dim; ++j) {
            acc += q[j] * static_cast<double>(r[j]);
        }
        scores[i] = acc;
    }
    return scores;
}

} // namespace

std::vector<double> DenseIndex::score_all(std::span<const double> query) const {
    return dot_all(dim_, rows_, ids_.size(), query);
}

std::vector<double> DenseIndex::score_all(std::span<const float> query) const {
    return dot_all(dim_, rows_, ids_.size(), query);
}

Matrix DenseIndex::score_many(const Matrix& queries) const {
    if (static_cast<std::size_t>(queries.cols()) != dim_) {
        throw UsageError("dense index: query batch has dimension " + std::to_string(queries.cols()) +
                         ", index has " + std::to_string(dim_));
    }
    const auto n = ids_.size();
    Matrix scores(queries.rows(), static_cast<Eigen::Index>(n));
    // A slab of rows is reused across every query before moving on.
    constexpr std::size_t kBlock = 512;
    for (std::size_t start = 0; start < n; start += kBlock) {
        const std::size_t end = std::min(n, start + kBlock);
        for (Eigen::Index q = 0; q < queries.rows(); ++q) {
            const double* qv = queries.row(q).data();
            for (std::size_t i = start; i < end; ++i) {
                const float* r = rows_.data() + i * dim_;
                double acc = 0.0;
                for (std::size_t j = 0; j < dim_; ++j) {
                    acc += qv[j] * static_cast<double>(r[j]);
                }
                scores(q, static_cast<Eigen::Index>(i)) = acc;
            }
        }
    }
    return scores;
}

RankedList DenseIndex::rank(std::span<const double> query, std::size_t k) const {
    auto scores = score_all(query);
    return select_top_k(scores, ids_, k);
}

RankedList dense_rank(const DenseIndex& index, std::span<const double> query, std::size_t k) {
    return index.rank(query, k);
}

} // namespace ctxbench
