#include "ctxbench/encoder.hpp"

#include <cmath>

#include "ctxbench/error.hpp"
#include "ctxbench/hashing.hpp"
#include "ctxbench/random.hpp"
#include "ctxbench/text.hpp"

namespace ctxbench {

void HashConfig::validate() const {
    if (buckets < 2) {
        throw UsageError("hash config: need at least 2 buckets (bucket 0 is reserved)");
    }
    if (orders.empty()) {
        throw UsageError("hash config: at least one n-gram order is required");
    }
    for (int n : orders) {
        if (n < 1) {
            throw UsageError("hash config: n-gram orders must be >= 1");
        }
    }
    if (max_tokens == 0) {
        throw UsageError("hash config: max_tokens must be positive");
    }
}

std::vector<std::uint32_t> hash_tokens(std::string_view sentence, const HashConfig& cfg) {
    auto tokens = tokenize(sentence, cfg.max_tokens);
    std::vector<std::uint32_t> ids;
    const std::uint64_t usable = cfg.buckets - 1;
    std::string gram;
    for (int order : cfg.orders) {
        const auto n = static_cast<std::size_t>(order);
        if (tokens.size() < n) {
            continue;
        }
        // Mixing the order into the seed keeps "a b" (bigram) and a unigram
        // that happens to contain the separator byte apart.
        const std::uint64_t seed = cfg.seed ^ mix64(static_cast<std::uint64_t>(order));
        for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
            gram.clear();
            for (std::size_t k = 0; k < n; ++k) {
                if (k > 0) {
                    gram.push_back('\x1f');
                }
                gram.append(tokens[i + k]);
            }
            ids.push_back(static_cast<std::uint32_t>(1 + hash64(gram, seed) % usable));
        }
    }
    if (ids.empty()) {
        ids.push_back(kNullBucket);
    }
    return ids;
}

ToyEncoderParams ToyEncoderParams::random(const HashConfig& hash, std::size_t hidden,
                                          std::size_t dim, std::uint64_t seed) {
    hash.validate();
    if (hidden == 0 || dim == 0) {
        throw UsageError("encoder hidden and output dimensions must be positive");
    }
    ToyEncoderParams p;
    p.hash = hash;
    p.table.resize(hash.buckets, static_cast<Eigen::Index>(hidden));
    p.projection.resize(static_cast<Eigen::Index>(hidden), static_cast<Eigen::Index>(dim));
    Rng rng(seed);
    const double table_scale = 1.0 / std::sqrt(static_cast<double>(hidden));
    const double proj_scale = 1.0 / std::sqrt(static_cast<double>(dim));
    for (Eigen::Index i = 0; i < p.table.size(); ++i) {
        p.table.data()[i] = table_scale * standard_normal(rng);
    }
    for (Eigen::Index i = 0; i < p.projection.size(); ++i) {
        p.projection.data()[i] = proj_scale * standard_normal(rng);
    }
    return p;
}

bool ToyEncoderParams::finite() const {
    return table.allFinite() && projection.allFinite();
}

void ToyEncoderParams::validate() const {
    hash.validate();
    if (table.rows() != static_cast<Eigen::Index>(hash.buckets)) {
        throw UsageError("encoder table rows do not match the bucket count");
    }
    if (table.cols() == 0 || projection.cols() == 0 || projection.rows() != table.cols()) {
        throw UsageError("encoder projection shape does not match the table");
    }
    if (!finite()) {
        throw UsageError("encoder parameters contain non-finite values");
    }
}

Vector l2_normalize(const Vector& v) {
    const double norm = v.norm();
    if (norm == 0.0 || !std::isfinite(norm)) {
        Vector e = Vector::Zero(v.size());
        if (e.size() > 0) {
            e[0] = 1.0;
        }
        return e;
    }
    return v / norm;
}

EncodeTrace encode_traced(const ToyEncoderParams& params, std::vector<std::uint32_t> buckets) {
    EncodeTrace t;
    t.buckets = std::move(buckets);
    t.pooled = Vector::Zero(params.table.cols());
    for (auto b : t.buckets) {
        t.pooled += params.table.row(b).transpose();
    }
    t.pooled /= static_cast<double>(t.buckets.size());
    t.projected = params.projection.transpose() * t.pooled;
    t.norm = t.projected.norm();
    t.output = l2_normalize(t.projected);
    return t;
}

Vector encode_buckets(const ToyEncoderParams& params, std::span<const std::uint32_t> buckets) {
    Vector pooled = Vector::Zero(params.table.cols());
    for (auto b : buckets) {
        pooled += params.table.row(b).transpose();
    }
    pooled /= static_cast<double>(buckets.size());
    return l2_normalize(params.projection.transpose() * pooled);
}

Vector encode(const ToyEncoderParams& params, std::string_view sentence) {
    auto ids = hash_tokens(sentence, params.hash);
    return encode_buckets(params, ids);
}

ParamGradients::ParamGradients(const ToyEncoderParams& params)
    : table(Matrix::Zero(params.table.rows(), params.table.cols())),
      projection(Matrix::Zero(params.projection.rows(), params.projection.cols())),
      touched(static_cast<std::size_t>(params.table.rows()), 0) {}

void ParamGradients::clear() {
    for (auto r : touched_rows) {
        table.row(r).setZero();
        touched[r] = 0;
    }
    touched_rows.clear();
    projection.setZero();
}

void ParamGradients::add_to_row(std::uint32_t row, const Vector& g) {
    if (!touched[row]) {
        touched[row] = 1;
        touched_rows.push_back(row);
    }
    table.row(row) += g.transpose();
}

double ParamGradients::squared_norm() const {
    double s = projection.squaredNorm();
    for (auto r : touched_rows) {
        s += table.row(r).squaredNorm();
    }
    return s;
}

std::vector<double> ParamGradients::flatten() const {
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(table.size() + projection.size()));
    out.insert(out.end(), table.data(), table.data() + table.size());
    out.insert(out.end(), projection.data(), projection.data() + projection.size());
    return out;
}

void backprop_encoding(const ToyEncoderParams& params, const EncodeTrace& trace,
                       const Vector& grad_output, ParamGradients& grads) {
    if (trace.norm == 0.0) {
        return; // the fallback basis vector does not depend on the parameters
    }
    const Vector& s = trace.output;
    const Vector grad_projected = (grad_output - s * s.dot(grad_output)) / trace.norm;
    grads.projection.noalias() += trace.pooled * grad_projected.transpose();
    const Vector grad_pooled = params.projection * grad_projected;
    const Vector per_row = grad_pooled / static_cast<double>(trace.buckets.size());
    for (auto b : trace.buckets) {
        grads.add_to_row(b, per_row);
    }
}

} // namespace ctxbench
