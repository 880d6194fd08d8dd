#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

namespace ctxbench {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

/// Bucket 0 is reserved for sentences that produce no tokens; n-grams hash
/// into [1, buckets).
inline constexpr std::uint32_t kNullBucket = 0;

struct HashConfig {
    std::vector<int> orders{1, 2};
    std::uint32_t buckets = 1u << 14;
    std::uint64_t seed = 0x5eedULL;
    std::size_t max_tokens = 64;

    void validate() const;
    bool operator==(const HashConfig&) const = default;
};

/// Tokenizes (see `tokenize`), truncates to `max_tokens` words, and emits one
/// bucket per n-gram for every configured order. Ids are grouped by order and
/// follow token position within an order.
std::vector<std::uint32_t> hash_tokens(std::string_view sentence, const HashConfig& cfg);

/// Parameters of the hashed bag-of-n-grams encoder:
///   pooled = mean(table[b] for b in buckets)          (hidden)
///   output = normalize(pooled * projection)           (dim)
struct ToyEncoderParams {
    HashConfig hash;
    Matrix table;      ///< buckets x hidden
    Matrix projection; ///< hidden x dim

    /// Gaussian init with std 1/sqrt(hidden) for the table and 1/sqrt(dim)
    /// for the projection.
    static ToyEncoderParams random(const HashConfig& hash, std::size_t hidden, std::size_t dim,
                                   std::uint64_t seed);

    std::size_t buckets() const { return static_cast<std::size_t>(table.rows()); }
    std::size_t hidden() const { return static_cast<std::size_t>(table.cols()); }
    std::size_t dim() const { return static_cast<std::size_t>(projection.cols()); }
    std::size_t parameter_count() const {
        return static_cast<std::size_t>(table.size() + projection.size());
    }
    bool finite() const;
    /// Throws UsageError on inconsistent shapes or non-finite values.
    void validate() const;

    bool operator==(const ToyEncoderParams& o) const {
        return hash == o.hash && table == o.table && projection == o.projection;
    }
};

/// Unit-normalizes `v`. The zero vector maps to the first basis vector so the
/// output is always a unit vector.
Vector l2_normalize(const Vector& v);

/// Intermediate values kept for the backward pass.
struct EncodeTrace {
    std::vector<std::uint32_t> buckets;
    Vector pooled;
    Vector projected;
    double norm = 0.0;
    Vector output;
};

EncodeTrace encode_traced(const ToyEncoderParams& params, std::vector<std::uint32_t> buckets);
Vector encode_buckets(const ToyEncoderParams& params, std::span<const std::uint32_t> buckets);
Vector encode(const ToyEncoderParams& params, std::string_view sentence);

/// Dense gradient buffers with a record of which table rows were written, so
/// updates and resets only touch those rows.
struct ParamGradients {
    Matrix table;
    Matrix projection;
    std::vector<std::uint32_t> touched_rows;
    std::vector<char> touched;

    explicit ParamGradients(const ToyEncoderParams& params);

    void clear();
    void add_to_row(std::uint32_t row, const Vector& g);
    double squared_norm() const;
    /// Flattened in table-then-projection order; used by gradient checks.
    std::vector<double> flatten() const;
};

/// Accumulates d(loss)/d(params) given d(loss)/d(output) for one encoding.
/// The normalization Jacobian is (I - s s^T) / |z|.
void backprop_encoding(const ToyEncoderParams& params, const EncodeTrace& trace,
                       const Vector& grad_output, ParamGradients& grads);

} // namespace ctxbench
