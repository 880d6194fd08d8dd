#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ctxbench/encoder.hpp"
#include "ctxbench/pipeline.hpp"
#include "ctxbench/random.hpp"

namespace ctxbench {

enum class InitMode { scratch, from_aux_pretrained };
enum class LossReduction { mean, sum };

std::string_view to_string(InitMode m);
std::string_view to_string(LossReduction r);
InitMode parse_init_mode(std::string_view s);
LossReduction parse_loss_reduction(std::string_view s);

struct TrainConfig {
    double tau = 0.05;
    double lambda = 0.1;
    std::size_t batch_size = 32;
    double learning_rate = 2.0;
    std::size_t epochs = 5;
    std::uint64_t seed = 42;
    /// Empty means every domain.
    std::vector<std::string> domain_filter;
    InitMode init_mode = InitMode::scratch;
    LossReduction loss_reduction = LossReduction::mean;
    /// Adds the metadata->context direction and averages both.
    bool symmetric = false;
    /// Auxiliary-only epochs run before the combined objective when
    /// init_mode is from_aux_pretrained.
    std::size_t aux_epochs = 2;
    std::size_t aux_negatives = 20;
    double mask_rate = 0.15;

    HashConfig hash;
    std::size_t hidden = 64;
    std::size_t dim = 32;

    void validate() const;
    bool operator==(const TrainConfig&) const = default;
};

struct LossReport {
    double l_cl = 0.0;
    double l_pt = 0.0;
    double l_total = 0.0;
    double grad_norm = 0.0;
};

inline double total_loss(double l_cl, double l_pt, double lambda) {
    return l_cl + lambda * l_pt;
}

// ---------------------------------------------------------------------------
// In-batch contrastive loss

struct ContrastiveResult {
    double loss = 0.0;
    Matrix grad_contexts;  ///< B x d
    Matrix grad_metadatas; ///< B x d
};

/// Row i of `contexts` is paired with row i of `metadatas`; every other row of
/// `metadatas` is a negative for it. Logits are shifted by their row maximum
/// before exponentiation. Throws UsageError for B < 2 or tau <= 0, DataError
/// for non-finite inputs.
ContrastiveResult contrastive_loss_and_grad(const Matrix& contexts, const Matrix& metadatas,
                                            double tau,
                                            LossReduction reduction = LossReduction::mean,
                                            bool symmetric = false);

// ---------------------------------------------------------------------------
// Auxiliary denoising loss

struct MaskedPrediction {
    std::uint32_t target = 0;
    std::vector<std::uint32_t> negatives;
};

struct MaskedSentence {
    std::vector<std::uint32_t> visible;
    std::vector<MaskedPrediction> predictions;
};

/// Masks round(mask_rate * n) buckets (at least one, at most n - 1) and draws
/// `negatives` distinct-from-target buckets uniformly for each. Sentences with
/// fewer than two real buckets get no predictions.
MaskedSentence mask_sentence(std::span<const std::uint32_t> buckets, double mask_rate,
                             std::size_t negatives, std::uint32_t bucket_count, Rng& rng);

struct AuxResult {
    double loss = 0.0;
    std::size_t predictions = 0;
    std::size_t degenerate_sentences = 0;
};

/// Each masked bucket is predicted from the encoding s of the visible buckets
/// with a sampled softmax whose candidate scores are s . (table[b] *
/// projection). Returns the mean negative log-likelihood over all
/// predictions (0 when there are none). When `grads` is set, adds
/// `grad_scale` * d(loss)/d(params) into it.
AuxResult auxiliary_loss(const ToyEncoderParams& params, std::span<const MaskedSentence> sentences,
                         ParamGradients* grads = nullptr, double grad_scale = 1.0);

// ---------------------------------------------------------------------------
// Combined objective

struct TrainBatch {
    std::vector<std::vector<std::uint32_t>> contexts;
    std::vector<std::vector<std::uint32_t>> metadatas;
    /// Auxiliary targets for every context and metadata sentence.
    std::vector<MaskedSentence> masked;
};

struct ObjectiveOptions {
    double tau = 0.05;
    double lambda = 0.1;
    LossReduction reduction = LossReduction::mean;
    bool symmetric = false;
    /// false for the auxiliary-only stage; l_cl is then reported as 0.
    bool use_contrastive = true;
};

ObjectiveOptions objective_options(const TrainConfig& cfg);

/// Loss report for one batch and, when `grads` is set, the accumulated
/// gradient of l_total with respect to every parameter.
LossReport compute_objective(const ToyEncoderParams& params, const TrainBatch& batch,
                             const ObjectiveOptions& opts, ParamGradients* grads);

TrainBatch make_batch(std::span<const std::vector<std::uint32_t>> contexts,
                      std::span<const std::vector<std::uint32_t>> metadatas,
                      const TrainConfig& cfg, std::uint32_t bucket_count, Rng& rng);

// ---------------------------------------------------------------------------
// Gradient checking

struct GradCheckReport {
    double max_relative_error = 0.0;
    /// Largest absolute error among coordinates whose gradients are both
    /// below the relative-error floor.
    double max_absolute_error = 0.0;
    std::size_t worst_index = 0;
    std::size_t coordinates = 0;

    bool passed(double tolerance, double absolute_tolerance = 1e-8) const {
        return max_relative_error < tolerance && max_absolute_error < absolute_tolerance;
    }
};

GradCheckReport compare_gradients(std::span<const double> analytic, std::span<const double> numeric,
                                  double relative_floor = 1e-6);

/// Central differences of l_total over every parameter coordinate, in
/// ParamGradients::flatten order.
std::vector<double> numeric_gradient(const ToyEncoderParams& params, const TrainBatch& batch,
                                     const ObjectiveOptions& opts, double step = 1e-5);

GradCheckReport grad_check(const ToyEncoderParams& params, const TrainBatch& batch,
                           const ObjectiveOptions& opts, double step = 1e-5);

// ---------------------------------------------------------------------------
// Training loop

struct EpochReport {
    std::string stage; ///< "aux" or "joint"
    std::size_t epoch = 0;
    std::size_t batches = 0;
    LossReport loss; ///< means over the epoch's batches
};

struct TrainResult {
    ToyEncoderParams params;
    std::vector<EpochReport> history;
    std::size_t pairs_used = 0;
    std::size_t degenerate_aux_sentences = 0;
};

using EpochCallback = std::function<void(const EpochReport&)>;

/// Plain SGD over seeded per-epoch shuffles. Pairs outside `domain_filter`
/// are dropped first; an empty remainder is a DataError. A non-finite loss
/// aborts with RuntimeFailure.
TrainResult train(const TrainConfig& cfg, std::span<const TrainingPair> pairs,
                  const EpochCallback& on_epoch = {});

/// Same, continuing from existing parameters (hash config must match).
TrainResult train_from(ToyEncoderParams init, const TrainConfig& cfg,
                       std::span<const TrainingPair> pairs, const EpochCallback& on_epoch = {});

} // namespace ctxbench
