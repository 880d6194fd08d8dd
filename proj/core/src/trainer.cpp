#include "ctxbench/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "ctxbench/error.hpp"
#include "ctxbench/hashing.hpp"

namespace ctxbench {

std::string_view to_string(InitMode m) {
    return m == InitMode::scratch ? "scratch" : "from_aux_pretrained";
}

std::string_view to_string(LossReduction r) {
    return r == LossReduction::mean ? "mean" : "sum";
}

InitMode parse_init_mode(std::string_view s) {
    if (s == "scratch") {
        return InitMode::scratch;
    }
    if (s == "from_aux_pretrained") {
        return InitMode::from_aux_pretrained;
    }
    throw UsageError("init mode must be scratch or from_aux_pretrained, got '" + std::string(s) + "'");
}

LossReduction parse_loss_reduction(std::string_view s) {
    if (s == "mean") {
        return LossReduction::mean;
    }
    if (s == "sum") {
        return LossReduction::sum;
    }
    throw UsageError("loss reduction must be mean or sum, got '" + std::string(s) + "'");
}

void TrainConfig::validate() const {
    if (!(tau > 0.0) || !std::isfinite(tau)) {
        throw UsageError("tau must be > 0");
    }
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
        throw UsageError("lambda must be >= 0");
    }
    if (batch_size < 2) {
        throw UsageError("batch size must be >= 2 so every pair has an in-batch negative");
    }
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
        throw UsageError("learning rate must be > 0");
    }
    if (!(mask_rate > 0.0 && mask_rate < 1.0)) {
        throw UsageError("mask rate must be in (0, 1)");
    }
    if (hidden == 0 || dim == 0) {
        throw UsageError("hidden and dim must be positive");
    }
    hash.validate();
    if (hash.buckets < 3) {
        throw UsageError("the auxiliary loss needs at least 3 buckets");
    }
}

// ---------------------------------------------------------------------------

namespace {

void check_finite(const Matrix& m, const char* what) {
    if (!m.allFinite()) {
        throw DataError(std::string("contrastive loss: non-finite ") + what + " embedding");
    }
}

// Softmax over each row of a . b^T / tau, with row i's positive at column i.
double row_softmax_loss(const Matrix& a, const Matrix& b, double tau, double weight, Matrix& grad_a,
                        Matrix& grad_b) {
    const Eigen::Index n = a.rows();
    Matrix logits = (a * b.transpose()) / tau;
    Matrix coef(n, n);
    double loss = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        const double shift = logits.row(i).maxCoeff();
        double sum = 0.0;
        for (Eigen::Index j = 0; j < n; ++j) {
            sum += std::exp(logits(i, j) - shift);
        }
        const double lse = shift + std::log(sum);
        loss += lse - logits(i, i);
        for (Eigen::Index j = 0; j < n; ++j) {
            coef(i, j) = weight * (std::exp(logits(i, j) - lse) - (i == j ? 1.0 : 0.0));
        }
    }
    grad_a.noalias() += coef * b / tau;
    grad_b.noalias() += coef.transpose() * a / tau;
    return weight * loss;
}

} // namespace

ContrastiveResult contrastive_loss_and_grad(const Matrix& contexts, const Matrix& metadatas,
                                            double tau, LossReduction reduction, bool symmetric) {
    if (contexts.rows() < 2) {
        throw UsageError("contrastive loss needs a batch of at least 2 pairs");
    }
    if (contexts.rows() != metadatas.rows() || contexts.cols() != metadatas.cols()) {
        throw UsageError("contrastive loss: context and metadata batches differ in shape");
    }
    if (!(tau > 0.0)) {
        throw UsageError("contrastive loss: tau must be > 0");
    }
    check_finite(contexts, "context");
    check_finite(metadatas, "metadata");

    ContrastiveResult out;
    out.grad_contexts = Matrix::Zero(contexts.rows(), contexts.cols());
    out.grad_metadatas = Matrix::Zero(metadatas.rows(), metadatas.cols());
    double weight = reduction == LossReduction::mean ? 1.0 / static_cast<double>(contexts.rows()) : 1.0;
    if (symmetric) {
        weight *= 0.5;
        out.loss = row_softmax_loss(contexts, metadatas, tau, weight, out.grad_contexts, out.grad_metadatas) +
                   row_softmax_loss(metadatas, contexts, tau, weight, out.grad_metadatas, out.grad_contexts);
    } else {
        out.loss = row_softmax_loss(contexts, metadatas, tau, weight, out.grad_contexts, out.grad_metadatas);
    }
    return out;
}

// ---------------------------------------------------------------------------

MaskedSentence mask_sentence(std::span<const std::uint32_t> buckets, double mask_rate,
                             std::size_t negatives, std::uint32_t bucket_count, Rng& rng) {
    MaskedSentence out;
    std::vector<std::uint32_t> real;
    real.reserve(buckets.size());
    for (auto b : buckets) {
        if (b != kNullBucket) {
            real.push_back(b);
        }
    }
    if (real.size() < 2 || bucket_count < 3) {
        out.visible.assign(buckets.begin(), buckets.end());
        return out;
    }
    const auto n = real.size();
    auto n_mask = static_cast<std::size_t>(std::lround(mask_rate * static_cast<double>(n)));
    n_mask = std::clamp<std::size_t>(n_mask, 1, n - 1);
    auto masked = sample_indices(n, n_mask, rng);

    std::size_t next = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (next < masked.size() && masked[next] == i) {
            ++next;
            continue;
        }
        out.visible.push_back(real[i]);
    }
    for (auto idx : masked) {
        MaskedPrediction p;
        p.target = real[idx];
        p.negatives.reserve(negatives);
        for (std::size_t k = 0; k < negatives; ++k) {
            // Uniform over [1, bucket_count) without the target.
            auto r = static_cast<std::uint32_t>(1 + uniform_index(rng, bucket_count - 2));
            if (r >= p.target) {
                ++r;
            }
            p.negatives.push_back(r);
        }
        out.predictions.push_back(std::move(p));
    }
    return out;
}

AuxResult auxiliary_loss(const ToyEncoderParams& params, std::span<const MaskedSentence> sentences,
                         ParamGradients* grads, double grad_scale) {
    AuxResult out;
    for (const auto& s : sentences) {
        if (s.predictions.empty()) {
            ++out.degenerate_sentences;
        }
        out.predictions += s.predictions.size();
    }
    if (out.predictions == 0) {
        return out;
    }
    const bool want_grads = grads != nullptr && grad_scale != 0.0;
    const double scale = grad_scale / static_cast<double>(out.predictions);

    double total = 0.0;
    std::vector<std::uint32_t> cands;
    std::vector<Vector> cand_vecs;
    std::vector<double> logits;
    for (const auto& sentence : sentences) {
        if (sentence.predictions.empty()) {
            continue;
        }
        auto trace = encode_traced(params, sentence.visible);
        const Vector& s = trace.output;
        Vector grad_s = Vector::Zero(s.size());
        const Vector proj_s = want_grads ? Vector(params.projection * s) : Vector();

        for (const auto& pred : sentence.predictions) {
            cands.clear();
            cands.push_back(pred.target);
            cands.insert(cands.end(), pred.negatives.begin(), pred.negatives.end());
            cand_vecs.resize(cands.size());
            logits.resize(cands.size());
            double shift = -std::numeric_limits<double>::infinity();
            for (std::size_t c = 0; c < cands.size(); ++c) {
                cand_vecs[c] = params.projection.transpose() * params.table.row(cands[c]).transpose();
                logits[c] = s.dot(cand_vecs[c]);
                shift = std::max(shift, logits[c]);
            }
            double sum = 0.0;
            for (double l : logits) {
                sum += std::exp(l - shift);
            }
            const double lse = shift + std::log(sum);
            total += lse - logits[0];

            if (!want_grads) {
                continue;
            }
            for (std::size_t c = 0; c < cands.size(); ++c) {
                const double g = scale * (std::exp(logits[c] - lse) - (c == 0 ? 1.0 : 0.0));
                grad_s += g * cand_vecs[c];
                grads->add_to_row(cands[c], g * proj_s);
                grads->projection.noalias() += g * params.table.row(cands[c]).transpose() * s.transpose();
            }
        }
        if (want_grads) {
            backprop_encoding(params, trace, grad_s, *grads);
        }
    }
    out.loss = total / static_cast<double>(out.predictions);
    return out;
}

// ---------------------------------------------------------------------------

ObjectiveOptions objective_options(const TrainConfig& cfg) {
    ObjectiveOptions o;
    o.tau = cfg.tau;
    o.lambda = cfg.lambda;
    o.reduction = cfg.loss_reduction;
    o.symmetric = cfg.symmetric;
    return o;
}

LossReport compute_objective(const ToyEncoderParams& params, const TrainBatch& batch,
                             const ObjectiveOptions& opts, ParamGradients* grads) {
    LossReport report;
    if (opts.use_contrastive) {
        const auto n = batch.contexts.size();
        if (batch.metadatas.size() != n) {
            throw UsageError("batch has mismatched context and metadata counts");
        }
        std::vector<EncodeTrace> ctx;
        std::vector<EncodeTrace> meta;
        ctx.reserve(n);
        meta.reserve(n);
        Matrix c(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(params.dim()));
        Matrix m(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(params.dim()));
        for (std::size_t i = 0; i < n; ++i) {
            ctx.push_back(encode_traced(params, batch.contexts[i]));
            meta.push_back(encode_traced(params, batch.metadatas[i]));
            c.row(static_cast<Eigen::Index>(i)) = ctx.back().output.transpose();
            m.row(static_cast<Eigen::Index>(i)) = meta.back().output.transpose();
        }
        auto cl = contrastive_loss_and_grad(c, m, opts.tau, opts.reduction, opts.symmetric);
        report.l_cl = cl.loss;
        if (grads != nullptr) {
            for (std::size_t i = 0; i < n; ++i) {
                const auto row = static_cast<Eigen::Index>(i);
                backprop_encoding(params, ctx[i], cl.grad_contexts.row(row).transpose(), *grads);
                backprop_encoding(params, meta[i], cl.grad_metadatas.row(row).transpose(), *grads);
            }
        }
    }
    const double weight = opts.use_contrastive ? opts.lambda : 1.0;
    auto aux = auxiliary_loss(params, batch.masked, grads, weight);
    report.l_pt = aux.loss;
    report.l_total = total_loss(report.l_cl, report.l_pt, weight);
    if (grads != nullptr) {
        report.grad_norm = std::sqrt(grads->squared_norm());
    }
    return report;
}

TrainBatch make_batch(std::span<const std::vector<std::uint32_t>> contexts,
                      std::span<const std::vector<std::uint32_t>> metadatas, const TrainConfig& cfg,
                      std::uint32_t bucket_count, Rng& rng) {
    TrainBatch batch;
    batch.contexts.assign(contexts.begin(), contexts.end());
    batch.metadatas.assign(metadatas.begin(), metadatas.end());
    batch.masked.reserve(contexts.size() + metadatas.size());
    for (const auto& c : contexts) {
        batch.masked.push_back(mask_sentence(c, cfg.mask_rate, cfg.aux_negatives, bucket_count, rng));
    }
    for (const auto& m : metadatas) {
        batch.masked.push_back(mask_sentence(m, cfg.mask_rate, cfg.aux_negatives, bucket_count, rng));
    }
    return batch;
}

// ---------------------------------------------------------------------------

GradCheckReport compare_gradients(std::span<const double> analytic, std::span<const double> numeric,
                                  double relative_floor) {
    if (analytic.size() != numeric.size()) {
        throw UsageError("gradient vectors differ in length");
    }
    GradCheckReport r;
    r.coordinates = analytic.size();
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        const double a = analytic[i];
        const double n = numeric[i];
        const double scale = std::max(std::abs(a), std::abs(n));
        const double diff = std::abs(a - n);
        if (!std::isfinite(diff)) {
            r.max_relative_error = std::numeric_limits<double>::infinity();
            r.worst_index = i;
            continue;
        }
        if (scale < relative_floor) {
            r.max_absolute_error = std::max(r.max_absolute_error, diff);
            continue;
        }
        const double rel = diff / scale;
        if (rel > r.max_relative_error) {
            r.max_relative_error = rel;
            r.worst_index = i;
        }
    }
    return r;
}

std::vector<double> numeric_gradient(const ToyEncoderParams& params, const TrainBatch& batch,
                                     const ObjectiveOptions& opts, double step) {
    ToyEncoderParams work = params;
    std::vector<double> out;
    out.reserve(params.parameter_count());
    auto probe = [&](double& slot) {
        const double saved = slot;
        slot = saved + step;
        const double up = compute_objective(work, batch, opts, nullptr).l_total;
        slot = saved - step;
        const double down = compute_objective(work, batch, opts, nullptr).l_total;
        slot = saved;
        out.push_back((up - down) / (2.0 * step));
    };
    for (Eigen::Index i = 0; i < work.table.size(); ++i) {
        probe(work.table.data()[i]);
    }
    for (Eigen::Index i = 0; i < work.projection.size(); ++i) {
        probe(work.projection.data()[i]);
    }
    return out;
}

GradCheckReport grad_check(const ToyEncoderParams& params, const TrainBatch& batch,
                           const ObjectiveOptions& opts, double step) {
    ParamGradients grads(params);
    compute_objective(params, batch, opts, &grads);
    auto analytic = grads.flatten();
    auto numeric = numeric_gradient(params, batch, opts, step);
    return compare_gradients(analytic, numeric);
}

// ---------------------------------------------------------------------------

namespace {

struct Hashed {
    std::vector<std::vector<std::uint32_t>> contexts;
    std::vector<std::vector<std::uint32_t>> metadatas;
    std::vector<std::vector<std::uint32_t>> unique_metadatas;
};

void sgd_step(ToyEncoderParams& params, ParamGradients& grads, double lr) {
    for (auto r : grads.touched_rows) {
        params.table.row(r) -= lr * grads.table.row(r);
    }
    params.projection -= lr * grads.projection;
    grads.clear();
}

std::string describe(const char* stage, std::size_t epoch, std::size_t batch, const LossReport& r) {
    std::ostringstream os;
    os << "non-finite loss in " << stage << " epoch " << epoch << " batch " << batch
       << " (l_cl=" << r.l_cl << ", l_pt=" << r.l_pt << ", l_total=" << r.l_total
       << "); try a smaller learning rate";
    return os.str();
}

} // namespace

TrainResult train_from(ToyEncoderParams init, const TrainConfig& cfg,
                       std::span<const TrainingPair> pairs, const EpochCallback& on_epoch) {
    cfg.validate();
    init.validate();
    if (init.hash.buckets < 3) {
        throw UsageError("the auxiliary loss needs at least 3 buckets");
    }

    std::unordered_set<std::string> allowed(cfg.domain_filter.begin(), cfg.domain_filter.end());
    Hashed data;
    std::unordered_set<std::string> seen_items;
    for (const auto& p : pairs) {
        if (!allowed.empty() && !allowed.contains(p.domain)) {
            continue;
        }
        data.contexts.push_back(hash_tokens(p.context, init.hash));
        data.metadatas.push_back(hash_tokens(p.metadata, init.hash));
        if (seen_items.insert(p.item_id).second) {
            data.unique_metadatas.push_back(data.metadatas.back());
        }
    }
    if (data.contexts.empty()) {
        throw DataError("no training pairs left after the domain filter");
    }

    TrainResult result{std::move(init), {}, data.contexts.size(), 0};
    ToyEncoderParams& params = result.params;
    const auto bucket_count = static_cast<std::uint32_t>(params.buckets());
    ParamGradients grads(params);
    Rng order_rng(mix64(cfg.seed ^ 0x0a11ce));
    Rng mask_rng(mix64(cfg.seed ^ 0x3a5c));

    auto run_epoch = [&](const char* stage, std::size_t epoch, bool joint) {
        const auto& sentences = joint ? data.contexts : data.unique_metadatas;
        std::vector<std::size_t> order(sentences.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        shuffle(std::span(order), order_rng);

        ObjectiveOptions opts = objective_options(cfg);
        opts.use_contrastive = joint;
        const bool with_aux = !joint || cfg.lambda > 0.0;
        const std::size_t min_batch = joint ? 2 : 1;

        EpochReport report;
        report.stage = stage;
        report.epoch = epoch;
        std::vector<std::vector<std::uint32_t>> ctx;
        std::vector<std::vector<std::uint32_t>> meta;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            if (end - start < min_batch) {
                continue;
            }
            ctx.clear();
            meta.clear();
            for (std::size_t k = start; k < end; ++k) {
                if (joint) {
                    ctx.push_back(data.contexts[order[k]]);
                    meta.push_back(data.metadatas[order[k]]);
                } else {
                    meta.push_back(data.unique_metadatas[order[k]]);
                }
            }
            TrainBatch batch;
            if (with_aux) {
                batch = make_batch(ctx, meta, cfg, bucket_count, mask_rng);
            } else {
                batch.contexts = std::move(ctx);
                batch.metadatas = std::move(meta);
            }
            if (!joint) {
                batch.contexts.clear();
                batch.metadatas.clear();
            }
            for (const auto& m : batch.masked) {
                result.degenerate_aux_sentences += m.predictions.empty() ? 1 : 0;
            }
            auto loss = compute_objective(params, batch, opts, &grads);
            if (!std::isfinite(loss.l_total) || !std::isfinite(loss.grad_norm)) {
                throw RuntimeFailure(describe(stage, epoch, report.batches, loss));
            }
            sgd_step(params, grads, cfg.learning_rate);
            report.loss.l_cl += loss.l_cl;
            report.loss.l_pt += loss.l_pt;
            report.loss.grad_norm += loss.grad_norm;
            ++report.batches;
        }
        if (report.batches > 0) {
            const auto n = static_cast<double>(report.batches);
            report.loss.l_cl /= n;
            report.loss.l_pt /= n;
            report.loss.grad_norm /= n;
        }
        report.loss.l_total = total_loss(report.loss.l_cl, report.loss.l_pt, joint ? cfg.lambda : 1.0);
        result.history.push_back(report);
        if (on_epoch) {
            on_epoch(report);
        }
    };

    if (cfg.init_mode == InitMode::from_aux_pretrained) {
        for (std::size_t e = 0; e < cfg.aux_epochs; ++e) {
            run_epoch("aux", e, false);
        }
    }
    for (std::size_t e = 0; e < cfg.epochs; ++e) {
        run_epoch("joint", e, true);
    }
    return result;
}

TrainResult train(const TrainConfig& cfg, std::span<const TrainingPair> pairs,
                  const EpochCallback& on_epoch) {
    cfg.validate();
    auto init = ToyEncoderParams::random(cfg.hash, cfg.hidden, cfg.dim, mix64(cfg.seed));
    return train_from(std::move(init), cfg, pairs, on_epoch);
}

} // namespace ctxbench
