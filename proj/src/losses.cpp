#include "vsr/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "vsr/errors.hpp"

namespace vsr {

namespace {

constexpr Scalar kNegInf = -std::numeric_limits<Scalar>::infinity();

inline Scalar log_add(Scalar a, Scalar b) {
    if (a == kNegInf) return b;
    if (b == kNegInf) return a;
    const Scalar m = std::max(a, b);
    return m + std::log1p(std::exp(-std::abs(a - b)));
}

std::vector<std::int64_t> extend_with_blanks(std::span<const std::int64_t> target) {
    std::vector<std::int64_t> ext(2 * target.size() + 1, 0);
    for (std::size_t i = 0; i < target.size(); ++i) ext[2 * i + 1] = target[i];
    return ext;
}

// alpha[t * S + s]: log prob of prefixes of the extended label ending in s at t.
std::vector<Scalar> forward_table(std::span<const Scalar> lp, std::int64_t T, std::int64_t C,
                                  const std::vector<std::int64_t>& ext) {
    const auto S = static_cast<std::int64_t>(ext.size());
    std::vector<Scalar> alpha(static_cast<std::size_t>(T * S), kNegInf);
    alpha[0] = lp[ext[0]];
    if (S > 1) alpha[1] = lp[ext[1]];
    for (std::int64_t t = 1; t < T; ++t) {
        const Scalar* row = lp.data() + t * C;
        for (std::int64_t s = 0; s < S; ++s) {
            Scalar a = alpha[(t - 1) * S + s];
            if (s >= 1) a = log_add(a, alpha[(t - 1) * S + s - 1]);
            if (s >= 2 && ext[s] != 0 && ext[s] != ext[s - 2]) a = log_add(a, alpha[(t - 1) * S + s - 2]);
            alpha[t * S + s] = a == kNegInf ? kNegInf : a + row[ext[s]];
        }
    }
    return alpha;
}

Scalar final_score(const std::vector<Scalar>& alpha, std::int64_t T, std::int64_t S) {
    Scalar ll = alpha[(T - 1) * S + S - 1];
    if (S > 1) ll = log_add(ll, alpha[(T - 1) * S + S - 2]);
    return ll;
}

// Adds d(-log p)/d logprobs, scaled by `weight`, into grad [T, C].
void accumulate_ctc_gradient(std::span<const Scalar> lp, std::int64_t T, std::int64_t C,
                             const std::vector<std::int64_t>& ext, const std::vector<Scalar>& alpha, Scalar ll,
                             Scalar weight, Scalar* grad) {
    const auto S = static_cast<std::int64_t>(ext.size());
    // beta excludes the emission at t.
    std::vector<Scalar> beta(static_cast<std::size_t>(T * S), kNegInf);
    beta[(T - 1) * S + S - 1] = 0;
    if (S > 1) beta[(T - 1) * S + S - 2] = 0;
    for (std::int64_t t = T - 2; t >= 0; --t) {
        const Scalar* next = lp.data() + (t + 1) * C;
        for (std::int64_t s = 0; s < S; ++s) {
            Scalar b = beta[(t + 1) * S + s] == kNegInf ? kNegInf : beta[(t + 1) * S + s] + next[ext[s]];
            if (s + 1 < S && beta[(t + 1) * S + s + 1] != kNegInf)
                b = log_add(b, beta[(t + 1) * S + s + 1] + next[ext[s + 1]]);
            if (s + 2 < S && ext[s + 2] != 0 && ext[s + 2] != ext[s] && beta[(t + 1) * S + s + 2] != kNegInf)
                b = log_add(b, beta[(t + 1) * S + s + 2] + next[ext[s + 2]]);
            beta[t * S + s] = b;
        }
    }
    for (std::int64_t t = 0; t < T; ++t)
        for (std::int64_t s = 0; s < S; ++s) {
            const Scalar a = alpha[t * S + s], b = beta[t * S + s];
            if (a == kNegInf || b == kNegInf) continue;
            grad[t * C + ext[s]] -= weight * std::exp(a + b - ll);
        }
}

}  // namespace

void LossWeights::validate() const {
    for (Scalar w : {ctc, audio_aux, visual_aux})
        if (!(w >= 0 && w <= 1)) throw ConfigError("loss weights must lie in [0, 1]");
}

std::int64_t ctc_min_frames(std::span<const std::int64_t> target) {
    std::int64_t n = static_cast<std::int64_t>(target.size());
    for (std::size_t i = 1; i < target.size(); ++i)
        if (target[i] == target[i - 1]) ++n;
    return n;
}

Scalar ctc_log_likelihood(std::span<const Scalar> logprobs, std::int64_t frames, std::int64_t classes,
                          std::span<const std::int64_t> target) {
    if (frames <= 0 || ctc_min_frames(target) > frames) return kNegInf;
    for (auto c : target)
        if (c <= 0 || c >= classes) throw ContractError("CTC target class " + std::to_string(c) + " out of range");
    const auto ext = extend_with_blanks(target);
    const auto alpha = forward_table(logprobs, frames, classes, ext);
    return final_score(alpha, frames, static_cast<std::int64_t>(ext.size()));
}

CtcResult ctc_loss(const Tensor& logprobs, const std::vector<std::int64_t>& target) {
    if (logprobs.rank() != 2) throw ShapeError("ctc_loss expects [T, C] log-probabilities");
    const Tensor batched = ops::reshape(logprobs, {1, logprobs.dim(0), logprobs.dim(1)});
    auto r = ctc_loss_batch(batched, {logprobs.dim(0)}, {target});
    if (!r.infeasible.empty()) return {Tensor::scalar(std::numeric_limits<Scalar>::infinity()), false};
    return {r.loss, true};
}

CtcBatchResult ctc_loss_batch(const Tensor& logprobs, const std::vector<std::int64_t>& lengths,
                              const std::vector<std::vector<std::int64_t>>& targets) {
    if (logprobs.rank() != 3) throw ShapeError("ctc_loss_batch expects [B, T, C]");
    const std::int64_t B = logprobs.dim(0), T = logprobs.dim(1), C = logprobs.dim(2);
    if (static_cast<std::int64_t>(lengths.size()) != B || static_cast<std::int64_t>(targets.size()) != B) {
        throw ShapeError("ctc_loss_batch: lengths/targets do not match batch size");
    }
    CtcBatchResult result;
    struct Item {
        std::int64_t b;
        std::vector<std::int64_t> ext;
        std::vector<Scalar> alpha;
        Scalar ll;
    };
    std::vector<Item> items;
    Scalar total = 0;
    for (std::int64_t b = 0; b < B; ++b) {
        const std::int64_t len = lengths[b];
        if (len < 1 || len > T) throw ShapeError("ctc_loss_batch: invalid length " + std::to_string(len));
        for (auto c : targets[b])
            if (c <= 0 || c >= C) throw ContractError("CTC target class " + std::to_string(c) + " out of range");
        if (ctc_min_frames(targets[b]) > len) {
            result.infeasible.push_back(static_cast<std::size_t>(b));
            continue;
        }
        std::span<const Scalar> lp = logprobs.data().subspan(static_cast<std::size_t>(b * T * C));
        Item it{b, extend_with_blanks(targets[b]), {}, 0};
        it.alpha = forward_table(lp, len, C, it.ext);
        it.ll = final_score(it.alpha, len, static_cast<std::int64_t>(it.ext.size()));
        if (it.ll == kNegInf) {
            result.infeasible.push_back(static_cast<std::size_t>(b));
            continue;
        }
        total -= it.ll;
        items.push_back(std::move(it));
    }
    if (items.empty()) {
        result.loss = Tensor::scalar(std::numeric_limits<Scalar>::infinity());
        return result;
    }
    const Scalar inv = Scalar(1) / static_cast<Scalar>(items.size());
    NodePtr ln = logprobs.node();
    result.loss = make_op_result({1}, {total * inv}, {logprobs}, [ln, items = std::move(items), T, C, lengths, inv](const TensorNode& self) {
        auto& g = ln->ensure_grad();
        for (const auto& it : items) {
            std::span<const Scalar> lp(ln->data.data() + it.b * T * C, static_cast<std::size_t>(T * C));
            accumulate_ctc_gradient(lp, lengths[it.b], C, it.ext, it.alpha, it.ll, self.grad[0] * inv,
                                    g.data() + it.b * T * C);
        }
    });
    return result;
}

Tensor attention_loss(const Tensor& logprobs, const std::vector<std::vector<std::int64_t>>& targets,
                      Scalar label_smoothing) {
    if (logprobs.rank() != 3) throw ShapeError("attention_loss expects [B, L, V]");
    const std::int64_t B = logprobs.dim(0), L = logprobs.dim(1), V = logprobs.dim(2);
    if (static_cast<std::int64_t>(targets.size()) != B) throw ContractError("attention_loss: batch size mismatch");
    if (!(label_smoothing >= 0 && label_smoothing < 1)) throw ConfigError("label smoothing must be in [0, 1)");
    std::vector<Scalar> weight(static_cast<std::size_t>(B * L * V), Scalar(0));
    for (std::int64_t b = 0; b < B; ++b) {
        if (static_cast<std::int64_t>(targets[b].size()) > L) {
            throw ContractError("attention_loss: target of length " + std::to_string(targets[b].size()) +
                                " exceeds decoder length " + std::to_string(L));
        }
        for (std::size_t l = 0; l < targets[b].size(); ++l) {
            const std::int64_t y = targets[b][l];
            if (y < 0 || y >= V) throw ContractError("attention_loss: target class out of range");
            Scalar* w = weight.data() + (b * L + static_cast<std::int64_t>(l)) * V;
            for (std::int64_t v = 0; v < V; ++v) w[v] = label_smoothing / static_cast<Scalar>(V);
            w[y] += Scalar(1) - label_smoothing;
        }
    }
    const Tensor w = Tensor::from_data(logprobs.shape(), std::move(weight));
    return ops::scale(ops::sum(ops::mul(logprobs, w)), Scalar(-1) / static_cast<Scalar>(B));
}

Tensor vsr_loss(const Tensor& ctc, const Tensor& att, Scalar alpha) {
    if (!(alpha >= 0 && alpha <= 1)) throw ConfigError("CTC weight must be in [0, 1]");
    return ops::add(ops::scale(ctc, alpha), ops::scale(att, Scalar(1) - alpha));
}

Tensor masked_l1(const Tensor& prediction, const Tensor& target, const std::vector<std::int64_t>& lengths) {
    if (prediction.shape() != target.shape()) {
        throw ShapeError("L1 target shape " + shape_str(target.shape()) + " differs from prediction " +
                         shape_str(prediction.shape()));
    }
    const std::int64_t B = prediction.dim(0), T = prediction.dim(1), D = prediction.dim(2);
    std::int64_t valid = 0;
    for (auto l : lengths) valid += std::min(l, T);
    if (valid == 0) throw DataError("L1 over empty sequences");
    const Tensor mask = ops::reshape(nn::length_mask(lengths, T), {B, T, 1});
    const Tensor diff = ops::mul(ops::abs(ops::sub(prediction, target)), mask);
    return ops::scale(ops::sum(diff), Scalar(1) / static_cast<Scalar>(valid * D));
}

namespace {

Tensor reconcile(const Tensor& t, std::int64_t len) { return t.dim(1) == len ? t : ops::slice(t, 1, 0, len); }

Tensor aux_term(const Tensor& tap, const std::vector<std::int64_t>& lengths, const Tensor& target,
                const std::vector<std::int64_t>& target_lengths, nn::Linear& predictor, const char* which) {
    if (target.rank() != 3 || target.dim(0) != tap.dim(0)) throw ShapeError(std::string(which) + " teacher batch mismatch");
    const std::int64_t gap = std::abs(target.dim(1) - tap.dim(1));
    if (gap > 1) {
        throw DataError(std::string(which) + " teacher has " + std::to_string(target.dim(1)) +
                        " frames, student " + std::to_string(tap.dim(1)));
    }
    const std::int64_t T = std::min(target.dim(1), tap.dim(1));
    std::vector<std::int64_t> lens(lengths.size());
    for (std::size_t i = 0; i < lengths.size(); ++i) {
        const std::int64_t tl = i < target_lengths.size() ? target_lengths[i] : lengths[i];
        lens[i] = std::min({lengths[i], tl, T});
    }
    return masked_l1(predictor.forward(reconcile(tap, T)), reconcile(target, T).detach(), lens);
}

}  // namespace

Tensor aux_loss(const Tensor& tap, const std::vector<std::int64_t>& lengths, const TeacherTargets& targets,
                const AuxPredictors& predictors, const LossWeights& weights) {
    Tensor total;
    auto accumulate = [&](const Tensor& term) { total = total.defined() ? ops::add(total, term) : term; };
    if (weights.audio_aux > 0) {
        if (!predictors.audio || !targets.audio.defined()) throw ConfigError("audio auxiliary task needs a predictor and targets");
        accumulate(ops::scale(aux_term(tap, lengths, targets.audio, targets.audio_lengths, *predictors.audio, "audio"),
                              weights.audio_aux));
    }
    if (weights.visual_aux > 0) {
        if (!predictors.visual || !targets.visual.defined()) throw ConfigError("visual auxiliary task needs a predictor and targets");
        accumulate(ops::scale(aux_term(tap, lengths, targets.visual, targets.visual_lengths, *predictors.visual, "visual"),
                              weights.visual_aux));
    }
    return total;
}

Tensor total_loss(const Tensor& vsr, const Tensor& aux) { return aux.defined() ? ops::add(vsr, aux) : vsr; }

}  // namespace vsr
