#pragma once

#include <span>
#include <vector>

#include "vsr/nn.hpp"

namespace vsr {

struct LossWeights {
    Scalar ctc = 0.1;           // alpha
    Scalar audio_aux = 0.4;     // beta_a
    Scalar visual_aux = 0.4;    // beta_v
    void validate() const;
};

// CTC with class 0 as blank; targets are CTC classes without blanks.
struct CtcResult {
    Tensor loss;  // scalar; +inf and detached when infeasible
    bool feasible = true;
};

// Minimum frames needed to emit `target` (length plus repeated neighbours).
std::int64_t ctc_min_frames(std::span<const std::int64_t> target);

// log p(target | x) by the forward recursion; -inf when infeasible.
// logprobs is row-major [T, C].
Scalar ctc_log_likelihood(std::span<const Scalar> logprobs, std::int64_t frames, std::int64_t classes,
                          std::span<const std::int64_t> target);

// -log p(target | x) for logprobs [T, C].
CtcResult ctc_loss(const Tensor& logprobs, const std::vector<std::int64_t>& target);

struct CtcBatchResult {
    Tensor loss;                    // mean over feasible utterances
    std::vector<std::size_t> infeasible;
};

// logprobs [B, T, C]; lengths are valid frames per utterance.
CtcBatchResult ctc_loss_batch(const Tensor& logprobs, const std::vector<std::int64_t>& lengths,
                              const std::vector<std::vector<std::int64_t>>& targets);

// Teacher-forced cross-entropy. logprobs [B, L, V]; targets[b] are the
// expected next tokens (ending in eos), at most L of them. Sum over tokens,
// mean over the batch. With label smoothing eps the target distribution is
// (1 - eps) one-hot + eps uniform.
Tensor attention_loss(const Tensor& logprobs, const std::vector<std::vector<std::int64_t>>& targets,
                      Scalar label_smoothing = 0);

// alpha * ctc + (1 - alpha) * att.
Tensor vsr_loss(const Tensor& ctc, const Tensor& att, Scalar alpha);

// Frozen block-l representations of the pre-trained audio and visual encoders.
struct TeacherTargets {
    Tensor audio;   // [B, T_a, D]
    Tensor visual;  // [B, T_v, D]
    std::vector<std::int64_t> audio_lengths;
    std::vector<std::int64_t> visual_lengths;
};

struct AuxPredictors {
    nn::Linear* audio = nullptr;
    nn::Linear* visual = nullptr;
};

// Mean absolute error over valid (batch, time) positions and every feature.
Tensor masked_l1(const Tensor& prediction, const Tensor& target, const std::vector<std::int64_t>& lengths);

// beta_a * L1(h_a(tap), g_a) + beta_v * L1(h_v(tap), g_v). Student and teacher
// sequences are truncated to the shorter length; a gap over one frame is a
// DataError. A zero weight removes its term (and predictor) from the graph.
// Returns an undefined tensor when both weights are zero.
Tensor aux_loss(const Tensor& tap, const std::vector<std::int64_t>& lengths, const TeacherTargets& targets,
                const AuxPredictors& predictors, const LossWeights& weights);

// L_VSR + L_AUX; an undefined aux tensor means the auxiliary tasks are off.
Tensor total_loss(const Tensor& vsr, const Tensor& aux);

}  // namespace vsr
