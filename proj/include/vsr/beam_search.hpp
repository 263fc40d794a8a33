#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "vsr/decoder.hpp"

namespace vsr {

struct DecodeConfig {
    std::int64_t beam_size = 40;
    Scalar ctc_weight = 0.1;  // lambda
    Scalar lm_weight = 0.6;   // beta
    Scalar max_len_ratio = 1.0;
    std::int64_t max_len = 0;  // > 0 overrides max_len_ratio * T
    std::string language = "en";
    void validate() const;
};

std::vector<std::string> supported_languages();
// Beam size and LM weight tuned per language; lambda is always 0.1.
DecodeConfig beam_preset(const std::string& language);

// lambda * ctc + (1 - lambda) * att + beta * lm. A zero weight drops its term
// even when that score is -inf.
Scalar fuse_scores(Scalar lambda, Scalar beta, Scalar ctc, Scalar att, Scalar lm);

// Two-state CTC prefix scoring over logprobs [T, C] with blank class 0.
class CtcPrefixScorer {
public:
    struct State {
        std::vector<std::int64_t> prefix;  // CTC classes
        std::vector<Scalar> r_n;           // ends in a non-blank, per frame
        std::vector<Scalar> r_b;           // ends in blank, per frame
        Scalar psi = 0;                    // log p(prefix is a prefix of the labelling)
    };

    CtcPrefixScorer(std::span<const Scalar> logprobs, std::int64_t frames, std::int64_t classes);

    State initial() const;
    State extend(const State& parent, std::int64_t cls) const;
    // log p(labelling == prefix).
    Scalar final_score(const State& state) const;
    std::int64_t frames() const { return T_; }

private:
    std::span<const Scalar> lp_;
    std::int64_t T_, C_;
};

// Next-token distributions for batches of equal-length prefixes.
class SequenceScorer {
public:
    virtual ~SequenceScorer() = default;
    virtual std::vector<std::vector<Scalar>> next(const TokenBatch& prefixes) = 0;
    // Distribution at every position of one teacher-forced sequence.
    virtual std::vector<std::vector<Scalar>> teacher_forced(const std::vector<std::int64_t>& tokens) = 0;
};

class DecoderScorer : public SequenceScorer {
public:
    // memory: [1, T, D].
    DecoderScorer(TransformerDecoder& decoder, Tensor memory, std::int64_t length)
        : decoder_(decoder), memory_(std::move(memory)), length_(length) {}
    std::vector<std::vector<Scalar>> next(const TokenBatch& prefixes) override;
    std::vector<std::vector<Scalar>> teacher_forced(const std::vector<std::int64_t>& tokens) override;

private:
    TransformerDecoder& decoder_;
    Tensor memory_;
    std::int64_t length_;
};

class LmScorer : public SequenceScorer {
public:
    explicit LmScorer(CharLm& lm) : lm_(lm) {}
    std::vector<std::vector<Scalar>> next(const TokenBatch& prefixes) override;
    std::vector<std::vector<Scalar>> teacher_forced(const std::vector<std::int64_t>& tokens) override;

private:
    CharLm& lm_;
};

// Everything the search needs about one utterance. Hypotheses are built from
// labels 0..K-1; ctc_class[k] and token[k] give each label's index in the CTC
// and decoder/LM spaces.
struct BeamInputs {
    std::span<const Scalar> ctc_logprobs;  // [T, C]
    std::int64_t frames = 0;
    std::int64_t ctc_classes = 0;
    std::vector<std::int64_t> ctc_class;
    std::vector<std::int64_t> token;
    std::int64_t sos = 0;
    std::int64_t eos = 0;
    SequenceScorer* attention = nullptr;
    SequenceScorer* lm = nullptr;  // optional
};

struct ScoredHypothesis {
    std::vector<std::int64_t> labels;
    Scalar combined = 0;
    Scalar ctc = 0;
    Scalar att = 0;
    Scalar lm = 0;
};

struct BeamResult {
    std::vector<ScoredHypothesis> ranked;  // best first
    std::int64_t steps = 0;
    bool stopped_early = false;
};

// Higher combined score first; ties broken by the lexicographically smaller labels.
bool ranks_before(const ScoredHypothesis& a, const ScoredHypothesis& b);

std::int64_t max_output_length(const DecodeConfig& cfg, std::int64_t frames);

BeamResult beam_search(const BeamInputs& in, const DecodeConfig& cfg);

// Scores every label sequence up to the length limit from scratch (full CTC
// forward pass, teacher-forced decoder and LM) and ranks them.
BeamResult exhaustive_search(const BeamInputs& in, const DecodeConfig& cfg);

}  // namespace vsr
