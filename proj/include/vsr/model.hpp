#pragma once

#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "vsr/decoder.hpp"
#include "vsr/encoder.hpp"
#include "vsr/frontends.hpp"
#include "vsr/losses.hpp"
#include "vsr/vocab.hpp"

namespace vsr {

// Everything needed to rebuild a model; stored in checkpoint metadata.
struct ModelSpec {
    std::string role = "vsr";  // vsr, asr-teacher, vsr-teacher
    FrontendConfig frontend;
    ConformerConfig encoder;
    DecoderConfig decoder;
    std::int64_t ctc_classes = 0;
    std::int64_t decoder_classes = 0;
    bool predictors = false;
    std::int64_t audio_target_dim = 0;
    std::int64_t visual_target_dim = 0;

    nlohmann::json to_json() const;
    static ModelSpec from_json(const nlohmann::json& j);
};

struct ModelOutput {
    Tensor ctc_logprobs;  // [B, T, C]
    Tensor tap;           // [B, T, D]
    Tensor memory;        // [B, T, D]
    std::vector<std::int64_t> lengths;
};

// Front-end, conformer encoder, CTC head, attention decoder and the two
// optional auxiliary predictors.
class VsrModel : public nn::Module {
public:
    VsrModel(const ModelSpec& spec, std::uint64_t seed);

    const ModelSpec& spec() const { return spec_; }
    ModelOutput encode(const Tensor& input, const std::vector<std::int64_t>& lengths);
    // Frozen representation after `tap_layer` blocks; eval mode, no gradient.
    Tensor teacher_features(const Tensor& input, const std::vector<std::int64_t>& lengths);

    Frontend& frontend() { return *frontend_; }
    ConformerEncoder& encoder() { return encoder_; }
    CtcHead& ctc_head() { return ctc_; }
    TransformerDecoder& decoder() { return decoder_; }
    AuxPredictors predictors();

private:
    ModelSpec spec_;
    std::unique_ptr<Frontend> frontend_;
    ConformerEncoder encoder_;
    CtcHead ctc_;
    TransformerDecoder decoder_;
    std::unique_ptr<nn::Linear> h_a_, h_v_;
};

// Decoder teacher forcing: inputs start with sos, targets end with eos, both
// in decoder classes and padded to one length with eos.
struct DecoderIo {
    TokenBatch inputs;
    std::vector<std::vector<std::int64_t>> targets;
};
DecoderIo decoder_io(const Vocabulary& vocab, const std::vector<std::vector<std::int64_t>>& transcripts);
std::vector<std::vector<std::int64_t>> ctc_targets(const Vocabulary& vocab,
                                                   const std::vector<std::vector<std::int64_t>>& transcripts);

}  // namespace vsr
