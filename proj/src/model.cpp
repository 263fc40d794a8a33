#include "vsr/model.hpp"

#include "vsr/errors.hpp"
#include "vsr/random.hpp"

namespace vsr {

namespace {

Rng init_rng(std::uint64_t seed, const std::string& role) { return make_rng(seed, "init:" + role); }

// The temporary lives until the end of the enclosing initializer.
Rng& as_lvalue(Rng&& r) { return r; }

}  // namespace

nlohmann::json ModelSpec::to_json() const {
    return {{"role", role},
            {"frontend", {{"kind", to_string(frontend.kind)}, {"width", frontend.width_multiplier}, {"dim", frontend.output_dim}}},
            {"encoder",
             {{"blocks", encoder.num_blocks},
              {"dim", encoder.model_dim},
              {"ff", encoder.ff_dim},
              {"head_dim", encoder.head_dim},
              {"dropout", encoder.dropout},
              {"kernel", encoder.conv_kernel},
              {"rel_clip", encoder.rel_clip},
              {"tap", encoder.tap_layer}}},
            {"decoder",
             {{"blocks", decoder.num_blocks},
              {"dim", decoder.model_dim},
              {"ff", decoder.ff_dim},
              {"head_dim", decoder.head_dim},
              {"dropout", decoder.dropout}}},
            {"ctc_classes", ctc_classes},
            {"decoder_classes", decoder_classes},
            {"predictors", predictors},
            {"audio_target_dim", audio_target_dim},
            {"visual_target_dim", visual_target_dim}};
}

ModelSpec ModelSpec::from_json(const nlohmann::json& j) {
    try {
        ModelSpec s;
        s.role = j.at("role");
        const auto& f = j.at("frontend");
        s.frontend.kind = parse_frontend_kind(f.at("kind"));
        s.frontend.width_multiplier = f.at("width");
        s.frontend.output_dim = f.at("dim");
        const auto& e = j.at("encoder");
        s.encoder.num_blocks = e.at("blocks");
        s.encoder.model_dim = e.at("dim");
        s.encoder.ff_dim = e.at("ff");
        s.encoder.head_dim = e.at("head_dim");
        s.encoder.dropout = e.at("dropout");
        s.encoder.conv_kernel = e.at("kernel");
        s.encoder.rel_clip = e.at("rel_clip");
        s.encoder.tap_layer = e.at("tap");
        const auto& d = j.at("decoder");
        s.decoder.num_blocks = d.at("blocks");
        s.decoder.model_dim = d.at("dim");
        s.decoder.ff_dim = d.at("ff");
        s.decoder.head_dim = d.at("head_dim");
        s.decoder.dropout = d.at("dropout");
        s.ctc_classes = j.at("ctc_classes");
        s.decoder_classes = j.at("decoder_classes");
        s.predictors = j.at("predictors");
        s.audio_target_dim = j.at("audio_target_dim");
        s.visual_target_dim = j.at("visual_target_dim");
        return s;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("bad model description in checkpoint: ") + e.what());
    }
}

VsrModel::VsrModel(const ModelSpec& spec, std::uint64_t seed)
    : spec_(spec),
      frontend_([&] {
          Rng r = init_rng(seed, "frontend");
          return make_frontend(spec.frontend, r);
      }()),
      encoder_(frontend_->output_dim(), spec.encoder, as_lvalue(init_rng(seed, "encoder"))),
      ctc_(spec.encoder.model_dim, spec.ctc_classes, as_lvalue(init_rng(seed, "ctc"))),
      decoder_(spec.decoder_classes, spec.decoder, as_lvalue(init_rng(seed, "decoder"))) {
    if (spec.decoder.model_dim != spec.encoder.model_dim) throw ConfigError("decoder and encoder widths differ");
    register_module("frontend", *frontend_);
    register_module("encoder", encoder_);
    register_module("ctc", ctc_);
    register_module("decoder", decoder_);
    if (spec.predictors) {
        Rng r = init_rng(seed, "predictors");
        if (spec.audio_target_dim <= 0 || spec.visual_target_dim <= 0) throw ConfigError("predictor target dims unset");
        h_a_ = std::make_unique<nn::Linear>(spec.encoder.model_dim, spec.audio_target_dim, r);
        h_v_ = std::make_unique<nn::Linear>(spec.encoder.model_dim, spec.visual_target_dim, r);
        register_module("h_a", *h_a_);
        register_module("h_v", *h_v_);
    }
    reseed(derive_seed(seed, "dropout"));
}

ModelOutput VsrModel::encode(const Tensor& input, const std::vector<std::int64_t>& lengths) {
    const Tensor feats = frontend_->forward(input);
    std::vector<std::int64_t> out_lengths;
    for (auto l : lengths) out_lengths.push_back(std::min(frontend_->output_length(l), feats.dim(2)));
    EncoderOutput enc = encoder_.encode(feats, out_lengths);
    ModelOutput out;
    out.ctc_logprobs = ctc_.forward(enc.top);
    out.tap = enc.tap;
    out.memory = enc.top;
    out.lengths = std::move(enc.lengths);
    return out;
}

Tensor VsrModel::teacher_features(const Tensor& input, const std::vector<std::int64_t>& lengths) {
    const bool was_training = training();
    train(false);
    NoGradGuard guard;
    const Tensor feats = frontend_->forward(input);
    const Tensor out = encoder_.encode_prefix(feats, lengths, spec_.encoder.tap_layer);
    train(was_training);
    return out.detach();
}

AuxPredictors VsrModel::predictors() { return {h_a_.get(), h_v_.get()}; }

DecoderIo decoder_io(const Vocabulary& vocab, const std::vector<std::vector<std::int64_t>>& transcripts) {
    DecoderIo io;
    const std::int64_t sos = vocab.to_decoder(Vocabulary::kSos), eos = vocab.to_decoder(Vocabulary::kEos);
    std::size_t L = 0;
    for (const auto& t : transcripts) L = std::max(L, t.size() + 1);
    for (const auto& t : transcripts) {
        std::vector<std::int64_t> in{sos}, tgt;
        for (auto id : t) {
            in.push_back(vocab.to_decoder(id));
            tgt.push_back(vocab.to_decoder(id));
        }
        tgt.push_back(eos);
        in.resize(L, eos);
        io.inputs.push_back(std::move(in));
        io.targets.push_back(std::move(tgt));
    }
    return io;
}

std::vector<std::vector<std::int64_t>> ctc_targets(const Vocabulary& vocab,
                                                   const std::vector<std::vector<std::int64_t>>& transcripts) {
    std::vector<std::vector<std::int64_t>> out;
    for (const auto& t : transcripts) {
        std::vector<std::int64_t> c;
        for (auto id : t) c.push_back(vocab.to_ctc(id));
        out.push_back(std::move(c));
    }
    return out;
}

}  // namespace vsr
