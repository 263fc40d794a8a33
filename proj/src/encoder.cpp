#include "vsr/encoder.hpp"

#include "vsr/errors.hpp"

namespace vsr {

void ConformerConfig::validate() const {
    if (model_dim <= 0 || head_dim <= 0 || model_dim % head_dim != 0) {
        throw ConfigError("model_dim " + std::to_string(model_dim) + " must be a positive multiple of head_dim " +
                          std::to_string(head_dim));
    }
    if (num_blocks < 0) throw ConfigError("num_blocks must be non-negative");
    if (tap_layer < 0 || tap_layer > num_blocks) {
        throw ConfigError("tap layer " + std::to_string(tap_layer) + " outside [0, " + std::to_string(num_blocks) + "]");
    }
    if (conv_kernel <= 0 || conv_kernel % 2 == 0) throw ConfigError("conv_kernel must be odd");
    if (!(dropout >= 0 && dropout < 1)) throw ConfigError("dropout must be in [0, 1)");
}

SequenceMask SequenceMask::from_lengths(const std::vector<std::int64_t>& lengths, std::int64_t max_len) {
    const auto b = static_cast<std::int64_t>(lengths.size());
    const Tensor m = nn::length_mask(lengths, max_len);
    SequenceMask out;
    out.key_mask = ops::reshape(m, {b, 1, 1, max_len});
    out.time_mask = ops::reshape(m, {b, max_len, 1});
    out.valid.resize(static_cast<std::size_t>(b * max_len));
    for (std::size_t i = 0; i < out.valid.size(); ++i) out.valid[i] = m.data()[i] != 0;
    return out;
}

// ---- convolution module ----

ConvolutionModule::ConvolutionModule(std::int64_t dim, std::int64_t kernel, Scalar dropout, Rng& init)
    : dim_(dim),
      pointwise_in_(dim, 2 * dim, init),
      depthwise_(dim, dim, {kernel}, ops::ConvOptions{{1}, {(kernel - 1) / 2}, dim}, init),
      norm_(dim),
      pointwise_out_(dim, dim, init),
      out_norm_(dim),
      drop_(dropout) {
    register_module("pointwise_in", pointwise_in_);
    register_module("depthwise", depthwise_);
    register_module("norm", norm_);
    register_module("pointwise_out", pointwise_out_);
    register_module("out_norm", out_norm_);
    register_module("drop", drop_);
}

Tensor ConvolutionModule::forward(const Tensor& x, const SequenceMask& mask) {
    Tensor h = ops::glu(pointwise_in_.forward(x), -1);                 // [B, T, D]
    h = ops::masked_fill(h, mask.time_mask, Scalar(0));                // padding never leaks through the kernel
    h = ops::transpose(h, 1, 2);                                       // [B, D, T]
    h = ops::swish(norm_.forward(depthwise_.forward(h), &mask.valid));
    h = ops::transpose(h, 1, 2);
    return drop_.forward(out_norm_.forward(pointwise_out_.forward(h)));
}

// ---- block ----

ConformerBlock::ConformerBlock(const ConformerConfig& cfg, Rng& init)
    : ff1_norm_(cfg.model_dim),
      attn_norm_(cfg.model_dim),
      conv_norm_(cfg.model_dim),
      ff2_norm_(cfg.model_dim),
      final_norm_(cfg.model_dim),
      ff1_(cfg.model_dim, cfg.ff_dim, cfg.dropout, init),
      ff2_(cfg.model_dim, cfg.ff_dim, cfg.dropout, init),
      attn_(cfg.model_dim, cfg.num_heads(), cfg.dropout, init, cfg.rel_clip),
      attn_drop_(cfg.dropout),
      conv_(cfg.model_dim, cfg.conv_kernel, cfg.dropout, init) {
    register_module("ff1_norm", ff1_norm_);
    register_module("ff1", ff1_);
    register_module("attn_norm", attn_norm_);
    register_module("attn", attn_);
    register_module("attn_drop", attn_drop_);
    register_module("conv_norm", conv_norm_);
    register_module("conv", conv_);
    register_module("ff2_norm", ff2_norm_);
    register_module("ff2", ff2_);
    register_module("final_norm", final_norm_);
}

Tensor ConformerBlock::forward(const Tensor& x, const SequenceMask& mask) {
    Tensor h = ops::add(x, ops::scale(ff1_.forward(ff1_norm_.forward(x)), Scalar(0.5)));
    const Tensor q = attn_norm_.forward(h);
    h = ops::add(h, attn_drop_.forward(attn_.forward(q, q, &mask.key_mask)));
    h = ops::add(h, conv_.forward(conv_norm_.forward(h), mask));
    h = ops::add(h, ops::scale(ff2_.forward(ff2_norm_.forward(h)), Scalar(0.5)));
    return final_norm_.forward(h);
}

// ---- encoder ----

ConformerEncoder::ConformerEncoder(std::int64_t input_dim, const ConformerConfig& cfg, Rng& init)
    : cfg_(cfg), input_dim_(input_dim), embed_(input_dim, cfg.model_dim, init), embed_drop_(cfg.dropout) {
    cfg_.validate();
    register_module("embed", embed_);
    register_module("embed_drop", embed_drop_);
    for (std::int64_t i = 0; i < cfg_.num_blocks; ++i) {
        blocks_.push_back(std::make_unique<ConformerBlock>(cfg_, init));
        register_module("block" + std::to_string(i + 1), *blocks_.back());
    }
}

Tensor ConformerEncoder::embed(const Tensor& features) {
    if (features.rank() != 3 || features.dim(1) != input_dim_) {
        throw ShapeError("encoder expects [B, " + std::to_string(input_dim_) + ", T], got " +
                         shape_str(features.shape()));
    }
    return embed_drop_.forward(embed_.forward(ops::transpose(features, 1, 2)));
}

Tensor ConformerEncoder::encode_prefix(const Tensor& features, const std::vector<std::int64_t>& lengths,
                                       std::int64_t depth) {
    if (depth < 0 || depth > cfg_.num_blocks) throw ConfigError("encoder depth out of range");
    const std::int64_t T = features.dim(2);
    const SequenceMask mask = SequenceMask::from_lengths(lengths, T);
    Tensor x = embed(features);
    for (std::int64_t i = 0; i < depth; ++i) x = blocks_[i]->forward(x, mask);
    return x;
}

EncoderOutput ConformerEncoder::encode(const Tensor& features, const std::vector<std::int64_t>& lengths) {
    if (features.rank() != 3) throw ShapeError("encoder expects [B, C, T], got " + shape_str(features.shape()));
    if (static_cast<std::int64_t>(lengths.size()) != features.dim(0)) {
        throw ShapeError("encoder got " + std::to_string(lengths.size()) + " lengths for batch " +
                         std::to_string(features.dim(0)));
    }
    const std::int64_t T = features.dim(2);
    const SequenceMask mask = SequenceMask::from_lengths(lengths, T);
    EncoderOutput out;
    out.lengths = lengths;
    Tensor x = embed(features);
    if (cfg_.tap_layer == 0) out.tap = x;
    for (std::int64_t i = 0; i < cfg_.num_blocks; ++i) {
        x = blocks_[i]->forward(x, mask);
        if (!nn::all_finite(x)) {
            throw NumericError("non-finite activation after conformer block " + std::to_string(i + 1));
        }
        if (i + 1 == cfg_.tap_layer) out.tap = x;
    }
    out.top = x;
    return out;
}

}  // namespace vsr
