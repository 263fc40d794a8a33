#include "vsr/decoder.hpp"

#include <cmath>

#include "vsr/errors.hpp"

namespace vsr {

void DecoderConfig::validate() const {
    if (model_dim <= 0 || head_dim <= 0 || model_dim % head_dim != 0) {
        throw ConfigError("decoder model_dim must be a positive multiple of head_dim");
    }
    if (num_blocks < 0) throw ConfigError("decoder num_blocks must be non-negative");
}

Tensor causal_mask(std::int64_t length) {
    std::vector<Scalar> m(static_cast<std::size_t>(length * length), Scalar(0));
    for (std::int64_t i = 0; i < length; ++i)
        for (std::int64_t j = 0; j <= i; ++j) m[i * length + j] = Scalar(1);
    return Tensor::from_data({1, 1, length, length}, std::move(m));
}

// ---- blocks ----

DecoderBlock::DecoderBlock(const DecoderConfig& cfg, bool cross_attention, Rng& init)
    : self_norm_(cfg.model_dim),
      ff_norm_(cfg.model_dim),
      self_attn_(cfg.model_dim, cfg.num_heads(), cfg.dropout, init),
      ff_(cfg.model_dim, cfg.ff_dim, cfg.dropout, init),
      drop_self_(cfg.dropout),
      drop_src_(cfg.dropout) {
    register_module("self_norm", self_norm_);
    register_module("self_attn", self_attn_);
    register_module("drop_self", drop_self_);
    if (cross_attention) {
        src_norm_ = std::make_unique<nn::LayerNorm>(cfg.model_dim);
        src_attn_ = std::make_unique<nn::MultiHeadAttention>(cfg.model_dim, cfg.num_heads(), cfg.dropout, init);
        register_module("src_norm", *src_norm_);
        register_module("src_attn", *src_attn_);
        register_module("drop_src", drop_src_);
    }
    register_module("ff_norm", ff_norm_);
    register_module("ff", ff_);
}

Tensor DecoderBlock::forward(const Tensor& x, const Tensor& self_mask, const Tensor* memory,
                             const Tensor* memory_mask) {
    const Tensor q = self_norm_.forward(x);
    Tensor h = ops::add(x, drop_self_.forward(self_attn_.forward(q, q, &self_mask)));
    if (src_attn_) {
        if (!memory) throw ContractError("decoder block with source attention needs memory");
        h = ops::add(h, drop_src_.forward(src_attn_->forward(src_norm_->forward(h), *memory, memory_mask)));
    }
    return ops::add(h, ff_.forward(ff_norm_.forward(h)));
}

TokenTransformer::TokenTransformer(std::int64_t vocab, const DecoderConfig& cfg, bool cross_attention, Rng& init)
    : vocab_(vocab), cfg_(cfg), embed_drop_(cfg.dropout), out_norm_(cfg.model_dim), out_(cfg.model_dim, vocab, init) {
    cfg_.validate();
    embedding_ = &register_parameter("embedding", nn::xavier_uniform({vocab, cfg.model_dim}, vocab, cfg.model_dim, init));
    register_module("embed_drop", embed_drop_);
    for (std::int64_t i = 0; i < cfg_.num_blocks; ++i) {
        blocks_.push_back(std::make_unique<DecoderBlock>(cfg_, cross_attention, init));
        register_module("block" + std::to_string(i + 1), *blocks_.back());
    }
    register_module("out_norm", out_norm_);
    register_module("out", out_);
}

Tensor TokenTransformer::forward(const TokenBatch& tokens, const Tensor* memory, const Tensor* memory_mask) {
    if (tokens.empty() || tokens[0].empty()) throw ContractError("decoder needs a non-empty token prefix");
    const auto B = static_cast<std::int64_t>(tokens.size());
    const auto L = static_cast<std::int64_t>(tokens[0].size());
    std::vector<std::int64_t> flat;
    flat.reserve(static_cast<std::size_t>(B * L));
    for (const auto& row : tokens) {
        if (static_cast<std::int64_t>(row.size()) != L) throw ShapeError("token rows must share one length");
        for (auto t : row) {
            if (t < 0 || t >= vocab_) throw ContractError("token class " + std::to_string(t) + " out of range");
            flat.push_back(t);
        }
    }
    Tensor x = ops::embedding(*embedding_, flat, {B, L});
    x = ops::add(ops::scale(x, std::sqrt(static_cast<Scalar>(cfg_.model_dim))),
                 nn::sinusoidal_positions(L, cfg_.model_dim));
    x = embed_drop_.forward(x);
    const Tensor mask = causal_mask(L);
    for (auto& block : blocks_) x = block->forward(x, mask, memory, memory_mask);
    return ops::log_softmax(out_.forward(out_norm_.forward(x)), -1);
}

// ---- decoder ----

TransformerDecoder::TransformerDecoder(std::int64_t vocab, const DecoderConfig& cfg, Rng& init)
    : net_(vocab, cfg, true, init) {
    register_module("net", net_);
}

Tensor TransformerDecoder::forward(const Tensor& memory, const std::vector<std::int64_t>& memory_lengths,
                                   const TokenBatch& tokens) {
    if (memory.rank() != 3) throw ShapeError("decoder memory must be [B, T, D]");
    if (static_cast<std::int64_t>(memory_lengths.size()) != memory.dim(0)) {
        throw ShapeError("decoder memory lengths do not match memory batch");
    }
    const Tensor mask =
        ops::reshape(nn::length_mask(memory_lengths, memory.dim(1)), {memory.dim(0), 1, 1, memory.dim(1)});
    return net_.forward(tokens, &memory, &mask);
}

std::vector<Scalar> TransformerDecoder::decode_step(const Tensor& memory, std::int64_t memory_length,
                                                    const std::vector<std::int64_t>& prefix) {
    if (prefix.empty()) throw ContractError("decode_step needs a prefix starting with <sos>");
    const Tensor out = forward(memory, {memory_length}, {prefix});
    const auto V = out.dim(2);
    const auto L = out.dim(1);
    auto d = out.data();
    return {d.begin() + (L - 1) * V, d.begin() + L * V};
}

// ---- LM ----

namespace {
DecoderConfig lm_as_decoder(const LmConfig& c) { return {c.num_blocks, c.model_dim, c.ff_dim, c.head_dim, c.dropout}; }
}  // namespace

CharLm::CharLm(std::int64_t vocab, const LmConfig& cfg, Rng& init) : cfg_(cfg), net_(vocab, lm_as_decoder(cfg), false, init) {
    register_module("net", net_);
}

Tensor CharLm::forward(const TokenBatch& tokens) { return net_.forward(tokens, nullptr, nullptr); }

std::vector<Scalar> CharLm::score(const std::vector<std::int64_t>& prefix) {
    if (prefix.empty()) throw ContractError("LM scoring needs a prefix starting with <sos>");
    const Tensor out = forward({prefix});
    const auto V = out.dim(2);
    const auto L = out.dim(1);
    auto d = out.data();
    return {d.begin() + (L - 1) * V, d.begin() + L * V};
}

void CharLm::zero_parameters() {
    for (auto& [name, t] : named_state()) {
        auto d = t.mutable_data();
        std::fill(d.begin(), d.end(), Scalar(0));
    }
}

CtcHead::CtcHead(std::int64_t dim, std::int64_t classes, Rng& init) : proj_(dim, classes, init) {
    register_module("proj", proj_);
}

Tensor CtcHead::forward(const Tensor& encoded) const { return ops::log_softmax(proj_.forward(encoded), -1); }

}  // namespace vsr
