#pragma once

#include <memory>
#include <vector>

#include "vsr/nn.hpp"

namespace vsr {

struct DecoderConfig {
    std::int64_t num_blocks = 6;
    std::int64_t model_dim = 256;
    std::int64_t ff_dim = 2048;
    std::int64_t head_dim = 64;
    Scalar dropout = 0.1;

    std::int64_t num_heads() const { return model_dim / head_dim; }
    void validate() const;
};

using TokenBatch = std::vector<std::vector<std::int64_t>>;

// [L, L] lower-triangular 0/1 mask, shaped [1, 1, L, L].
Tensor causal_mask(std::int64_t length);

// Pre-norm block: causal self-attention, optional source attention, feed-forward.
class DecoderBlock : public nn::Module {
public:
    DecoderBlock(const DecoderConfig& cfg, bool cross_attention, Rng& init);
    Tensor forward(const Tensor& x, const Tensor& self_mask, const Tensor* memory, const Tensor* memory_mask);

private:
    nn::LayerNorm self_norm_, ff_norm_;
    nn::MultiHeadAttention self_attn_;
    nn::FeedForward ff_;
    nn::Dropout drop_self_, drop_src_;
    std::unique_ptr<nn::LayerNorm> src_norm_;
    std::unique_ptr<nn::MultiHeadAttention> src_attn_;
};

// Shared token-sequence stack used by the attention decoder and the LM.
class TokenTransformer : public nn::Module {
public:
    TokenTransformer(std::int64_t vocab, const DecoderConfig& cfg, bool cross_attention, Rng& init);

    // tokens: B rows of equal length L (decoder classes). Returns [B, L, vocab]
    // log-probabilities; row i position j predicts token j + 1.
    Tensor forward(const TokenBatch& tokens, const Tensor* memory, const Tensor* memory_mask);
    std::int64_t vocab() const { return vocab_; }

private:
    std::int64_t vocab_;
    DecoderConfig cfg_;
    Tensor* embedding_;
    nn::Dropout embed_drop_;
    std::vector<std::unique_ptr<DecoderBlock>> blocks_;
    nn::LayerNorm out_norm_;
    nn::Linear out_;
};

class TransformerDecoder : public nn::Module {
public:
    TransformerDecoder(std::int64_t vocab, const DecoderConfig& cfg, Rng& init);

    // memory: [Bm, T, D] with Bm == B or 1 (shared across hypotheses).
    Tensor forward(const Tensor& memory, const std::vector<std::int64_t>& memory_lengths, const TokenBatch& tokens);
    // Next-token log-probabilities after `prefix` (must start with sos).
    std::vector<Scalar> decode_step(const Tensor& memory, std::int64_t memory_length,
                                    const std::vector<std::int64_t>& prefix);
    std::int64_t vocab() const { return net_.vocab(); }

private:
    TokenTransformer net_;
};

struct LmConfig {
    std::int64_t num_blocks = 2;
    std::int64_t model_dim = 128;
    std::int64_t ff_dim = 512;
    std::int64_t head_dim = 32;
    Scalar dropout = 0.1;
};

// Causal character LM over decoder classes.
class CharLm : public nn::Module {
public:
    CharLm(std::int64_t vocab, const LmConfig& cfg, Rng& init);

    Tensor forward(const TokenBatch& tokens);
    std::vector<Scalar> score(const std::vector<std::int64_t>& prefix);
    // All parameters (and norms' gains) to zero: every prediction is uniform.
    void zero_parameters();
    std::int64_t vocab() const { return net_.vocab(); }
    const LmConfig& config() const { return cfg_; }

private:
    LmConfig cfg_;
    TokenTransformer net_;
};

class CtcHead : public nn::Module {
public:
    CtcHead(std::int64_t dim, std::int64_t classes, Rng& init);
    // [B, T, D] -> [B, T, classes] log-probabilities.
    Tensor forward(const Tensor& encoded) const;

private:
    nn::Linear proj_;
};

}  // namespace vsr
