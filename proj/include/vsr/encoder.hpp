#pragma once

#include <memory>
#include <vector>

#include "vsr/nn.hpp"

namespace vsr {

struct ConformerConfig {
    std::int64_t num_blocks = 12;
    std::int64_t model_dim = 256;
    std::int64_t ff_dim = 2048;
    std::int64_t head_dim = 64;
    Scalar dropout = 0.1;
    std::int64_t conv_kernel = 31;
    std::int64_t rel_clip = 64;
    // Block whose output feeds the auxiliary predictors; 0 is the embedding.
    std::int64_t tap_layer = 6;

    std::int64_t num_heads() const { return model_dim / head_dim; }
    void validate() const;
};

struct EncoderOutput {
    Tensor top;  // [B, T, D]
    Tensor tap;  // [B, T, D], output of block tap_layer
    std::vector<std::int64_t> lengths;
};

// Padding description shared by every block of one forward pass.
struct SequenceMask {
    Tensor key_mask;                  // [B, 1, 1, T]
    Tensor time_mask;                 // [B, T, 1]
    std::vector<std::uint8_t> valid;  // [B * T]

    static SequenceMask from_lengths(const std::vector<std::int64_t>& lengths, std::int64_t max_len);
};

// pointwise -> GLU -> depthwise -> batchnorm -> swish -> pointwise -> layernorm.
class ConvolutionModule : public nn::Module {
public:
    ConvolutionModule(std::int64_t dim, std::int64_t kernel, Scalar dropout, Rng& init);
    Tensor forward(const Tensor& x, const SequenceMask& mask);

private:
    std::int64_t dim_;
    nn::Linear pointwise_in_;
    nn::Conv depthwise_;
    nn::BatchNorm norm_;
    nn::Linear pointwise_out_;
    nn::LayerNorm out_norm_;
    nn::Dropout drop_;
};

// Macaron block: x + FF/2, x + MHSA, x + Conv, x + FF/2, final layernorm.
// Every residual branch is pre-normed.
class ConformerBlock : public nn::Module {
public:
    ConformerBlock(const ConformerConfig& cfg, Rng& init);
    Tensor forward(const Tensor& x, const SequenceMask& mask);
    nn::MultiHeadAttention& attention() { return attn_; }

private:
    nn::LayerNorm ff1_norm_, attn_norm_, conv_norm_, ff2_norm_, final_norm_;
    nn::FeedForward ff1_, ff2_;
    nn::MultiHeadAttention attn_;
    nn::Dropout attn_drop_;
    ConvolutionModule conv_;
};

class ConformerEncoder : public nn::Module {
public:
    ConformerEncoder(std::int64_t input_dim, const ConformerConfig& cfg, Rng& init);

    // features: [B, C, T] -> [B, T, D].
    Tensor embed(const Tensor& features);
    EncoderOutput encode(const Tensor& features, const std::vector<std::int64_t>& lengths);
    // Runs only the embedding and the first `depth` blocks.
    Tensor encode_prefix(const Tensor& features, const std::vector<std::int64_t>& lengths, std::int64_t depth);

    const ConformerConfig& config() const { return cfg_; }
    ConformerBlock& block(std::size_t i) { return *blocks_.at(i); }

private:
    ConformerConfig cfg_;
    std::int64_t input_dim_;
    nn::Linear embed_;
    nn::Dropout embed_drop_;
    std::vector<std::unique_ptr<ConformerBlock>> blocks_;
};

}  // namespace vsr
