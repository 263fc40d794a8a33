#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "vsr/ops.hpp"
#include "vsr/random.hpp"
#include "vsr/tensor.hpp"

namespace vsr::nn {

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

// Owns parameters, buffers and child modules by name. Children are members
// of the parent, so modules are neither copyable nor movable.
class Module {
public:
    Module() = default;
    virtual ~Module() = default;
    Module(const Module&) = delete;
    Module& operator=(const Module&) = delete;

    // Trainable tensors, children prefixed "child.".
    NamedTensors named_parameters() const;
    // Parameters plus non-trainable state (batchnorm running statistics).
    NamedTensors named_state() const;
    std::vector<Tensor> parameters() const;

    void train(bool on);
    bool training() const { return training_; }
    void zero_grad();

    // Gives every module its own dropout stream derived from (seed, path).
    void reseed(std::uint64_t seed, const std::string& path = "");

    // Copies values from `other` (same structure) into this module in place.
    void load_state(const NamedTensors& state);

protected:
    Tensor& register_parameter(const std::string& name, Tensor t);
    Tensor& register_buffer(const std::string& name, Tensor t);
    void register_module(const std::string& name, Module& child);
    Rng& rng() { return rng_; }

private:
    void collect(const std::string& prefix, bool with_buffers, NamedTensors& out) const;

    std::vector<std::pair<std::string, Tensor*>> params_;
    std::vector<std::pair<std::string, Tensor*>> buffers_;
    std::vector<std::pair<std::string, Module*>> children_;
    // Stable storage for registered tensors.
    std::vector<std::unique_ptr<Tensor>> storage_;
    bool training_ = true;
    Rng rng_{0};
};

// Uniform(-bound, bound) with bound = sqrt(6 / (fan_in + fan_out)).
Tensor xavier_uniform(const Shape& shape, std::int64_t fan_in, std::int64_t fan_out, Rng& rng);

class Linear : public Module {
public:
    Linear(std::int64_t in, std::int64_t out, Rng& init, bool bias = true);
    Tensor forward(const Tensor& x) const;
    const Tensor& weight() const { return *weight_; }
    std::int64_t in_features() const { return in_; }
    std::int64_t out_features() const { return out_; }

private:
    std::int64_t in_, out_;
    Tensor* weight_;  // [in, out]
    Tensor* bias_ = nullptr;
};

class LayerNorm : public Module {
public:
    explicit LayerNorm(std::int64_t dim);
    Tensor forward(const Tensor& x) const;

private:
    Tensor* gain_;
    Tensor* bias_;
};

class BatchNorm : public Module {
public:
    explicit BatchNorm(std::int64_t channels);
    // x: [B, C, spatial...]; optional [B, prod(spatial)] validity mask.
    Tensor forward(const Tensor& x, const std::vector<std::uint8_t>* mask = nullptr);

private:
    Tensor* gain_;
    Tensor* bias_;
    Tensor* running_mean_;
    Tensor* running_var_;
};

class Conv : public Module {
public:
    Conv(std::int64_t in, std::int64_t out, std::vector<std::int64_t> kernel, ops::ConvOptions opt, Rng& init,
         bool bias = true);
    Tensor forward(const Tensor& x) const;
    Shape output_shape(const Shape& input) const;

private:
    ops::ConvOptions opt_;
    Tensor* weight_;
    Tensor* bias_ = nullptr;
};

class Dropout : public Module {
public:
    explicit Dropout(Scalar p);
    Tensor forward(const Tensor& x);
    Scalar p() const { return p_; }

private:
    Scalar p_;
};

// Linear -> ReLU -> dropout -> Linear -> dropout.
class FeedForward : public Module {
public:
    FeedForward(std::int64_t dim, std::int64_t hidden, Scalar dropout, Rng& init);
    Tensor forward(const Tensor& x);

private:
    Linear in_, out_;
    Dropout drop_hidden_, drop_out_;
};

// Multi-head scaled dot-product attention. With rel_clip > 0, query-key
// logits also get learned relative-position keys for offsets clipped to
// [-rel_clip, rel_clip] (self-attention only).
class MultiHeadAttention : public Module {
public:
    MultiHeadAttention(std::int64_t dim, std::int64_t heads, Scalar dropout, Rng& init, std::int64_t rel_clip = 0);

    // query: [Bq, Tq, D]; memory: [Bm, Tk, D] with Bm == Bq or 1.
    // mask broadcasts to [B, 1, Tq, Tk]; zero entries are excluded.
    Tensor forward(const Tensor& query, const Tensor& memory, const Tensor* mask);

    // Softmax weights of the last forward, [B, H, Tq, Tk].
    const Tensor& last_attention() const { return last_attention_; }
    std::int64_t heads() const { return heads_; }

private:
    std::int64_t dim_, heads_, head_dim_, rel_clip_;
    Linear q_, k_, v_, out_;
    Dropout drop_;
    Tensor* rel_keys_ = nullptr;  // [2 * rel_clip + 1, head_dim]
    Tensor last_attention_;
};

// Sinusoidal absolute positions, [T, D].
Tensor sinusoidal_positions(std::int64_t length, std::int64_t dim);

// 1 where position < length, [B, T] as 0/1 scalars.
Tensor length_mask(const std::vector<std::int64_t>& lengths, std::int64_t max_len);

bool all_finite(const Tensor& t);

}  // namespace vsr::nn
