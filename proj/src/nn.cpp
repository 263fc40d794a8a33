#include "vsr/nn.hpp"

#include <cmath>
#include <limits>
#include <map>

#include "vsr/errors.hpp"

namespace vsr::nn {

// ---- Module ----

Tensor& Module::register_parameter(const std::string& name, Tensor t) {
    t.set_requires_grad(true);
    storage_.push_back(std::make_unique<Tensor>(std::move(t)));
    params_.emplace_back(name, storage_.back().get());
    return *storage_.back();
}

Tensor& Module::register_buffer(const std::string& name, Tensor t) {
    storage_.push_back(std::make_unique<Tensor>(std::move(t)));
    buffers_.emplace_back(name, storage_.back().get());
    return *storage_.back();
}

void Module::register_module(const std::string& name, Module& child) { children_.emplace_back(name, &child); }

void Module::collect(const std::string& prefix, bool with_buffers, NamedTensors& out) const {
    for (const auto& [name, t] : params_) out.emplace_back(prefix + name, *t);
    if (with_buffers) {
        for (const auto& [name, t] : buffers_) out.emplace_back(prefix + name, *t);
    }
    for (const auto& [name, child] : children_) child->collect(prefix + name + ".", with_buffers, out);
}

NamedTensors Module::named_parameters() const {
    NamedTensors out;
    collect("", false, out);
    return out;
}

NamedTensors Module::named_state() const {
    NamedTensors out;
    collect("", true, out);
    return out;
}

std::vector<Tensor> Module::parameters() const {
    std::vector<Tensor> out;
    for (auto& [name, t] : named_parameters()) out.push_back(t);
    return out;
}

void Module::train(bool on) {
    training_ = on;
    for (auto& [name, child] : children_) child->train(on);
}

void Module::zero_grad() {
    for (auto& t : parameters()) t.zero_grad();
}

void Module::reseed(std::uint64_t seed, const std::string& path) {
    rng_ = make_rng(seed, "dropout:" + path);
    for (auto& [name, child] : children_) child->reseed(seed, path.empty() ? name : path + "." + name);
}

void Module::load_state(const NamedTensors& state) {
    std::map<std::string, const Tensor*> by_name;
    for (const auto& [name, t] : state) by_name[name] = &t;
    for (auto& [name, dst] : named_state()) {
        auto it = by_name.find(name);
        if (it == by_name.end()) throw DataError("missing parameter '" + name + "' in loaded state");
        if (it->second->shape() != dst.shape()) {
            throw DataError("parameter '" + name + "' has shape " + shape_str(it->second->shape()) + ", expected " +
                            shape_str(dst.shape()));
        }
        auto src = it->second->data();
        std::copy(src.begin(), src.end(), dst.mutable_data().begin());
    }
}

Tensor xavier_uniform(const Shape& shape, std::int64_t fan_in, std::int64_t fan_out, Rng& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<Scalar> data(static_cast<std::size_t>(shape_numel(shape)));
    for (auto& v : data) v = static_cast<Scalar>(dist(rng));
    return Tensor::from_data(shape, std::move(data));
}

// ---- layers ----

Linear::Linear(std::int64_t in, std::int64_t out, Rng& init, bool bias) : in_(in), out_(out) {
    weight_ = &register_parameter("weight", xavier_uniform({in, out}, in, out, init));
    if (bias) bias_ = &register_parameter("bias", Tensor::zeros({out}));
}

Tensor Linear::forward(const Tensor& x) const {
    if (x.shape().back() != in_) {
        throw ShapeError("linear layer expects last extent " + std::to_string(in_) + ", got " + shape_str(x.shape()));
    }
    Tensor y = ops::matmul(x, *weight_);
    return bias_ ? ops::add(y, *bias_) : y;
}

LayerNorm::LayerNorm(std::int64_t dim) {
    gain_ = &register_parameter("gain", Tensor::full({dim}, Scalar(1)));
    bias_ = &register_parameter("bias", Tensor::zeros({dim}));
}

Tensor LayerNorm::forward(const Tensor& x) const { return ops::layernorm(x, *gain_, *bias_); }

BatchNorm::BatchNorm(std::int64_t channels) {
    gain_ = &register_parameter("gain", Tensor::full({channels}, Scalar(1)));
    bias_ = &register_parameter("bias", Tensor::zeros({channels}));
    running_mean_ = &register_buffer("running_mean", Tensor::zeros({channels}));
    running_var_ = &register_buffer("running_var", Tensor::full({channels}, Scalar(1)));
}

Tensor BatchNorm::forward(const Tensor& x, const std::vector<std::uint8_t>* mask) {
    ops::BatchNormStats stats;
    stats.running_mean.assign(running_mean_->data().begin(), running_mean_->data().end());
    stats.running_var.assign(running_var_->data().begin(), running_var_->data().end());
    // Inference calls must not touch the running statistics.
    const bool update = training() && GradMode::enabled();
    Tensor y = ops::batchnorm(x, *gain_, *bias_, stats, training(), mask);
    if (update) {
        std::copy(stats.running_mean.begin(), stats.running_mean.end(), running_mean_->mutable_data().begin());
        std::copy(stats.running_var.begin(), stats.running_var.end(), running_var_->mutable_data().begin());
    }
    return y;
}

Conv::Conv(std::int64_t in, std::int64_t out, std::vector<std::int64_t> kernel, ops::ConvOptions opt, Rng& init,
           bool bias)
    : opt_(std::move(opt)) {
    Shape ws{out, in / opt_.groups};
    std::int64_t vol = 1;
    for (auto k : kernel) {
        ws.push_back(k);
        vol *= k;
    }
    weight_ = &register_parameter("weight", xavier_uniform(ws, in / opt_.groups * vol, out / opt_.groups * vol, init));
    if (bias) bias_ = &register_parameter("bias", Tensor::zeros({out}));
}

Tensor Conv::forward(const Tensor& x) const { return ops::conv(x, *weight_, bias_, opt_); }

Shape Conv::output_shape(const Shape& input) const { return ops::conv_output_shape(input, weight_->shape(), opt_); }

Dropout::Dropout(Scalar p) : p_(p) {
    if (!(p >= 0 && p < 1)) throw ConfigError("dropout probability must be in [0, 1)");
}

Tensor Dropout::forward(const Tensor& x) { return ops::dropout(x, p_, rng(), training()); }

FeedForward::FeedForward(std::int64_t dim, std::int64_t hidden, Scalar dropout, Rng& init)
    : in_(dim, hidden, init), out_(hidden, dim, init), drop_hidden_(dropout), drop_out_(dropout) {
    register_module("in", in_);
    register_module("out", out_);
    register_module("drop_hidden", drop_hidden_);
    register_module("drop_out", drop_out_);
}

Tensor FeedForward::forward(const Tensor& x) {
    return drop_out_.forward(out_.forward(drop_hidden_.forward(ops::relu(in_.forward(x)))));
}

// ---- attention ----

MultiHeadAttention::MultiHeadAttention(std::int64_t dim, std::int64_t heads, Scalar dropout, Rng& init,
                                       std::int64_t rel_clip)
    : dim_(dim),
      heads_(heads),
      head_dim_(heads > 0 ? dim / heads : 0),
      rel_clip_(rel_clip),
      q_(dim, dim, init),
      k_(dim, dim, init),
      v_(dim, dim, init),
      out_(dim, dim, init),
      drop_(dropout) {
    if (heads <= 0 || dim % heads != 0) {
        throw ConfigError("model dim " + std::to_string(dim) + " not divisible into " + std::to_string(heads) + " heads");
    }
    register_module("q", q_);
    register_module("k", k_);
    register_module("v", v_);
    register_module("out", out_);
    register_module("drop", drop_);
    if (rel_clip_ > 0) {
        rel_keys_ = &register_parameter(
            "rel_keys", xavier_uniform({2 * rel_clip_ + 1, head_dim_}, head_dim_, 2 * rel_clip_ + 1, init));
    }
}

Tensor MultiHeadAttention::forward(const Tensor& query, const Tensor& memory, const Tensor* mask) {
    const std::int64_t bq = query.dim(0), tq = query.dim(1);
    const std::int64_t bm = memory.dim(0), tk = memory.dim(1);
    auto split = [&](const Tensor& t, std::int64_t b, std::int64_t len) {
        return ops::permute(ops::reshape(t, {b, len, heads_, head_dim_}), {0, 2, 1, 3});
    };
    const Tensor q = split(q_.forward(query), bq, tq);   // [Bq, H, Tq, dh]
    const Tensor k = split(k_.forward(memory), bm, tk);  // [Bm, H, Tk, dh]
    const Tensor v = split(v_.forward(memory), bm, tk);
    Tensor scores = ops::matmul(q, ops::transpose(k, 2, 3));
    if (rel_keys_) {
        if (tq != tk) throw ShapeError("relative positions require self-attention");
        const Tensor qr = ops::matmul(q, ops::transpose(*rel_keys_, 0, 1));  // [Bq, H, Tq, 2c+1]
        scores = ops::add(scores, ops::relative_logits(qr, rel_clip_));
    }
    scores = ops::scale(scores, Scalar(1) / std::sqrt(static_cast<Scalar>(head_dim_)));
    if (mask) scores = ops::masked_fill(scores, *mask, -std::numeric_limits<Scalar>::infinity());
    Tensor attn = ops::softmax(scores, -1);
    last_attention_ = attn;
    attn = drop_.forward(attn);
    const Tensor ctx = ops::matmul(attn, v);  // [B, H, Tq, dh]
    const Tensor merged = ops::reshape(ops::permute(ctx, {0, 2, 1, 3}), {bq, tq, dim_});
    return out_.forward(merged);
}

Tensor sinusoidal_positions(std::int64_t length, std::int64_t dim) {
    std::vector<Scalar> pe(static_cast<std::size_t>(length * dim));
    for (std::int64_t t = 0; t < length; ++t)
        for (std::int64_t i = 0; i < dim; ++i) {
            const double freq = std::pow(10000.0, -static_cast<double>(i - i % 2) / static_cast<double>(dim));
            pe[t * dim + i] = static_cast<Scalar>(i % 2 == 0 ? std::sin(t * freq) : std::cos(t * freq));
        }
    return Tensor::from_data({length, dim}, std::move(pe));
}

Tensor length_mask(const std::vector<std::int64_t>& lengths, std::int64_t max_len) {
    const auto b = static_cast<std::int64_t>(lengths.size());
    std::vector<Scalar> m(static_cast<std::size_t>(b * max_len), Scalar(0));
    for (std::int64_t i = 0; i < b; ++i)
        for (std::int64_t t = 0; t < std::min(lengths[i], max_len); ++t) m[i * max_len + t] = Scalar(1);
    return Tensor::from_data({b, max_len}, std::move(m));
}

bool all_finite(const Tensor& t) {
    for (Scalar v : t.data())
        if (!std::isfinite(v)) return false;
    return true;
}

}  // namespace vsr::nn
