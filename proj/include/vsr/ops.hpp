#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "vsr/tensor.hpp"

// Differentiable operations on Tensor. Every op records its adjoint on the
// tape when grad mode is enabled and an input requires a gradient.
namespace vsr::ops {

// Numpy-style broadcasting; mismatches raise ShapeError naming both shapes.
Shape broadcast_shape(const Shape& a, const Shape& b);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, Scalar factor);
Tensor add_scalar(const Tensor& x, Scalar value);

// [..., m, k] x [..., k, n] -> [..., m, n]; batch dims broadcast.
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor swish(const Tensor& x);
Tensor abs(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);

// Splits `axis` into halves [a; b] and returns a * sigmoid(b).
Tensor glu(const Tensor& x, int axis);
Tensor softmax(const Tensor& x, int axis);
Tensor log_softmax(const Tensor& x, int axis);

// Normalises over the last axis; gain and bias have the last axis' extent.
Tensor layernorm(const Tensor& x, const Tensor& gain, const Tensor& bias, Scalar eps = 1e-5);

struct BatchNormStats {
    std::vector<Scalar> running_mean;
    std::vector<Scalar> running_var;
    Scalar momentum = 0.1;
    Scalar eps = 1e-5;
};

// x: [B, C, spatial...]. With a [B, prod(spatial)] 0/1 mask, statistics use
// valid positions only and masked outputs are zero. Training mode updates the
// running statistics in `stats`.
Tensor batchnorm(const Tensor& x, const Tensor& gain, const Tensor& bias, BatchNormStats& stats,
                 bool training, const std::vector<std::uint8_t>* mask = nullptr);

// Identity when !training or p == 0; p outside [0, 1) is a ConfigError.
Tensor dropout(const Tensor& x, Scalar p, std::mt19937_64& rng, bool training);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor sum(const Tensor& x, int axis, bool keepdim = false);
Tensor mean(const Tensor& x, int axis, bool keepdim = false);

// mean(|a - b|) over all elements; shapes must match.
Tensor l1_distance(const Tensor& a, const Tensor& b);

Tensor reshape(const Tensor& x, const Shape& shape);
Tensor permute(const Tensor& x, const std::vector<int>& perm);
Tensor transpose(const Tensor& x, int axis_a, int axis_b);
Tensor slice(const Tensor& x, int axis, std::int64_t start, std::int64_t length);
Tensor concat(const std::vector<Tensor>& parts, int axis);

struct ConvOptions {
    std::vector<std::int64_t> stride;  // one per spatial axis, or a single value
    std::vector<std::int64_t> pad;
    std::int64_t groups = 1;
};

// x: [B, Cin, s1..sd], weight: [Cout, Cin/groups, k1..kd] with d in {1, 2, 3}.
// Output extent per axis is floor((in + 2 pad - k) / stride) + 1.
Tensor conv(const Tensor& x, const Tensor& weight, const Tensor* bias, const ConvOptions& opt);
Shape conv_output_shape(const Shape& input, const Shape& weight, const ConvOptions& opt);

// Pooling over the trailing kernel.size() axes of [B, C, spatial...].
Tensor max_pool(const Tensor& x, const std::vector<std::int64_t>& kernel,
                const std::vector<std::int64_t>& stride, const std::vector<std::int64_t>& pad);
Tensor avg_pool(const Tensor& x, const std::vector<std::int64_t>& kernel,
                const std::vector<std::int64_t>& stride);

// Row lookup: result shape is prefix + [D].
Tensor embedding(const Tensor& table, const std::vector<std::int64_t>& ids, const Shape& prefix);
// x: [N, V] -> [N] with out[n] = x[n, index[n]].
Tensor pick(const Tensor& x, const std::vector<std::int64_t>& index);
// Keeps x where mask != 0, writes `value` elsewhere. mask broadcasts to x.
Tensor masked_fill(const Tensor& x, const Tensor& mask, Scalar value);
// x: [..., T, 2*clip+1] -> [..., T, T] with out[i, j] = x[i, clamp(j - i) + clip].
Tensor relative_logits(const Tensor& x, std::int64_t clip);

}  // namespace vsr::ops
