#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace vsr {

#ifdef VSR_FLOAT32
using Scalar = float;
#else
using Scalar = double;
#endif

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct TensorNode;
using NodePtr = std::shared_ptr<TensorNode>;

// One entry of the tape: the value, its gradient accumulator and the adjoint
// that pushes this node's gradient into its inputs.
struct TensorNode {
    Shape shape;
    std::vector<Scalar> data;
    std::vector<Scalar> grad;  // empty until first accumulation
    bool requires_grad = false;
    std::vector<NodePtr> inputs;
    std::function<void(const TensorNode&)> backward_fn;

    bool is_leaf() const { return !backward_fn; }
    std::vector<Scalar>& ensure_grad();
};

// Thread-local switch; inference paths run without recording adjoints.
class GradMode {
public:
    static bool enabled();
    static void set_enabled(bool on);
};

class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(NodePtr node) : node_(std::move(node)) {}

    static Tensor zeros(const Shape& shape, bool requires_grad = false);
    static Tensor full(const Shape& shape, Scalar value, bool requires_grad = false);
    static Tensor from_data(const Shape& shape, std::vector<Scalar> data, bool requires_grad = false);
    static Tensor scalar(Scalar value, bool requires_grad = false);

    bool defined() const { return static_cast<bool>(node_); }
    const Shape& shape() const;
    std::int64_t dim(int axis) const;
    int rank() const { return static_cast<int>(shape().size()); }
    std::int64_t numel() const;

    std::span<const Scalar> data() const;
    // Direct write access; only for parameter initialisation and optimizer updates.
    std::span<Scalar> mutable_data();
    std::span<const Scalar> grad() const;
    bool has_grad() const;
    void zero_grad();

    bool requires_grad() const;
    void set_requires_grad(bool on);

    Scalar item() const;
    Scalar at(std::initializer_list<std::int64_t> index) const;

    // Same values, no history.
    Tensor detach() const;
    Tensor clone() const;

    const NodePtr& node() const { return node_; }

private:
    NodePtr node_;
};

// Build a tensor produced by an op. History is recorded only when grad mode
// is on and some input requires a gradient.
Tensor make_op_result(Shape shape, std::vector<Scalar> data, std::vector<Tensor> inputs,
                      std::function<void(const TensorNode&)> backward_fn);

// Reverse sweep from a scalar. Intermediate gradients are recomputed on every
// call; leaf gradients accumulate across calls until zero_grad().
void backward(const Tensor& loss);

}  // namespace vsr
