#include "vsr/tensor.hpp"

#include <cmath>
#include <sstream>
#include <unordered_set>

#include "vsr/errors.hpp"

namespace vsr {

namespace {
thread_local bool g_grad_enabled = true;
}

std::int64_t shape_numel(const Shape& shape) {
    std::int64_t n = 1;
    for (auto e : shape) n *= e;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

std::vector<Scalar>& TensorNode::ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), Scalar(0));
    return grad;
}

bool GradMode::enabled() { return g_grad_enabled; }
void GradMode::set_enabled(bool on) { g_grad_enabled = on; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

// ---- construction ----

static void check_shape(const Shape& shape) {
    for (auto e : shape) {
        if (e <= 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
    }
}

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) {
    return full(shape, Scalar(0), requires_grad);
}

Tensor Tensor::full(const Shape& shape, Scalar value, bool requires_grad) {
    check_shape(shape);
    auto node = std::make_shared<TensorNode>();
    node->shape = shape;
    node->data.assign(static_cast<std::size_t>(shape_numel(shape)), value);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
}

Tensor Tensor::from_data(const Shape& shape, std::vector<Scalar> data, bool requires_grad) {
    check_shape(shape);
    if (static_cast<std::int64_t>(data.size()) != shape_numel(shape)) {
        throw ShapeError("data length " + std::to_string(data.size()) + " does not match shape " +
                         shape_str(shape));
    }
    auto node = std::make_shared<TensorNode>();
    node->shape = shape;
    node->data = std::move(data);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
}

Tensor Tensor::scalar(Scalar value, bool requires_grad) {
    return from_data({1}, {value}, requires_grad);
}

// ---- accessors ----

const Shape& Tensor::shape() const { return node_->shape; }

std::int64_t Tensor::dim(int axis) const {
    const int r = rank();
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r) {
        throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape()));
    }
    return node_->shape[static_cast<std::size_t>(axis)];
}

std::int64_t Tensor::numel() const { return static_cast<std::int64_t>(node_->data.size()); }

std::span<const Scalar> Tensor::data() const { return node_->data; }
std::span<Scalar> Tensor::mutable_data() { return node_->data; }

std::span<const Scalar> Tensor::grad() const { return node_->grad; }
bool Tensor::has_grad() const { return !node_->grad.empty(); }
void Tensor::zero_grad() { node_->grad.clear(); }

bool Tensor::requires_grad() const { return node_->requires_grad; }
void Tensor::set_requires_grad(bool on) { node_->requires_grad = on; }

Scalar Tensor::item() const {
    if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
    return node_->data[0];
}

Scalar Tensor::at(std::initializer_list<std::int64_t> index) const {
    const auto& s = shape();
    if (index.size() != s.size()) throw ShapeError("index rank mismatch for " + shape_str(s));
    std::int64_t flat = 0;
    std::size_t d = 0;
    for (auto i : index) {
        if (i < 0 || i >= s[d]) throw ShapeError("index out of range for " + shape_str(s));
        flat = flat * s[d] + i;
        ++d;
    }
    return node_->data[static_cast<std::size_t>(flat)];
}

Tensor Tensor::detach() const {
    auto node = std::make_shared<TensorNode>();
    node->shape = node_->shape;
    node->data = node_->data;
    return Tensor(std::move(node));
}

Tensor Tensor::clone() const {
    Tensor t = detach();
    t.set_requires_grad(requires_grad());
    return t;
}

// ---- tape ----

Tensor make_op_result(Shape shape, std::vector<Scalar> data, std::vector<Tensor> inputs,
                      std::function<void(const TensorNode&)> backward_fn) {
    auto node = std::make_shared<TensorNode>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    if (GradMode::enabled()) {
        bool any = false;
        for (const auto& in : inputs) any = any || in.requires_grad();
        if (any) {
            node->requires_grad = true;
            node->inputs.reserve(inputs.size());
            for (auto& in : inputs) node->inputs.push_back(in.node());
            node->backward_fn = std::move(backward_fn);
        }
    }
    return Tensor(std::move(node));
}

void backward(const Tensor& loss) {
    if (!loss.defined() || loss.numel() != 1) {
        throw ContractError("backward() requires a scalar loss, got shape " +
                            (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
    }
    if (!loss.requires_grad()) return;

    // Iterative post-order DFS; input order fixes the replay order.
    std::vector<TensorNode*> order;
    std::unordered_set<TensorNode*> visited;
    std::vector<std::pair<TensorNode*, std::size_t>> stack;
    stack.emplace_back(loss.node().get(), 0);
    visited.insert(loss.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            TensorNode* child = node->inputs[next++].get();
            if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    for (TensorNode* n : order) {
        if (!n->is_leaf()) n->grad.assign(n->data.size(), Scalar(0));
    }
    loss.node()->ensure_grad()[0] += Scalar(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorNode* n = *it;
        if (!n->is_leaf()) n->backward_fn(*n);
    }
}

}  // namespace vsr
