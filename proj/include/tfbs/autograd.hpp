#pragma once

#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "tfbs/tensor.hpp"

namespace tfbs {

template <typename T>
struct Node {
    Tensor<T> value;
    Tensor<T> grad;  // empty until something flows into it
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> inputs;
    // Reads this node's grad and accumulates into the inputs' grads.
    std::function<void(Node&)> backward;

    Tensor<T>& grad_buffer() {
        if (grad.size() != value.size() || grad.shape() != value.shape())
            grad = Tensor<T>(value.shape());
        return grad;
    }
};

namespace detail {
inline bool& grad_enabled_flag() {
    thread_local bool enabled = true;
    return enabled;
}
}  // namespace detail

inline bool grad_enabled() { return detail::grad_enabled_flag(); }

// Disables graph recording in the current thread for its lifetime.
class NoGradGuard {
public:
    NoGradGuard() : prev_(detail::grad_enabled_flag()) { detail::grad_enabled_flag() = false; }
    ~NoGradGuard() { detail::grad_enabled_flag() = prev_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

// Handle to a node of the computation graph. Copies share the node.
template <typename T>
class Var {
public:
    Var() = default;
    explicit Var(Tensor<T> value, bool requires_grad = false)
        : node_(std::make_shared<Node<T>>()) {
        node_->value = std::move(value);
        node_->requires_grad = requires_grad;
    }

    bool defined() const { return static_cast<bool>(node_); }
    const Tensor<T>& value() const { return node_->value; }
    Tensor<T>& mutable_value() { return node_->value; }
    const Shape& shape() const { return node_->value.shape(); }
    std::size_t dim(std::size_t axis) const { return node_->value.dim(axis); }
    std::size_t size() const { return node_->value.size(); }
    bool requires_grad() const { return node_->requires_grad; }

    // Gradient accumulated by backward(); zeros if nothing reached this node.
    const Tensor<T>& grad() const { return node_->grad_buffer(); }
    Tensor<T>& mutable_grad() { return node_->grad_buffer(); }
    void zero_grad() { node_->grad = Tensor<T>(); }

    const std::shared_ptr<Node<T>>& node() const { return node_; }

private:
    std::shared_ptr<Node<T>> node_;
};

// Creates the output node of an operation. When no input needs a gradient
// (or recording is disabled) the node is a detached constant.
template <typename T, typename Backward>
Var<T> make_result(Tensor<T> value, std::vector<Var<T>> inputs, Backward&& backward) {
    bool needs = false;
    if (grad_enabled())
        for (const auto& in : inputs) needs = needs || in.requires_grad();
    Var<T> out(std::move(value), needs);
    if (needs) {
        auto& node = *out.node();
        node.inputs.reserve(inputs.size());
        for (auto& in : inputs) node.inputs.push_back(in.node());
        node.backward = std::forward<Backward>(backward);
    }
    return out;
}

// Gradient buffer of input `i`, or nullptr if that input is not tracked.
template <typename T>
Tensor<T>* input_grad(Node<T>& self, std::size_t i) {
    auto& in = self.inputs[i];
    return in->requires_grad ? &in->grad_buffer() : nullptr;
}

template <typename T>
const Tensor<T>& input_value(const Node<T>& self, std::size_t i) {
    return self.inputs[i]->value;
}

// Reverse-mode accumulation from a scalar. Leaf gradients accumulate across
// calls until zeroed; intermediate gradients are released afterwards.
template <typename T>
void backward(const Var<T>& loss) {
    if (loss.size() != 1)
        throw ShapeError("backward requires a scalar loss, got shape " + shape_str(loss.shape()));
    if (!loss.requires_grad()) return;

    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> seen;
    std::vector<std::pair<Node<T>*, std::size_t>> stack;
    stack.emplace_back(loss.node().get(), 0);
    seen.insert(loss.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            Node<T>* child = node->inputs[next++].get();
            if (child->requires_grad && !seen.count(child)) {
                seen.insert(child);
                stack.emplace_back(child, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    loss.node()->grad_buffer()[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>* node = *it;
        if (node->backward && !node->grad.empty()) node->backward(*node);
    }
    for (Node<T>* node : order)
        if (node->backward) node->grad = Tensor<T>();
}

template <typename T>
struct Parameter {
    std::string name;
    Var<T> var;
};

// Non-trainable state saved with a model (batch-norm running statistics).
template <typename T>
struct Buffer {
    std::string name;
    Tensor<T>* tensor;
};

}  // namespace tfbs
