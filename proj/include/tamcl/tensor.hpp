#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "tamcl/errors.hpp"

namespace tamcl {

// Dense 64-bit float tensor participating in a reverse-mode computation
// graph. Values are row-major and immutable once a forward op has produced
// them; only leaf tensors (parameters) are ever mutated in place, by the
// optimizer, between graph constructions.
struct TensorNode {
    std::vector<std::size_t> shape;
    std::vector<double> values;
    std::vector<double> grad;  // allocated lazily, same length as values
    bool requires_grad = false;
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void(TensorNode&)> backward_fn;

    std::size_t numel() const { return values.size(); }

    void ensure_grad() {
        if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
    }
    void zero_grad() { grad.assign(values.size(), 0.0); }
};

inline std::size_t shape_numel(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<TensorNode> node) : node_(std::move(node)) {}

    static Tensor constant(std::vector<std::size_t> shape, std::vector<double> values) {
        return make(std::move(shape), std::move(values), false);
    }
    static Tensor scalar_constant(double v) { return constant({1}, {v}); }

    // Leaf with gradient storage; the backing store for a Parameter.
    static Tensor leaf(std::vector<std::size_t> shape, std::vector<double> values) {
        return make(std::move(shape), std::move(values), true);
    }

    bool defined() const { return node_ != nullptr; }
    const std::vector<std::size_t>& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t numel() const { return node_->numel(); }
    std::size_t dim(std::size_t i) const { return node_->shape[i]; }

    const std::vector<double>& values() const { return node_->values; }
    std::vector<double>& mutable_values() { return node_->values; }
    const std::vector<double>& grad() const { return node_->grad; }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool flag) { node_->requires_grad = flag; }

    double value() const {
        if (numel() != 1) throw std::invalid_argument("value() on non-scalar tensor");
        return node_->values[0];
    }

    void zero_grad() { node_->zero_grad(); }

    TensorNode* node() const { return node_.get(); }
    const std::shared_ptr<TensorNode>& node_ptr() const { return node_; }

private:
    static Tensor make(std::vector<std::size_t> shape, std::vector<double> values, bool requires_grad) {
        if (shape_numel(shape) != values.size())
            throw std::invalid_argument("tensor shape does not match value count");
        auto n = std::make_shared<TensorNode>();
        n->shape = std::move(shape);
        n->values = std::move(values);
        n->requires_grad = requires_grad;
        return Tensor(std::move(n));
    }

    std::shared_ptr<TensorNode> node_;
};

// Builds a graph node. When no input carries gradient the parents and the
// backward closure are dropped so constant-only subgraphs (e.g. the frozen
// teacher) cost nothing to keep.
inline Tensor make_op(std::vector<std::size_t> shape, std::vector<double> values,
                      std::vector<Tensor> parents, std::function<void(TensorNode&)> backward_fn) {
    if (shape_numel(shape) != values.size())
        throw std::invalid_argument("op output shape does not match value count");
    auto n = std::make_shared<TensorNode>();
    n->shape = std::move(shape);
    n->values = std::move(values);
    bool needs = false;
    for (const auto& p : parents)
        if (p.requires_grad()) needs = true;
    n->requires_grad = needs;
    if (needs) {
        n->parents.reserve(parents.size());
        for (auto& p : parents) n->parents.push_back(p.node_ptr());
        n->backward_fn = std::move(backward_fn);
    }
    return Tensor(std::move(n));
}

// Reverse-mode sweep from a scalar loss. Gradients accumulate into every
// reachable tensor with requires_grad set; call zero_grad on the parameters
// between steps, repeated sweeps otherwise add up.
inline void backward(const Tensor& loss) {
    if (!loss.defined() || loss.numel() != 1)
        throw std::invalid_argument("backward requires a scalar loss");
    if (!loss.requires_grad()) return;  // constant graph, nothing reachable

    // Post-order over the requires_grad subgraph, iterative to cope with deep chains.
    std::vector<TensorNode*> order;
    std::unordered_set<TensorNode*> visited;
    struct Frame {
        TensorNode* node;
        std::size_t next_parent;
    };
    std::vector<Frame> stack;
    stack.push_back({loss.node(), 0});
    visited.insert(loss.node());
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next_parent < f.node->parents.size()) {
            TensorNode* p = f.node->parents[f.next_parent++].get();
            if (p->requires_grad && visited.insert(p).second) stack.push_back({p, 0});
        } else {
            order.push_back(f.node);
            stack.pop_back();
        }
    }

    // Interior gradients are scratch space for this sweep; only leaves keep
    // accumulating across repeated backward calls.
    for (TensorNode* n : order)
        if (n->backward_fn) n->zero_grad();

    loss.node()->ensure_grad();
    loss.node()->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorNode* n = *it;
        if (n->backward_fn) {
            n->ensure_grad();
            for (auto& p : n->parents)
                if (p->requires_grad) p->ensure_grad();
            n->backward_fn(*n);
        }
    }
}

}  // namespace tamcl
