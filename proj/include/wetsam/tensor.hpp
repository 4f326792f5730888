#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "wetsam/errors.hpp"

namespace wetsam {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

namespace detail {

inline bool& grad_enabled_flag() {
    thread_local bool enabled = true;
    return enabled;
}

template <class Real>
struct TensorNode {
    Shape shape;
    std::vector<Real> values;
    std::vector<Real> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<TensorNode>> parents;
    // Reads this node's grad and accumulates into the parents' grads.
    std::function<void(const TensorNode&)> backward;

    void ensure_grad() {
        if (grad.size() != values.size()) grad.assign(values.size(), Real(0));
    }
};

} // namespace detail

inline bool grad_enabled() { return detail::grad_enabled_flag(); }

/// Disables graph recording for the lifetime of the guard (inference, finite differences).
class NoGradGuard {
public:
    NoGradGuard() : previous_(detail::grad_enabled_flag()) { detail::grad_enabled_flag() = false; }
    ~NoGradGuard() { detail::grad_enabled_flag() = previous_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

/// Dense row-major array with an optional gradient buffer and a link into the
/// reverse-mode graph. Copies share storage; use clone() for a deep copy.
template <class Real>
class Tensor {
public:
    using value_type = Real;
    using Node = detail::TensorNode<Real>;

    Tensor() : node_(std::make_shared<Node>()) {}

    Tensor(Shape shape, std::vector<Real> values, bool requires_grad = false)
        : node_(std::make_shared<Node>()) {
        if (shape_numel(shape) != values.size()) {
            throw DimensionError("tensor shape " + shape_str(shape) + " holds " +
                                 std::to_string(shape_numel(shape)) + " values, got " +
                                 std::to_string(values.size()));
        }
        node_->shape = std::move(shape);
        node_->values = std::move(values);
        node_->requires_grad = requires_grad;
    }

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        const auto n = shape_numel(shape);
        return Tensor(std::move(shape), std::vector<Real>(n, Real(0)), requires_grad);
    }

    static Tensor full(Shape shape, Real value, bool requires_grad = false) {
        const auto n = shape_numel(shape);
        return Tensor(std::move(shape), std::vector<Real>(n, value), requires_grad);
    }

    static Tensor scalar(Real value, bool requires_grad = false) {
        return Tensor(Shape{}, std::vector<Real>{value}, requires_grad);
    }

    const Shape& shape() const noexcept { return node_->shape; }
    std::size_t rank() const noexcept { return node_->shape.size(); }
    std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
    std::size_t numel() const noexcept { return node_->values.size(); }

    std::span<const Real> values() const noexcept { return node_->values; }
    std::span<Real> mutable_values() noexcept { return node_->values; }
    const std::vector<Real>& data() const noexcept { return node_->values; }

    Real item() const {
        if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
        return node_->values[0];
    }

    bool requires_grad() const noexcept { return node_->requires_grad; }
    void set_requires_grad(bool on) noexcept { node_->requires_grad = on; }

    bool has_grad() const noexcept { return node_->grad.size() == node_->values.size() && numel() > 0; }

    /// Gradient buffer, allocated (zeroed) on first access.
    std::span<Real> grad() {
        node_->ensure_grad();
        return node_->grad;
    }
    std::span<const Real> grad() const {
        node_->ensure_grad();
        return node_->grad;
    }

    void zero_grad() {
        if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), Real(0));
    }

    void release_grad() {
        node_->grad.clear();
        node_->grad.shrink_to_fit();
    }

    /// Same values, no graph history.
    Tensor detach() const { return Tensor(shape(), node_->values, false); }
    Tensor clone() const { return Tensor(shape(), node_->values, requires_grad()); }

    bool same_storage(const Tensor& other) const noexcept { return node_ == other.node_; }

    /// Reverse sweep from a scalar output. Leaf grads accumulate; intermediate
    /// grads are released after their backward function runs.
    void backward() {
        if (numel() != 1) {
            throw DimensionError("backward() needs a scalar output, got shape " + shape_str(shape()));
        }
        if (!requires_grad()) return;
        std::vector<Node*> order;
        std::unordered_set<const Node*> seen;
        topo_sort(node_.get(), order, seen);
        node_->ensure_grad();
        node_->grad[0] += Real(1);
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            Node* n = *it;
            if (!n->backward) continue;
            if (n->grad.size() != n->values.size()) continue;
            for (auto& p : n->parents) {
                if (p->requires_grad) p->ensure_grad();
            }
            n->backward(*n);
            if (n != node_.get()) {
                n->grad.clear();
                n->grad.shrink_to_fit();
            }
        }
    }

    /// Builds an op result; records the graph edge when grad mode is on and any parent needs grad.
    static Tensor make_result(Shape shape, std::vector<Real> values, std::vector<Tensor> parents,
                              std::function<void(const Node&)> backward_fn) {
        Tensor out(std::move(shape), std::move(values), false);
        if (!grad_enabled()) return out;
        const bool any = std::any_of(parents.begin(), parents.end(),
                                     [](const Tensor& p) { return p.requires_grad(); });
        if (!any) return out;
        out.node_->requires_grad = true;
        out.node_->parents.reserve(parents.size());
        for (auto& p : parents) out.node_->parents.push_back(p.node_);
        out.node_->backward = std::move(backward_fn);
        return out;
    }

    /// Grad span for use inside backward functions; nullptr-equivalent empty span when not tracked.
    std::span<Real> grad_if_tracked() const {
        if (!node_->requires_grad) return {};
        node_->ensure_grad();
        return node_->grad;
    }

private:
    static void topo_sort(Node* root, std::vector<Node*>& order, std::unordered_set<const Node*>& seen) {
        // Iterative DFS: GRU unrolls make the graph deep enough to matter.
        std::vector<std::pair<Node*, std::size_t>> stack;
        stack.emplace_back(root, 0);
        seen.insert(root);
        while (!stack.empty()) {
            auto& [n, next] = stack.back();
            if (next < n->parents.size()) {
                Node* p = n->parents[next++].get();
                if (p->requires_grad && !seen.count(p)) {
                    seen.insert(p);
                    stack.emplace_back(p, 0);
                }
            } else {
                order.push_back(n);
                stack.pop_back();
            }
        }
    }

    std::shared_ptr<Node> node_;
};

/// A named tensor owned by a model. Frozen parameters never change under an optimizer.
template <class Real>
struct Parameter {
    std::string name;
    Tensor<Real> tensor;
    bool trainable = true;
};

template <class Real>
bool all_finite(std::span<const Real> xs) {
    return std::all_of(xs.begin(), xs.end(), [](Real v) { return std::isfinite(v); });
}

} // namespace wetsam
