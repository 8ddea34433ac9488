#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "physiowave/rng.hpp"
#include "physiowave/tensor.hpp"

namespace pwv {

// Reverse-mode graph node. Ops allocate one node per result; the backward
// closure reads this node's grad and accumulates (+=) into parent grads.
template <typename T>
struct Node {
    Tensor<T> value;
    Tensor<T> grad;  // same shape as value; empty when needs_grad is false
    bool needs_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backprop;

    explicit Node(Tensor<T> v) : value(std::move(v)) {}
};

// Cheap handle into the graph. Expression DAGs are owned by the root handle;
// parameter leaves outlive any graph they participate in.
template <typename T>
class Var {
public:
    Var() = default;
    explicit Var(std::shared_ptr<Node<T>> n) : node_(std::move(n)) {}

    static Var leaf(Tensor<T> value, bool needs_grad = true) {
        auto n = std::make_shared<Node<T>>(std::move(value));
        n->needs_grad = needs_grad;
        if (needs_grad) n->grad = Tensor<T>(n->value.shape);
        return Var(std::move(n));
    }

    static Var constant(Tensor<T> value) { return leaf(std::move(value), false); }

    bool valid() const { return node_ != nullptr; }
    const Tensor<T>& value() const { return node_->value; }
    Tensor<T>& value() { return node_->value; }
    Tensor<T>& grad() { return node_->grad; }
    const Tensor<T>& grad() const { return node_->grad; }
    bool needs_grad() const { return node_->needs_grad; }
    const std::shared_ptr<Node<T>>& node() const { return node_; }

    T item() const {
        if (node_->value.size() != 1) throw ShapeError("item() on non-scalar " + node_->value.shape_str());
        return node_->value[0];
    }

private:
    std::shared_ptr<Node<T>> node_;
};

// Allocates the result node of an op. `back` runs during the reverse sweep.
template <typename T>
Var<T> make_op(const char* name, Tensor<T> value, std::vector<Var<T>> inputs,
               std::function<void(Node<T>&)> back) {
    require_finite(value, name);
    auto n = std::make_shared<Node<T>>(std::move(value));
    for (auto& in : inputs) {
        if (in.node()->needs_grad) n->needs_grad = true;
        n->parents.push_back(in.node());
    }
    if (n->needs_grad) {
        n->grad = Tensor<T>(n->value.shape);
        n->backprop = std::move(back);
    }
    return Var<T>(std::move(n));
}

// Reverse sweep from a scalar root. Parameter grads accumulate across the
// sweep; callers zero them explicitly at step start.
template <typename T>
void backward(const Var<T>& root) {
    if (root.value().size() != 1) throw ShapeError("backward() root must be scalar");
    if (!root.node()->needs_grad) return;

    std::vector<Node<T>*> topo;
    std::unordered_set<Node<T>*> seen;
    std::vector<std::pair<Node<T>*, std::size_t>> stack;
    stack.push_back({root.node().get(), 0});
    seen.insert(root.node().get());
    while (!stack.empty()) {
        auto& [n, idx] = stack.back();
        if (idx < n->parents.size()) {
            Node<T>* p = n->parents[idx++].get();
            if (p->needs_grad && !seen.count(p)) {
                seen.insert(p);
                stack.push_back({p, 0});
            }
        } else {
            topo.push_back(n);
            stack.pop_back();
        }
    }

    root.node()->grad[0] += T(1);
    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
        Node<T>* n = *it;
        if (n->backprop) n->backprop(*n);
    }
}

// Learnable quantity: a persistent leaf with a gradient accumulator.
template <typename T>
struct Parameter {
    std::string name;
    Var<T> var;
    bool trainable = true;

    Parameter() = default;
    Parameter(std::string nm, Tensor<T> value, bool train = true)
        : name(std::move(nm)), var(Var<T>::leaf(std::move(value))), trainable(train) {}

    Tensor<T>& value() { return var.value(); }
    const Tensor<T>& value() const { return var.value(); }
    Tensor<T>& grad() { return var.grad(); }
    const Tensor<T>& grad() const { return var.grad(); }
    std::size_t size() const { return var.value().size(); }
    void zero_grad() { var.grad().fill(T(0)); }
};

namespace detail {

template <typename T>
Tensor<T> xavier(std::vector<std::size_t> shape, Rng& rng) {
    Tensor<T> t(shape);
    double fan_in = static_cast<double>(shape[0]);
    double fan_out = static_cast<double>(shape.size() > 1 ? shape[1] : shape[0]);
    double bound = std::sqrt(6.0 / (fan_in + fan_out));
    for (auto& v : t.data) v = T(rng.uniform(-bound, bound));
    return t;
}

}  // namespace detail

// Central-difference gradient verification. Builds the graph via `fn` once
// for the analytic sweep and twice per probed coordinate. Returns the
// maximum relative error over the sampled coordinates; the floor in the
// denominator keeps near-zero coordinates from drowning real defects.
template <typename T>
double grad_check(const std::function<Var<T>(const std::vector<Var<T>>&)>& fn,
                  std::vector<Var<T>> inputs, std::size_t max_coords_per_input = 64,
                  double eps = 1e-5, std::uint64_t seed = 0x9d5f) {
    for (auto& in : inputs) in.grad().fill(T(0));
    Var<T> out = fn(inputs);
    if (!out.value().all_finite()) throw NumericError("grad_check: non-finite forward value");
    backward(out);

    Rng rng(seed);
    double worst = 0.0;
    for (auto& in : inputs) {
        std::size_t n = in.value().size();
        std::vector<std::size_t> coords;
        if (n <= max_coords_per_input) {
            coords.resize(n);
            for (std::size_t i = 0; i < n; ++i) coords[i] = i;
        } else {
            for (std::size_t i = 0; i < max_coords_per_input; ++i) coords.push_back(rng.below(n));
        }
        for (std::size_t c : coords) {
            T keep = in.value()[c];
            in.value()[c] = keep + T(eps);
            double fp = static_cast<double>(fn(inputs).item());
            in.value()[c] = keep - T(eps);
            double fm = static_cast<double>(fn(inputs).item());
            in.value()[c] = keep;
            double fd = (fp - fm) / (2.0 * eps);
            double an = static_cast<double>(in.grad()[c]);
            double rel = std::fabs(fd - an) / std::max({std::fabs(fd), std::fabs(an), 1e-2});
            worst = std::max(worst, rel);
        }
    }
    return worst;
}

}  // namespace pwv
