#pragma once

#include <functional>
#include <memory>
#include <stdexcept>
#include <unordered_map>
#include <utility>
#include <vector>

#include "pointsd/core/tensor.hpp"
#include "pointsd/nn/parameters.hpp"

namespace pointsd::ag {

template <class T>
struct Node {
    Tensor<T> value;
    const Tensor<T>* ref = nullptr;  // parameter alias; value stays empty
    Tensor<T> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;

    const Tensor<T>& val() const noexcept { return ref ? *ref : value; }
    const Shape& shape() const noexcept { return val().shape(); }
    bool has_grad() const noexcept { return !grad.empty(); }
    Tensor<T>& grad_ref() {
        if (grad.size() != val().size()) grad = Tensor<T>(val().shape());
        return grad;
    }
};

template <class T>
using Var = std::shared_ptr<Node<T>>;

/// Reverse-mode tape for one forward pass. A graph is single-threaded; parallel
/// training runs one graph per sample and reads parameters through const aliases.
template <class T>
class Graph {
public:
    explicit Graph(bool grad_enabled = true) : enabled_(grad_enabled) {}
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    bool grad_enabled() const noexcept { return enabled_; }

    Var<T> constant(Tensor<T> v) {
        auto n = std::make_shared<Node<T>>();
        n->value = std::move(v);
        return n;
    }

    /// Leaf that can be differentiated against (used by gradient checks).
    Var<T> leaf(Tensor<T> v, bool requires_grad = true) {
        auto n = constant(std::move(v));
        n->requires_grad = enabled_ && requires_grad;
        return n;
    }

    Var<T> param(const nn::Parameter<T>& p) {
        if (auto it = cache_.find(&p); it != cache_.end()) return it->second;
        auto n = std::make_shared<Node<T>>();
        n->ref = &p.value;
        n->requires_grad = enabled_ && p.trainable;
        cache_.emplace(&p, n);
        params_.emplace_back(&p, n);
        return n;
    }

    Var<T> record(Tensor<T> value, std::vector<Var<T>> parents, std::function<void(Node<T>&)> backward) {
        auto n = std::make_shared<Node<T>>();
        n->value = std::move(value);
        if (!enabled_) return n;
        bool needs = false;
        for (const auto& p : parents) needs = needs || p->requires_grad;
        if (!needs) return n;
        n->requires_grad = true;
        n->parents = std::move(parents);
        n->backward = std::move(backward);
        tape_.push_back(n);
        return n;
    }

    /// Seeds d(root)/d(root) = seed elementwise and runs the tape in reverse.
    void backward(const Var<T>& root, T seed = T{1}) {
        if (!root->requires_grad) throw std::logic_error("Graph::backward: root does not require grad");
        root->grad_ref().fill(seed);
        for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) {
            Node<T>& n = **it;
            if (n.has_grad()) n.backward(n);
        }
    }

    /// Adds each trainable parameter's gradient into the matching slot of `out`;
    /// parameters bound from other stores are skipped.
    void accumulate(const nn::ParameterStore<T>& store, nn::GradientSet<T>& out) const {
        for (const auto& [p, node] : params_) {
            if (!node->requires_grad || !node->has_grad() || !store.owns(p)) continue;
            out.grads[store.index_of(p)] += node->grad;
        }
    }

    /// Gradient of a bound parameter, or nullptr if it received none.
    const Tensor<T>* grad_of(const nn::Parameter<T>& p) const {
        auto it = cache_.find(&p);
        if (it == cache_.end() || !it->second->has_grad()) return nullptr;
        return &it->second->grad;
    }

private:
    bool enabled_;
    std::vector<Var<T>> tape_;
    std::vector<std::pair<const nn::Parameter<T>*, Var<T>>> params_;
    std::unordered_map<const nn::Parameter<T>*, Var<T>> cache_;
};

}  // namespace pointsd::ag
