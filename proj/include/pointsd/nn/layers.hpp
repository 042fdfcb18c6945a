#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "pointsd/core/ops.hpp"
#include "pointsd/nn/parameters.hpp"

namespace pointsd::nn {

using ag::Graph;
using ag::Var;

enum class Activation { Gelu, Silu, Relu };

template <class T>
Var<T> activate(Graph<T>& g, const Var<T>& x, Activation a) {
    switch (a) {
        case Activation::Gelu: return ops::gelu(g, x);
        case Activation::Silu: return ops::silu(g, x);
        case Activation::Relu: return ops::relu(g, x);
    }
    return x;
}

/// y = x W + b with W stored [in, out].
template <class T>
struct Linear {
    Parameter<T>* weight = nullptr;
    Parameter<T>* bias = nullptr;

    Linear() = default;
    Linear(ParameterStore<T>& store, const std::string& name, std::size_t in, std::size_t out, bool with_bias = true) {
        weight = store.add(name + ".weight", {in, out}, Init::FanIn, in);
        if (with_bias) bias = store.add(name + ".bias", {out}, Init::FanIn, in);
    }

    std::size_t in_features() const { return weight->value.dim(0); }
    std::size_t out_features() const { return weight->value.dim(1); }

    Var<T> operator()(Graph<T>& g, const Var<T>& x) const {
        auto y = ops::matmul(g, x, g.param(*weight));
        return bias ? ops::add_row_vector(g, y, g.param(*bias)) : y;
    }
};

template <class T>
struct LayerNorm {
    Parameter<T>* gamma = nullptr;
    Parameter<T>* beta = nullptr;

    LayerNorm() = default;
    LayerNorm(ParameterStore<T>& store, const std::string& name, std::size_t dim) {
        gamma = store.add(name + ".gamma", {dim}, Init::Ones);
        beta = store.add(name + ".beta", {dim}, Init::Zeros);
    }
    Var<T> operator()(Graph<T>& g, const Var<T>& x) const {
        return ops::layer_norm(g, x, g.param(*gamma), g.param(*beta));
    }
};

template <class T>
struct GroupNorm {
    Parameter<T>* gamma = nullptr;
    Parameter<T>* beta = nullptr;
    std::size_t groups = 8;

    GroupNorm() = default;
    GroupNorm(ParameterStore<T>& store, const std::string& name, std::size_t channels, std::size_t num_groups)
        : groups(num_groups) {
        if (channels % num_groups != 0) {
            throw std::invalid_argument(name + ": " + std::to_string(channels) + " channels not divisible by " +
                                        std::to_string(num_groups) + " groups");
        }
        gamma = store.add(name + ".gamma", {channels}, Init::Ones);
        beta = store.add(name + ".beta", {channels}, Init::Zeros);
    }
    Var<T> operator()(Graph<T>& g, const Var<T>& x) const {
        return ops::group_norm(g, x, groups, g.param(*gamma), g.param(*beta));
    }
};

template <class T>
struct Conv2d {
    Parameter<T>* weight = nullptr;
    Parameter<T>* bias = nullptr;
    std::size_t stride = 1;
    std::size_t pad = 1;

    Conv2d() = default;
    Conv2d(ParameterStore<T>& store, const std::string& name, std::size_t in, std::size_t out, std::size_t kernel,
           std::size_t stride_ = 1)
        : stride(stride_), pad(kernel / 2) {
        weight = store.add(name + ".weight", {out, in, kernel, kernel}, Init::FanIn, in * kernel * kernel);
        bias = store.add(name + ".bias", {out}, Init::FanIn, in * kernel * kernel);
    }
    Var<T> operator()(Graph<T>& g, const Var<T>& x) const {
        return ops::conv2d(g, x, g.param(*weight), g.param(*bias), stride, pad);
    }
};

template <class T>
struct Mlp {
    Linear<T> fc1, fc2;
    Activation act = Activation::Gelu;

    Mlp() = default;
    Mlp(ParameterStore<T>& store, const std::string& name, std::size_t in, std::size_t hidden, std::size_t out,
        Activation a = Activation::Gelu)
        : fc1(store, name + ".fc1", in, hidden), fc2(store, name + ".fc2", hidden, out), act(a) {}
    Var<T> operator()(Graph<T>& g, const Var<T>& x) const { return fc2(g, activate(g, fc1(g, x), act)); }
};

/// Multi-head self-attention over tokens x[n, d]; no positional terms, so the
/// layer is equivariant to token permutations.
template <class T>
struct SelfAttention {
    Linear<T> qkv, proj;
    std::size_t heads = 1;

    SelfAttention() = default;
    SelfAttention(ParameterStore<T>& store, const std::string& name, std::size_t dim, std::size_t num_heads)
        : qkv(store, name + ".qkv", dim, 3 * dim), proj(store, name + ".proj", dim, dim), heads(num_heads) {
        if (dim % num_heads != 0) {
            throw std::invalid_argument(name + ": width " + std::to_string(dim) + " not divisible by " +
                                        std::to_string(num_heads) + " heads");
        }
    }

    Var<T> operator()(Graph<T>& g, const Var<T>& x) const {
        const std::size_t d = proj.in_features();
        const std::size_t dh = d / heads;
        const T scale = T{1} / std::sqrt(static_cast<T>(dh));
        auto packed = qkv(g, x);
        std::vector<Var<T>> outs;
        outs.reserve(heads);
        for (std::size_t h = 0; h < heads; ++h) {
            auto q = ops::slice_cols(g, packed, h * dh, dh);
            auto k = ops::slice_cols(g, packed, d + h * dh, dh);
            auto v = ops::slice_cols(g, packed, 2 * d + h * dh, dh);
            auto a = ops::softmax_rows(g, ops::scale(g, ops::matmul(g, q, k, false, true), scale));
            outs.push_back(ops::matmul(g, a, v));
        }
        return proj(g, heads == 1 ? outs[0] : ops::concat_cols(g, outs));
    }
};

/// Pre-norm transformer block.
template <class T>
struct TransformerBlock {
    LayerNorm<T> norm1, norm2;
    SelfAttention<T> attn;
    Mlp<T> mlp;

    TransformerBlock() = default;
    TransformerBlock(ParameterStore<T>& store, const std::string& name, std::size_t dim, std::size_t heads,
                     std::size_t mlp_ratio = 4)
        : norm1(store, name + ".norm1", dim),
          norm2(store, name + ".norm2", dim),
          attn(store, name + ".attn", dim, heads),
          mlp(store, name + ".mlp", dim, mlp_ratio * dim, dim) {}

    Var<T> operator()(Graph<T>& g, Var<T> x) const {
        x = ops::add(g, x, attn(g, norm1(g, x)));
        return ops::add(g, x, mlp(g, norm2(g, x)));
    }
};

template <class T>
struct Transformer {
    std::vector<TransformerBlock<T>> blocks;
    LayerNorm<T> norm;

    Transformer() = default;
    Transformer(ParameterStore<T>& store, const std::string& name, std::size_t dim, std::size_t depth,
                std::size_t heads) {
        for (std::size_t i = 0; i < depth; ++i)
            blocks.emplace_back(store, name + ".block" + std::to_string(i), dim, heads);
        norm = LayerNorm<T>(store, name + ".norm", dim);
    }
    Var<T> operator()(Graph<T>& g, Var<T> x) const {
        for (const auto& b : blocks) x = b(g, x);
        return norm(g, x);
    }
};

}  // namespace pointsd::nn
