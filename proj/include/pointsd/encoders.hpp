#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "pointsd/core/ops.hpp"
#include "pointsd/geometry.hpp"
#include "pointsd/nn/layers.hpp"

// Point-cloud networks: the patch tokenizer shared by the condition encoder g and
// the backbone f, the projector s and the alignment loss.
namespace pointsd::encoders {

using ag::Graph;
using ag::Var;
using geometry::PatchSet;

struct EncoderSpec {
    std::size_t d_model = 96;
    std::size_t depth = 4;
    std::size_t heads = 4;
    std::size_t point_hidden = 64;   // pointwise MLP hidden width
    std::size_t point_feature = 128; // width before max-pooling
    std::size_t pos_hidden = 128;
    std::size_t d_cond = 64;
};

struct ProjectorSpec {
    std::size_t d_proj = 192;
    std::size_t depth = 3;
    std::size_t heads = 4;
    std::size_t out_dim = 128;
};

/// [G*m, 3] relative coordinates followed by [G, 3] centers.
template <class T>
Tensor<T> group_tensor(const PatchSet& ps) {
    Tensor<T> out({ps.groups.size(), 3});
    for (std::size_t i = 0; i < ps.groups.size(); ++i)
        for (std::size_t k = 0; k < 3; ++k) out(i, k) = static_cast<T>(ps.groups[i][k]);
    return out;
}
template <class T>
Tensor<T> center_tensor(const PatchSet& ps) {
    Tensor<T> out({ps.centers.size(), 3});
    for (std::size_t i = 0; i < ps.centers.size(); ++i)
        for (std::size_t k = 0; k < 3; ++k) out(i, k) = static_cast<T>(ps.centers[i][k]);
    return out;
}

/// Mini-PointNet patch embedding: shared pointwise MLP, max-pool per group, then a
/// linear map to d_model, plus a learned positional MLP on the group center.
template <class T>
struct PatchTokenizer {
    nn::Linear<T> point1, point2, embed;
    nn::Mlp<T> pos;

    PatchTokenizer() = default;
    PatchTokenizer(nn::ParameterStore<T>& store, const std::string& name, const EncoderSpec& spec)
        : point1(store, name + ".point1", 3, spec.point_hidden),
          point2(store, name + ".point2", spec.point_hidden, spec.point_feature),
          embed(store, name + ".embed", spec.point_feature, spec.d_model),
          pos(store, name + ".pos", 3, spec.pos_hidden, spec.d_model) {}

    /// Group term only, [G, d_model].
    Var<T> content(Graph<T>& g, const PatchSet& ps) const {
        if (ps.group_size == 0 || ps.groups.size() != ps.num_groups() * ps.group_size) {
            throw std::invalid_argument("PatchTokenizer: malformed patch set");
        }
        auto h = ops::gelu(g, point1(g, g.constant(group_tensor<T>(ps))));
        h = point2(g, h);
        return embed(g, ops::group_max_rows(g, h, ps.group_size));
    }
    /// Positional term only, [G, d_model].
    Var<T> position(Graph<T>& g, const PatchSet& ps) const { return pos(g, g.constant(center_tensor<T>(ps))); }

    Var<T> operator()(Graph<T>& g, const PatchSet& ps) const {
        return ops::add(g, content(g, ps), position(g, ps));
    }
};

/// Tokenizer followed by a transformer; shared trunk of g and f.
template <class T>
struct PointTransformer {
    PatchTokenizer<T> tokenizer;
    nn::Transformer<T> transformer;

    PointTransformer() = default;
    PointTransformer(nn::ParameterStore<T>& store, const std::string& name, const EncoderSpec& spec)
        : tokenizer(store, name + ".tokenizer", spec),
          transformer(store, name + ".transformer", spec.d_model, spec.depth, spec.heads) {}

    Var<T> operator()(Graph<T>& g, const PatchSet& ps) const { return transformer(g, tokenizer(g, ps)); }
};

/// g: patch tokens -> condition tokens [G, d_cond].
template <class T>
struct ConditionEncoder {
    PointTransformer<T> trunk;
    nn::Linear<T> head;

    ConditionEncoder() = default;
    ConditionEncoder(nn::ParameterStore<T>& store, const std::string& name, const EncoderSpec& spec)
        : trunk(store, name, spec), head(store, name + ".cond_proj", spec.d_model, spec.d_cond) {}

    Var<T> operator()(Graph<T>& g, const PatchSet& ps) const { return head(g, trunk(g, ps)); }

    /// Pooled trunk features, for probing g as a backbone.
    Var<T> pooled(Graph<T>& g, const PatchSet& ps) const {
        auto tokens = trunk(g, ps);
        return ops::concat_cols(g, {ops::mean_rows(g, tokens), ops::group_max_rows(g, tokens, tokens->val().rows())});
    }
};

/// f: patch tokens [G, d_model] and pooled summary concat(mean, max) [1, 2 d_model].
template <class T>
struct Backbone {
    PointTransformer<T> trunk;

    struct Output {
        Var<T> tokens;
        Var<T> pooled;
    };

    Backbone() = default;
    Backbone(nn::ParameterStore<T>& store, const std::string& name, const EncoderSpec& spec)
        : trunk(store, name, spec) {}

    Output operator()(Graph<T>& g, const PatchSet& ps) const {
        Output out;
        out.tokens = trunk(g, ps);
        const std::size_t G = out.tokens->val().rows();
        out.pooled = ops::concat_cols(g, {ops::mean_rows(g, out.tokens), ops::group_max_rows(g, out.tokens, G)});
        return out;
    }
};

/// s: transformer over backbone tokens, mean-pooled and mapped to the diffusion tap width.
template <class T>
struct Projector {
    nn::Linear<T> in;
    nn::Transformer<T> transformer;
    nn::Linear<T> out;

    Projector() = default;
    Projector(nn::ParameterStore<T>& store, const std::string& name, std::size_t d_model, const ProjectorSpec& spec)
        : in(store, name + ".in", d_model, spec.d_proj),
          transformer(store, name + ".transformer", spec.d_proj, spec.depth, spec.heads),
          out(store, name + ".out", spec.d_proj, spec.out_dim) {}

    std::size_t out_dim() const { return out.out_features(); }

    /// [1, out_dim]
    Var<T> operator()(Graph<T>& g, const Var<T>& tokens) const {
        return out(g, ops::mean_rows(g, transformer(g, in(g, tokens))));
    }
    /// [G, out_dim], one projection per token.
    Var<T> per_token(Graph<T>& g, const Var<T>& tokens) const { return out(g, transformer(g, in(g, tokens))); }
};

/// Squared L2 distance between the projection and a constant target; the target
/// never receives gradient.
template <class T>
Var<T> alignment_loss(Graph<T>& g, const Var<T>& projection, const std::vector<T>& target) {
    if (projection->val().size() != target.size()) {
        throw std::invalid_argument("alignment_loss: projection has " + std::to_string(projection->val().size()) +
                                    " values, target has " + std::to_string(target.size()));
    }
    return ops::squared_distance(g, projection, g.constant(Tensor<T>({target.size()}, target)));
}

}  // namespace pointsd::encoders
