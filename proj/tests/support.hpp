#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "pointsd/core/autograd.hpp"
#include "pointsd/core/ops.hpp"
#include "pointsd/config.hpp"
#include "pointsd/diffusion.hpp"
#include "pointsd/encoders.hpp"

namespace pointsd::testing {

using GraphD = ag::Graph<double>;
using VarD = ag::Var<double>;

struct GradCheck {
    double max_rel = 0;
    std::string worst;
    std::size_t checked = 0;
};

/// |a - n| / max(|a|, |n|, floor); the floor keeps near-zero entries from
/// turning round-off into large ratios.
inline double rel_error(double a, double n, double floor = 1e-7) {
    return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

inline Tensor<double> random_tensor(const Shape& shape, Rng& rng, double scale = 1.0) {
    Tensor<double> t(shape);
    for (auto& v : t.storage()) v = scale * rng.normal();
    return t;
}

/// Central differences against analytic gradients for every listed parameter.
inline GradCheck check_param_grads(nn::ParameterStore<double>& store, const std::vector<std::string>& names,
                                   const std::function<VarD(GraphD&)>& loss, double h = 1e-6) {
    for (auto& p : store) p->trainable = std::find(names.begin(), names.end(), p->name) != names.end();
    GraphD g(true);
    auto root = loss(g);
    g.backward(root);
    GradCheck out;
    for (const auto& name : names) {
        auto& p = store.at(name);
        const auto* grad = g.grad_of(p);
        for (std::size_t i = 0; i < p.value.size(); ++i) {
            const double a = grad ? (*grad)[i] : 0.0;
            const double orig = p.value[i];
            p.value[i] = orig + h;
            GraphD gp(false);
            const double lp = loss(gp)->val()[0];
            p.value[i] = orig - h;
            GraphD gm(false);
            const double lm = loss(gm)->val()[0];
            p.value[i] = orig;
            const double e = rel_error(a, (lp - lm) / (2 * h));
            if (e > out.max_rel) {
                out.max_rel = e;
                out.worst = name + "[" + std::to_string(i) + "]";
            }
            ++out.checked;
        }
    }
    return out;
}

/// Same check for differentiable leaf inputs of an op.
inline GradCheck check_input_grads(std::vector<Tensor<double>> inputs,
                                   const std::function<VarD(GraphD&, const std::vector<VarD>&)>& fn, double h = 1e-6) {
    GraphD g(true);
    std::vector<VarD> leaves;
    for (const auto& t : inputs) leaves.push_back(g.leaf(t));
    auto root = fn(g, leaves);
    g.backward(root);
    GradCheck out;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        for (std::size_t i = 0; i < inputs[k].size(); ++i) {
            const double a = leaves[k]->has_grad() ? leaves[k]->grad[i] : 0.0;
            const double orig = inputs[k][i];
            const auto eval = [&](double v) {
                inputs[k][i] = v;
                GraphD ge(false);
                std::vector<VarD> ls;
                for (const auto& t : inputs) ls.push_back(ge.constant(t));
                return fn(ge, ls)->val()[0];
            };
            const double lp = eval(orig + h), lm = eval(orig - h);
            inputs[k][i] = orig;
            const double e = rel_error(a, (lp - lm) / (2 * h));
            if (e > out.max_rel) {
                out.max_rel = e;
                out.worst = "input" + std::to_string(k) + "[" + std::to_string(i) + "]";
            }
            ++out.checked;
        }
    }
    return out;
}

/// Weighted sum with fixed random weights, so every output element matters.
inline VarD weighted_sum(GraphD& g, const VarD& x, std::uint64_t seed = 99) {
    Rng rng(seed);
    return ops::sum(g, ops::mul(g, x, g.constant(random_tensor(x->shape(), rng))));
}

/// Smallest configuration with two resolution levels: 4x4 images, 2 condition tokens.
inline diffusion::UNetSpec toy_unet_spec() {
    diffusion::UNetSpec s;
    s.in_channels = 1;
    s.widths = {8, 16};
    s.groups = 4;
    s.d_attn = 4;
    s.d_cond = 6;
    s.time_dim = 8;
    s.time_freq_dim = 4;
    return s;
}

inline encoders::EncoderSpec toy_encoder_spec() {
    encoders::EncoderSpec e;
    e.d_model = 8;
    e.depth = 1;
    e.heads = 2;
    e.point_hidden = 6;
    e.point_feature = 8;
    e.pos_hidden = 8;
    e.d_cond = 6;
    return e;
}

/// Settings for a pipeline that trains in seconds: 3 categories, 8x8 views, 4 patches.
inline std::vector<std::string> tiny_overrides() {
    return {"run.seed=5", "run.threads=1", "run.test_mode=true",
            "data.categories=sphere,box,torus", "data.samples_per_category=10", "data.points=64",
            "data.views=2", "data.height=8", "data.width=8",
            "patch.groups=4", "patch.group_size=8",
            "diffusion.T=50", "stage1.t_min=25", "stage1.t_max=50",
            "unet.widths=8,16", "unet.groups=4", "unet.d_attn=8", "unet.d_cond=8", "unet.time_dim=16",
            "encoder.d_model=8", "encoder.depth=1", "encoder.heads=2",
            "projector.d_proj=8", "projector.depth=1", "projector.heads=2",
            "stage0.epochs=2", "stage0.warmup_epochs=0", "stage0.batch_size=8",
            "stage1.epochs=1", "stage1.warmup_epochs=0", "stage1.batch_size=8",
            "stage2.epochs=2", "stage2.warmup_epochs=0", "stage2.batch_size=8",
            "probe.epochs=20", "probe.batch_size=8",
            "finetune.epochs=1", "finetune.warmup_epochs=0", "finetune.batch_size=8",
            "fewshot.n=3", "fewshot.k=2", "fewshot.test_per_class=3", "fewshot.runs=2"};
}

inline config::RunConfig tiny_config(std::vector<std::string> extra = {}) {
    auto o = tiny_overrides();
    o.insert(o.end(), extra.begin(), extra.end());
    return config::parse_config("", o);
}

}  // namespace pointsd::testing
