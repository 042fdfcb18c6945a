#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "pointsd/core/ops.hpp"
#include "pointsd/core/rng.hpp"
#include "pointsd/nn/layers.hpp"

// Miniature conditional denoising-diffusion model in pixel space: linear noise
// schedule, closed-form forward process, a UNet whose every resolution level
// carries one cross-attention layer, and intermediate feature taps.
namespace pointsd::diffusion {

using ag::Graph;
using ag::Var;

// ---------------------------------------------------------------------------
// Noise schedule

/// Linear beta schedule indexed by step t in [1, T]; t = 0 is the clean sample.
struct NoiseSchedule {
    std::size_t T = 0;
    std::vector<double> beta;       // beta[t - 1]
    std::vector<double> alpha;      // 1 - beta
    std::vector<double> alpha_bar;  // prod_{i <= t} alpha_i

    double alpha_bar_at(std::size_t t) const {
        if (t == 0) return 1.0;
        if (t > T) throw std::out_of_range("NoiseSchedule: step " + std::to_string(t) + " beyond T = " + std::to_string(T));
        return alpha_bar[t - 1];
    }
    double beta_at(std::size_t t) const { return beta.at(t - 1); }
    double alpha_at(std::size_t t) const { return alpha.at(t - 1); }
};

inline NoiseSchedule build_noise_schedule(std::size_t T, double beta_start, double beta_end) {
    if (T < 1) throw std::invalid_argument("build_noise_schedule: T must be >= 1");
    if (!(beta_start > 0.0 && beta_start < beta_end && beta_end < 1.0)) {
        throw std::invalid_argument("build_noise_schedule: need 0 < beta_start < beta_end < 1");
    }
    NoiseSchedule s;
    s.T = T;
    s.beta.resize(T);
    s.alpha.resize(T);
    s.alpha_bar.resize(T);
    double prod = 1.0;
    for (std::size_t i = 0; i < T; ++i) {
        s.beta[i] = T == 1 ? beta_start
                           : beta_start + (beta_end - beta_start) * static_cast<double>(i) / static_cast<double>(T - 1);
        s.alpha[i] = 1.0 - s.beta[i];
        prod *= s.alpha[i];
        s.alpha_bar[i] = prod;
    }
    return s;
}

/// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps; t = 0 returns x0.
template <class T>
Tensor<T> forward_noise(const Tensor<T>& x0, std::size_t t, const Tensor<T>& eps, const NoiseSchedule& sched) {
    if (x0.shape() != eps.shape()) {
        throw std::invalid_argument("forward_noise: noise shape " + shape_string(eps.shape()) + " differs from image " +
                                    shape_string(x0.shape()));
    }
    if (t == 0) return x0;
    const double ab = sched.alpha_bar_at(t);
    const T a = static_cast<T>(std::sqrt(ab));
    const T b = static_cast<T>(std::sqrt(1.0 - ab));
    Tensor<T> out(x0.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * x0[i] + b * eps[i];
    return out;
}

// ---------------------------------------------------------------------------
// Cross-attention

/// softmax(Q K^T / sqrt(d)) V with Q = z Wq, K = c Wk, V = c Wv, d = key width.
template <class T>
Var<T> cross_attention(Graph<T>& g, const Var<T>& z, const Var<T>& c, const Var<T>& wq, const Var<T>& wk,
                       const Var<T>& wv) {
    const auto& Wq = wq->val();
    const auto& Wk = wk->val();
    if (Wq.rank() != 2 || Wk.rank() != 2 || wv->val().rank() != 2 || Wq.dim(1) != Wk.dim(1) ||
        z->val().cols() != Wq.dim(0) || c->val().cols() != Wk.dim(0) || c->val().cols() != wv->val().dim(0)) {
        throw std::invalid_argument("cross_attention: dimension mismatch (z " + shape_string(z->shape()) + ", c " +
                                    shape_string(c->shape()) + ", Wq " + shape_string(Wq.shape()) + ", Wk " +
                                    shape_string(Wk.shape()) + ", Wv " + shape_string(wv->shape()) + ")");
    }
    const T scale = T{1} / std::sqrt(static_cast<T>(Wk.dim(1)));
    auto q = ops::matmul(g, z, wq);
    auto k = ops::matmul(g, c, wk);
    auto v = ops::matmul(g, c, wv);
    auto attn = ops::softmax_rows(g, ops::scale(g, ops::matmul(g, q, k, false, true), scale));
    return ops::matmul(g, attn, v);
}

/// Residual cross-attention over the spatial positions of x[C, H, W].
template <class T>
struct CrossAttentionBlock {
    nn::GroupNorm<T> norm;
    nn::Parameter<T>* wq = nullptr;
    nn::Parameter<T>* wk = nullptr;
    nn::Parameter<T>* wv = nullptr;
    nn::Linear<T> out;

    CrossAttentionBlock() = default;
    CrossAttentionBlock(nn::ParameterStore<T>& store, const std::string& name, std::size_t channels,
                        std::size_t d_cond, std::size_t d_attn, std::size_t groups)
        : norm(store, name + ".norm", channels, groups) {
        wq = store.add(name + ".wq", {channels, d_attn}, nn::Init::FanIn, channels);
        wk = store.add(name + ".wk", {d_cond, d_attn}, nn::Init::FanIn, d_cond);
        wv = store.add(name + ".wv", {d_cond, d_attn}, nn::Init::FanIn, d_cond);
        out = nn::Linear<T>(store, name + ".out", d_attn, channels);
    }

    Var<T> operator()(Graph<T>& g, const Var<T>& x, const Var<T>& cond) const {
        const Shape shape = x->shape();
        const std::size_t C = shape[0], S = shape[1] * shape[2];
        auto z = ops::transpose(g, ops::reshape(g, norm(g, x), {C, S}));
        auto a = cross_attention(g, z, cond, g.param(*wq), g.param(*wk), g.param(*wv));
        auto o = ops::transpose(g, out(g, a));
        return ops::add(g, x, ops::reshape(g, o, shape));
    }
};

// ---------------------------------------------------------------------------
// UNet

struct UNetSpec {
    std::size_t in_channels = 1;
    std::vector<std::size_t> widths{32, 64, 128};
    std::size_t groups = 8;
    std::size_t d_attn = 64;
    std::size_t d_cond = 64;
    std::size_t time_dim = 128;
    std::size_t time_freq_dim = 32;

    std::size_t levels() const { return widths.size(); }
};

enum class Tap { DownLast, Mid, UpLast };

inline Tap parse_tap(const std::string& s) {
    if (s == "down_last" || s == "down") return Tap::DownLast;
    if (s == "mid") return Tap::Mid;
    if (s == "up_last" || s == "up") return Tap::UpLast;
    throw std::invalid_argument("unknown feature tap '" + s + "' (expected down_last, mid or up_last)");
}
inline const char* tap_name(Tap t) {
    switch (t) {
        case Tap::DownLast: return "down_last";
        case Tap::Mid: return "mid";
        case Tap::UpLast: return "up_last";
    }
    return "?";
}

/// Spatial positions x channels at one tap.
struct FeatureMap {
    Tensor<float> values;  // [S, C]
    Tap tap = Tap::DownLast;
    std::size_t height = 0;
    std::size_t width = 0;

    std::size_t positions() const { return values.dim(0); }
    std::size_t channels() const { return values.dim(1); }

    /// Spatial mean, one value per channel.
    std::vector<float> pooled() const {
        std::vector<double> acc(channels(), 0.0);
        for (std::size_t s = 0; s < positions(); ++s)
            for (std::size_t c = 0; c < channels(); ++c) acc[c] += values(s, c);
        std::vector<float> out(channels());
        for (std::size_t c = 0; c < channels(); ++c) out[c] = static_cast<float>(acc[c] / static_cast<double>(positions()));
        return out;
    }
};

/// Sinusoidal embedding [1, dim] of a (possibly zero) step.
template <class T>
Tensor<T> timestep_embedding(double t, std::size_t dim) {
    Tensor<T> out({1, dim});
    const std::size_t half = dim / 2;
    for (std::size_t i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
        out[i] = static_cast<T>(std::sin(t * freq));
        out[half + i] = static_cast<T>(std::cos(t * freq));
    }
    return out;
}

template <class T>
struct ResBlock {
    nn::GroupNorm<T> norm1, norm2;
    nn::Conv2d<T> conv1, conv2;
    nn::Linear<T> temb;
    std::optional<nn::Conv2d<T>> skip;

    ResBlock() = default;
    ResBlock(nn::ParameterStore<T>& store, const std::string& name, std::size_t in, std::size_t out,
             std::size_t time_dim, std::size_t groups)
        : norm1(store, name + ".norm1", in, groups),
          norm2(store, name + ".norm2", out, groups),
          conv1(store, name + ".conv1", in, out, 3),
          conv2(store, name + ".conv2", out, out, 3),
          temb(store, name + ".temb", time_dim, out) {
        if (in != out) skip.emplace(store, name + ".skip", in, out, 1);
    }

    Var<T> operator()(Graph<T>& g, const Var<T>& x, const Var<T>& t_emb) const {
        auto h = conv1(g, ops::silu(g, norm1(g, x)));
        h = ops::add_channel_vector(g, h, temb(g, ops::silu(g, t_emb)));
        h = conv2(g, ops::silu(g, norm2(g, h)));
        return ops::add(g, skip ? (*skip)(g, x) : x, h);
    }
};

template <class T>
class UNet {
public:
    struct Output {
        Var<T> eps;
        Var<T> down_last;
        Var<T> mid;
        Var<T> up_last;
    };

    UNet(nn::ParameterStore<T>& store, const UNetSpec& spec, const std::string& name = "unet") : spec_(spec) {
        const auto& w = spec.widths;
        if (w.empty()) throw std::invalid_argument("UNetSpec: at least one level required");
        time_mlp_ = nn::Mlp<T>(store, name + ".time", spec.time_freq_dim, spec.time_dim, spec.time_dim,
                               nn::Activation::Silu);
        conv_in_ = nn::Conv2d<T>(store, name + ".conv_in", spec.in_channels, w[0], 3);
        for (std::size_t i = 0; i < w.size(); ++i) {
            const std::string p = name + ".down" + std::to_string(i);
            down_.push_back({ResBlock<T>(store, p + ".res", i == 0 ? w[0] : w[i - 1], w[i], spec.time_dim, spec.groups),
                             CrossAttentionBlock<T>(store, p + ".xattn", w[i], spec.d_cond, spec.d_attn, spec.groups),
                             nn::Conv2d<T>(store, p + ".downsample", w[i], w[i], 3, 2)});
        }
        const std::size_t deep = w.back();
        mid_res_ = ResBlock<T>(store, name + ".mid.res", deep, deep, spec.time_dim, spec.groups);
        mid_attn_ = CrossAttentionBlock<T>(store, name + ".mid.xattn", deep, spec.d_cond, spec.d_attn, spec.groups);
        up_.resize(w.size());
        for (std::size_t i = w.size(); i-- > 0;) {
            const std::string p = name + ".up" + std::to_string(i);
            const std::size_t below = i + 1 == w.size() ? deep : w[i + 1];
            up_[i] = {ResBlock<T>(store, p + ".res", below + w[i], w[i], spec.time_dim, spec.groups),
                      CrossAttentionBlock<T>(store, p + ".xattn", w[i], spec.d_cond, spec.d_attn, spec.groups)};
        }
        norm_out_ = nn::GroupNorm<T>(store, name + ".norm_out", w[0], spec.groups);
        conv_out_ = nn::Conv2d<T>(store, name + ".conv_out", w[0], spec.in_channels, 3);
    }

    const UNetSpec& spec() const noexcept { return spec_; }

    /// Channel count of a tap.
    std::size_t tap_channels(Tap tap) const { return tap == Tap::UpLast ? spec_.widths.front() : spec_.widths.back(); }

    /// Runs the network, stopping after `stop_at` when given (eps is then null).
    Output forward(Graph<T>& g, const Var<T>& x, double t, const Var<T>& cond,
                   std::optional<Tap> stop_at = std::nullopt) const {
        const auto& shape = x->shape();
        const std::size_t div = std::size_t{1} << spec_.levels();
        if (shape.size() != 3 || shape[0] != spec_.in_channels || shape[1] % div != 0 || shape[2] % div != 0) {
            throw std::invalid_argument("UNet: input " + shape_string(shape) + " must be [" +
                                        std::to_string(spec_.in_channels) + ",H,W] with H, W divisible by " +
                                        std::to_string(div));
        }
        if (cond->val().rank() != 2 || cond->val().dim(1) != spec_.d_cond) {
            throw std::invalid_argument("UNet: condition tokens " + shape_string(cond->shape()) + " must be [K," +
                                        std::to_string(spec_.d_cond) + "]");
        }
        Output out;
        auto temb = time_mlp_(g, g.constant(timestep_embedding<T>(t, spec_.time_freq_dim)));
        auto h = conv_in_(g, x);
        std::vector<Var<T>> skips;
        for (const auto& lvl : down_) {
            h = lvl.res(g, h, temb);
            h = lvl.attn(g, h, cond);
            skips.push_back(h);
            h = lvl.down(g, h);
        }
        out.down_last = h;
        if (stop_at == Tap::DownLast) return out;
        h = mid_attn_(g, mid_res_(g, h, temb), cond);
        out.mid = h;
        if (stop_at == Tap::Mid) return out;
        for (std::size_t i = up_.size(); i-- > 0;) {
            h = ops::concat0(g, {ops::upsample2x(g, h), skips[i]});
            h = up_[i].res(g, h, temb);
            h = up_[i].attn(g, h, cond);
        }
        out.up_last = h;
        if (stop_at == Tap::UpLast) return out;
        out.eps = conv_out_(g, ops::silu(g, norm_out_(g, h)));
        return out;
    }

    /// Cross-attention layers in down, mid, up order.
    std::vector<const CrossAttentionBlock<T>*> cross_attention_layers() const {
        std::vector<const CrossAttentionBlock<T>*> out;
        for (const auto& l : down_) out.push_back(&l.attn);
        out.push_back(&mid_attn_);
        for (const auto& l : up_) out.push_back(&l.attn);
        return out;
    }

private:
    struct DownLevel {
        ResBlock<T> res;
        CrossAttentionBlock<T> attn;
        nn::Conv2d<T> down;
    };
    struct UpLevel {
        ResBlock<T> res;
        CrossAttentionBlock<T> attn;
    };

    UNetSpec spec_;
    nn::Mlp<T> time_mlp_;
    nn::Conv2d<T> conv_in_;
    std::vector<DownLevel> down_;
    ResBlock<T> mid_res_;
    CrossAttentionBlock<T> mid_attn_;
    std::vector<UpLevel> up_;
    nn::GroupNorm<T> norm_out_;
    nn::Conv2d<T> conv_out_;
};

/// Mean squared error between the injected noise and the predicted noise.
template <class T>
Var<T> denoising_loss(Graph<T>& g, const UNet<T>& model, const Tensor<T>& x0, std::size_t t, const Var<T>& cond,
                      const Tensor<T>& eps, const NoiseSchedule& sched) {
    auto xt = g.constant(forward_noise(x0, t, eps, sched));
    auto pred = model.forward(g, xt, static_cast<double>(t), cond).eps;
    return ops::mse(g, pred, g.constant(eps));
}

/// Converts a [C, h, w] activation into an [S, C] FeatureMap.
template <class T>
FeatureMap to_feature_map(const Tensor<T>& act, Tap tap) {
    const std::size_t C = act.dim(0), h = act.dim(1), w = act.dim(2), S = h * w;
    FeatureMap fm;
    fm.tap = tap;
    fm.height = h;
    fm.width = w;
    fm.values = Tensor<float>({S, C});
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t s = 0; s < S; ++s) fm.values(s, c) = static_cast<float>(act[c * S + s]);
    return fm;
}

/// One gradient-free forward pass on the clean image at step 0; returns the selected tap.
template <class T>
FeatureMap extract_features(const UNet<T>& model, const Tensor<T>& x0, const Tensor<T>& cond, Tap tap) {
    Graph<T> g(false);
    auto out = model.forward(g, g.constant(x0), 0.0, g.constant(cond), tap);
    const Var<T>& v = tap == Tap::DownLast ? out.down_last : tap == Tap::Mid ? out.mid : out.up_last;
    return to_feature_map(v->val(), tap);
}

/// Reverse process from pure noise over all T steps (posterior variance), clamped to [-1, 1].
template <class T>
Tensor<T> ancestral_sample(const UNet<T>& model, const Tensor<T>& cond, const NoiseSchedule& sched, Rng& rng,
                           std::size_t height, std::size_t width) {
    Tensor<T> x({model.spec().in_channels, height, width});
    for (auto& v : x.storage()) v = static_cast<T>(rng.normal());
    for (std::size_t t = sched.T; t >= 1; --t) {
        Graph<T> g(false);
        auto eps = model.forward(g, g.constant(x), static_cast<double>(t), g.constant(cond)).eps->val();
        const double beta = sched.beta_at(t), alpha = sched.alpha_at(t), ab = sched.alpha_bar_at(t);
        const double coef = beta / std::sqrt(1.0 - ab);
        const double sigma = t > 1 ? std::sqrt(beta * (1.0 - sched.alpha_bar_at(t - 1)) / (1.0 - ab)) : 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            double v = (static_cast<double>(x[i]) - coef * static_cast<double>(eps[i])) / std::sqrt(alpha);
            if (t > 1) v += sigma * rng.normal();
            x[i] = static_cast<T>(v);
        }
    }
    for (auto& v : x.storage()) v = std::clamp(v, T{-1}, T{1});
    return x;
}

}  // namespace pointsd::diffusion
