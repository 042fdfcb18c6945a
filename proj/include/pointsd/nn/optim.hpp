#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <vector>

#include "pointsd/nn/parameters.hpp"

namespace pointsd::nn {

/// Linear warmup to `base` over `warmup_steps`, then cosine decay to zero at `total_steps`.
struct CosineSchedule {
    double base = 1e-3;
    std::size_t warmup_steps = 0;
    std::size_t total_steps = 1;

    double at(std::size_t step) const {
        if (warmup_steps > 0 && step < warmup_steps) {
            return base * static_cast<double>(step + 1) / static_cast<double>(warmup_steps);
        }
        const std::size_t span = total_steps > warmup_steps ? total_steps - warmup_steps : 1;
        const double progress =
            std::min(1.0, static_cast<double>(step - std::min(step, warmup_steps)) / static_cast<double>(span));
        return base * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
    }
};

/// Adam with decoupled weight decay. Only trainable parameters are touched; frozen
/// parameters are never written, not even by decay.
template <class T>
class AdamW {
public:
    AdamW(ParameterStore<T>& store, double weight_decay, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : store_(store), wd_(weight_decay), b1_(beta1), b2_(beta2), eps_(eps) {
        m_.resize(store.size());
        v_.resize(store.size());
        for (std::size_t i = 0; i < store.size(); ++i) {
            if (!store[i].trainable) continue;
            m_[i] = Tensor<T>(store[i].value.shape());
            v_[i] = Tensor<T>(store[i].value.shape());
        }
    }

    std::size_t steps() const noexcept { return t_; }

    void step(const GradientSet<T>& grads, double lr) {
        ++t_;
        const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
        for (std::size_t i = 0; i < store_.size(); ++i) {
            auto& p = store_[i];
            if (!p.trainable || grads.grads[i].empty()) continue;
            auto& w = p.value.storage();
            const auto& gr = grads.grads[i].storage();
            auto& m = m_[i].storage();
            auto& v = v_[i].storage();
            const double decay = p.decay ? lr * wd_ : 0.0;
            for (std::size_t j = 0; j < w.size(); ++j) {
                const double gj = static_cast<double>(gr[j]);
                m[j] = static_cast<T>(b1_ * static_cast<double>(m[j]) + (1.0 - b1_) * gj);
                v[j] = static_cast<T>(b2_ * static_cast<double>(v[j]) + (1.0 - b2_) * gj * gj);
                const double mh = static_cast<double>(m[j]) / c1;
                const double vh = static_cast<double>(v[j]) / c2;
                double wj = static_cast<double>(w[j]);
                wj -= decay * wj;
                wj -= lr * mh / (std::sqrt(vh) + eps_);
                w[j] = static_cast<T>(wj);
            }
        }
    }

private:
    ParameterStore<T>& store_;
    double wd_, b1_, b2_, eps_;
    std::size_t t_ = 0;
    std::vector<Tensor<T>> m_, v_;
};

}  // namespace pointsd::nn
