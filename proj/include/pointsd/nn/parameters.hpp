#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "pointsd/core/rng.hpp"
#include "pointsd/core/tensor.hpp"

namespace pointsd::nn {

template <class T>
struct Parameter {
    std::string name;
    Tensor<T> value;
    bool trainable = true;
    // Decoupled weight decay applies to matrices and kernels only.
    bool decay = true;
};

enum class Init { Zeros, Ones, FanIn, Normal };

/// Owns every named parameter of a model. Addresses are stable, so layers keep raw
/// pointers into the store; the store is therefore neither copyable nor movable.
template <class T>
class ParameterStore {
public:
    explicit ParameterStore(std::uint64_t init_seed = 0) : init_seed_(init_seed) {}
    ParameterStore(const ParameterStore&) = delete;
    ParameterStore& operator=(const ParameterStore&) = delete;

    std::uint64_t init_seed() const noexcept { return init_seed_; }

    /// Registers a parameter. FanIn draws U(-1/sqrt(fan_in), 1/sqrt(fan_in)); Normal draws
    /// N(0, scale^2). The init stream depends only on (init seed, name), never on order.
    Parameter<T>* add(const std::string& name, Shape shape, Init init, std::size_t fan_in = 1, double scale = 1.0) {
        if (index_.count(name)) throw std::invalid_argument("ParameterStore: duplicate parameter '" + name + "'");
        auto p = std::make_unique<Parameter<T>>();
        p->name = name;
        p->decay = shape.size() >= 2;
        p->value = Tensor<T>(std::move(shape));
        Rng rng(derive_seed(init_seed_, {fnv1a(name)}));
        switch (init) {
            case Init::Zeros:
                break;
            case Init::Ones:
                p->value.fill(T{1});
                break;
            case Init::FanIn: {
                const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(fan_in, 1)));
                for (auto& v : p->value.storage()) v = static_cast<T>(rng.uniform(-bound, bound));
                break;
            }
            case Init::Normal:
                for (auto& v : p->value.storage()) v = static_cast<T>(scale * rng.normal());
                break;
        }
        index_[name] = params_.size();
        params_.push_back(std::move(p));
        return params_.back().get();
    }

    std::size_t size() const noexcept { return params_.size(); }
    Parameter<T>& operator[](std::size_t i) { return *params_[i]; }
    const Parameter<T>& operator[](std::size_t i) const { return *params_[i]; }

    Parameter<T>* find(const std::string& name) {
        auto it = index_.find(name);
        return it == index_.end() ? nullptr : params_[it->second].get();
    }
    const Parameter<T>* find(const std::string& name) const {
        auto it = index_.find(name);
        return it == index_.end() ? nullptr : params_[it->second].get();
    }
    Parameter<T>& at(const std::string& name) {
        auto* p = find(name);
        if (!p) throw std::out_of_range("ParameterStore: no parameter '" + name + "'");
        return *p;
    }

    bool owns(const Parameter<T>* p) const {
        auto it = index_.find(p->name);
        return it != index_.end() && params_[it->second].get() == p;
    }

    std::size_t index_of(const Parameter<T>* p) const {
        auto it = index_.find(p->name);
        if (it == index_.end() || params_[it->second].get() != p) {
            throw std::invalid_argument("ParameterStore: foreign parameter");
        }
        return it->second;
    }

    std::size_t scalar_count() const {
        std::size_t n = 0;
        for (const auto& p : params_) n += p->value.size();
        return n;
    }

    /// Marks every parameter whose name starts with one of the prefixes trainable, the rest frozen.
    void set_trainable_prefixes(const std::vector<std::string>& prefixes) {
        for (auto& p : params_) {
            p->trainable = false;
            for (const auto& pre : prefixes) {
                if (p->name.compare(0, pre.size(), pre) == 0) {
                    p->trainable = true;
                    break;
                }
            }
        }
    }

    std::vector<std::string> trainable_names() const {
        std::vector<std::string> out;
        for (const auto& p : params_)
            if (p->trainable) out.push_back(p->name);
        return out;
    }

    /// Copies every value; used for freeze-contract snapshots.
    std::map<std::string, Tensor<T>> snapshot() const {
        std::map<std::string, Tensor<T>> out;
        for (const auto& p : params_) out.emplace(p->name, p->value);
        return out;
    }

    auto begin() { return params_.begin(); }
    auto end() { return params_.end(); }
    auto begin() const { return params_.begin(); }
    auto end() const { return params_.end(); }

private:
    std::uint64_t init_seed_;
    std::vector<std::unique_ptr<Parameter<T>>> params_;
    std::map<std::string, std::size_t> index_;
};

/// One gradient slot per parameter of a store (empty for frozen entries).
template <class T>
struct GradientSet {
    std::vector<Tensor<T>> grads;

    explicit GradientSet(const ParameterStore<T>& store) {
        grads.resize(store.size());
        for (std::size_t i = 0; i < store.size(); ++i)
            if (store[i].trainable) grads[i] = Tensor<T>(store[i].value.shape());
    }
    void zero() {
        for (auto& g : grads) g.fill(T{0});
    }
    void scale(T s) {
        for (auto& g : grads)
            for (auto& v : g.storage()) v *= s;
    }
};

}  // namespace pointsd::nn
