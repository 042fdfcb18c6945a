#pragma once

#include <cstring>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "pointsd/checkpoint.hpp"
#include "pointsd/config.hpp"
#include "pointsd/core/ops.hpp"
#include "pointsd/diffusion.hpp"
#include "pointsd/encoders.hpp"
#include "pointsd/geometry.hpp"
#include "pointsd/nn/optim.hpp"
#include "pointsd/synthdata.hpp"

namespace pointsd::training {

using config::Augmentation;
using config::OptimConfig;
using config::RunConfig;
using Store = nn::ParameterStore<float>;
using Graph = ag::Graph<float>;
using VarF = ag::Var<float>;

inline constexpr const char* kCategoryTable = "stage0.category_embedding";

// Counter tags for derive_seed; one per consumer of randomness.
enum SeedTag : std::uint64_t {
    kInitTag = 0x11,
    kStage0Tag = 0x20,
    kStage1Tag = 0x21,
    kStage2Tag = 0x22,
    kProbeTag = 0x30,
    kFinetuneTag = 0x31,
    kFewshotTag = 0x32,
    kValidationTag = 0x40,
    kSampleTag = 0x50,
};

inline diffusion::UNetSpec unet_spec(const RunConfig& cfg) { return cfg.unet; }
inline encoders::EncoderSpec encoder_spec(const RunConfig& cfg) {
    auto e = cfg.encoder;
    e.d_cond = cfg.unet.d_cond;
    return e;
}

/// Every network of the pipeline in one store: the diffusion UNet, the Stage-0
/// category embedding, the condition encoder g, the backbone f and the projector s.
struct Model {
    Store store;
    diffusion::UNet<float> unet;
    nn::Parameter<float>* categories = nullptr;
    encoders::ConditionEncoder<float> g;
    encoders::Backbone<float> f;
    encoders::Projector<float> s;
    std::size_t cond_tokens;

    Model(const RunConfig& cfg, std::uint64_t init_seed)
        : store(init_seed),
          unet(store, unet_spec(cfg), "unet"),
          categories(store.add(kCategoryTable, {cfg.data.categories.size(), cfg.unet.d_cond}, nn::Init::Normal, 1, 1.0)),
          g(store, "g", encoder_spec(cfg)),
          f(store, "f", encoder_spec(cfg)),
          s(store, "s", cfg.encoder.d_model, projector_spec(cfg, unet)),
          cond_tokens(cfg.cond_tokens) {}

    explicit Model(const RunConfig& cfg) : Model(cfg, derive_seed(cfg.seed, {kInitTag})) {}

private:
    static encoders::ProjectorSpec projector_spec(const RunConfig& cfg, const diffusion::UNet<float>& unet) {
        auto p = cfg.projector;
        p.out_dim = unet.tap_channels(cfg.tap);
        return p;
    }
};

/// K copies of each label's embedding row, stacked.
inline VarF category_condition(Graph& g, const Model& m, const std::vector<int>& labels) {
    std::vector<std::size_t> rows;
    for (int l : labels)
        for (std::size_t k = 0; k < m.cond_tokens; ++k) rows.push_back(static_cast<std::size_t>(l));
    return ops::gather_rows(g, g.param(*m.categories), rows);
}

// ---------------------------------------------------------------------------
// Freeze plans

class FreezeViolation : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct FreezeRule {
    std::string prefix;
    std::string suffix;
};

struct FreezePlan {
    std::string stage;
    std::vector<FreezeRule> trainable;

    bool is_trainable(const std::string& name) const {
        for (const auto& r : trainable) {
            if (name.size() < r.prefix.size() + r.suffix.size()) continue;
            if (name.compare(0, r.prefix.size(), r.prefix) == 0 &&
                name.compare(name.size() - r.suffix.size(), r.suffix.size(), r.suffix) == 0) {
                return true;
            }
        }
        return false;
    }
    void apply(Store& store) const {
        for (auto& p : store) p->trainable = is_trainable(p->name);
    }

    static FreezePlan stage0() { return {"stage0", {{"unet.", ""}, {kCategoryTable, ""}}}; }
    static FreezePlan stage1() { return {"stage1", {{"g.", ""}, {"unet.", ".xattn.wk"}, {"unet.", ".xattn.wv"}}}; }
    static FreezePlan stage2() { return {"stage2", {{"f.", ""}, {"s.", ""}}}; }
};

using Snapshot = std::map<std::string, Tensor<float>>;

inline Snapshot snapshot_frozen(const Store& store) {
    Snapshot out;
    for (const auto& p : store)
        if (!p->trainable) out.emplace(p->name, p->value);
    return out;
}

/// Bit-level comparison of every snapshotted parameter.
inline void verify_frozen(const Store& store, const Snapshot& before, const std::string& when) {
    for (const auto& [name, old] : before) {
        const auto* p = store.find(name);
        if (!p || p->value.shape() != old.shape() ||
            std::memcmp(p->value.data(), old.data(), old.size() * sizeof(float)) != 0) {
            double worst = 0;
            if (p && p->value.shape() == old.shape())
                for (std::size_t i = 0; i < old.size(); ++i)
                    worst = std::max(worst, std::abs(static_cast<double>(p->value[i]) - old[i]));
            throw FreezeViolation("freeze violation " + when + ": frozen parameter '" + name +
                                  "' changed (max |delta| = " + std::to_string(worst) + ")");
        }
    }
}

// ---------------------------------------------------------------------------
// Training data

struct TrainItem {
    int id = 0;
    int label = 0;
    const geometry::PointCloud* cloud = nullptr;
    geometry::PatchSet patches;
    const std::vector<synthdata::RenderedImage>* views = nullptr;
};

inline int numeric_id(const synthdata::SampleRecord& rec) { return std::stoi(rec.id); }

/// Precomputes patches (FPS from index 0) for each record; records must outlive the items.
inline std::vector<TrainItem> prepare_items(const std::vector<synthdata::SampleRecord>& records, const RunConfig& cfg) {
    std::vector<TrainItem> out;
    out.reserve(records.size());
    for (const auto& r : records) {
        TrainItem it;
        it.id = numeric_id(r);
        it.label = r.label;
        it.cloud = &r.points;
        it.patches = geometry::make_patches(r.points, cfg.groups, cfg.group_size, 0, it.id);
        it.views = &r.views;
        out.push_back(std::move(it));
    }
    return out;
}

/// Draws alpha ~ U(0, 1); the augmented branch is taken iff alpha > threshold.
struct AugmentationGate {
    double threshold = 0.5;
    double last_alpha = 0;

    bool draw(Rng& rng) {
        last_alpha = rng.uniform();
        return last_alpha > threshold;
    }
};

/// Random decisions of one Stage-I/II iteration, drawn in a fixed order.
struct IterationPlan {
    double alpha = 0;
    bool augmented = false;
    int view = 0;
    geometry::MixMask mask;
    std::size_t t = 0;
    std::size_t fps_start = 0;
};

inline IterationPlan plan_iteration(Rng& rng, const RunConfig& cfg, Augmentation mode, bool has_partner) {
    IterationPlan p;
    AugmentationGate gate;
    const bool open = gate.draw(rng);
    p.alpha = gate.last_alpha;
    p.augmented = open && has_partner && mode != Augmentation::None;
    p.view = static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.data.views)));
    p.mask = geometry::sample_mix_mask(cfg.groups, cfg.mix_ratio, rng);
    p.t = cfg.t_min + static_cast<std::size_t>(rng.below(cfg.t_max - cfg.t_min + 1));
    if (cfg.fps_random_start) {
        p.fps_start = static_cast<std::size_t>(rng.below(cfg.data.points));
    }
    return p;
}

/// Per-sample stream for (stage, epoch, batch, position).
inline Rng sample_rng(std::uint64_t seed, std::uint64_t stage, std::size_t epoch, std::size_t batch, std::size_t pos) {
    return Rng(derive_seed(seed, {stage, epoch, batch, pos}));
}

/// The cloud/image pair one iteration trains on.
struct Composite {
    geometry::PatchSet patches;
    Tensor<float> image;
    bool augmented = false;
    int source_a = 0;
    int source_b = 0;
    std::vector<int> labels;
};

inline const geometry::PatchSet& patches_for(const TrainItem& it, const RunConfig& cfg, const IterationPlan& plan,
                                             geometry::PatchSet& scratch) {
    if (!cfg.fps_random_start) return it.patches;
    scratch = geometry::make_patches(*it.cloud, cfg.groups, cfg.group_size, plan.fps_start, it.id);
    return scratch;
}

/// Checks that a mixed cloud and its image come from the same source pair.
inline void verify_provenance(const Composite& c, const TrainItem& a, const TrainItem& b, const IterationPlan& plan,
                              Augmentation mode) {
    std::size_t from_a = 0, from_b = 0;
    for (int s : c.patches.source_ids) {
        if (s == a.id) ++from_a;
        else if (s == b.id) ++from_b;
        else throw std::logic_error("provenance: patch from unexpected source " + std::to_string(s));
    }
    if (from_a != plan.mask.popcount() || from_b != plan.mask.bits.size() - plan.mask.popcount()) {
        throw std::logic_error("provenance: patch counts do not match the mix mask");
    }
    const auto& xa = (*a.views)[static_cast<std::size_t>(plan.view)].pixels;
    if (mode == Augmentation::MixStitch) {
        const auto& xb = (*b.views)[static_cast<std::size_t>(plan.view)].pixels;
        const std::size_t C = xa.dim(0), H = xa.dim(1), Wa = xa.dim(2), Wb = xb.dim(2);
        for (std::size_t ch = 0; ch < C; ++ch)
            for (std::size_t r = 0; r < H; ++r) {
                const float* row = c.image.data() + (ch * H + r) * (Wa + Wb);
                if (std::memcmp(row, xa.data() + (ch * H + r) * Wa, Wa * sizeof(float)) != 0 ||
                    std::memcmp(row + Wa, xb.data() + (ch * H + r) * Wb, Wb * sizeof(float)) != 0) {
                    throw std::logic_error("provenance: stitched image does not match its sources");
                }
            }
    } else if (c.image != xa) {
        throw std::logic_error("provenance: image does not belong to the retained cloud");
    }
}

inline Composite compose(const TrainItem& a, const TrainItem* b, const IterationPlan& plan, Augmentation mode,
                         const RunConfig& cfg, bool check) {
    Composite c;
    c.source_a = a.id;
    c.labels = {a.label};
    geometry::PatchSet scratch_a, scratch_b;
    const auto& view_a = (*a.views)[static_cast<std::size_t>(plan.view)];
    if (!plan.augmented) {
        c.patches = patches_for(a, cfg, plan, scratch_a);
        c.image = view_a.pixels;
        c.source_b = a.id;
        return c;
    }
    c.augmented = true;
    c.source_b = b->id;
    c.labels.push_back(b->label);
    c.patches = geometry::mix_patchsets(patches_for(a, cfg, plan, scratch_a), patches_for(*b, cfg, plan, scratch_b),
                                        plan.mask);
    if (mode == Augmentation::MixStitch) {
        c.image = synthdata::stitch_images(view_a, (*b->views)[static_cast<std::size_t>(plan.view)]).pixels;
    } else {
        c.image = view_a.pixels;
    }
    if (check) verify_provenance(c, a, *b, plan, mode);
    return c;
}

inline Tensor<float> normal_tensor(const Shape& shape, Rng& rng) {
    Tensor<float> out(shape);
    for (auto& v : out.storage()) v = static_cast<float>(rng.normal());
    return out;
}

// ---------------------------------------------------------------------------
// Deterministic mini-batch optimization

inline std::size_t resolve_threads(std::size_t requested) {
    if (requested > 0) return requested;
    return std::max<unsigned>(1, std::thread::hardware_concurrency());
}

using LossFn = std::function<VarF(Graph&, const TrainItem& item, const TrainItem* partner, Rng& rng)>;
using EpochHook = std::function<void(std::size_t epoch, double mean_loss)>;

struct OptimizeOptions {
    std::uint64_t seed = 0;
    std::uint64_t stage_tag = 0;
    std::size_t threads = 1;
    bool test_mode = false;
    EpochHook on_epoch;
};

/// Runs `oc.epochs` epochs of AdamW on the plan's trainable parameters. Each sample
/// gets its own graph and random stream; per-sample gradients are summed in batch
/// order, so results do not depend on the thread count. Returns mean loss per epoch.
inline std::vector<double> optimize(Model& m, const FreezePlan& plan, const OptimConfig& oc,
                                    const std::vector<TrainItem>& items, const LossFn& loss_fn,
                                    const OptimizeOptions& opt) {
    if (items.empty()) throw std::invalid_argument(plan.stage + ": no training samples");
    plan.apply(m.store);
    nn::AdamW<float> adam(m.store, oc.weight_decay);
    const std::size_t B = std::min(oc.batch_size, items.size());
    const std::size_t batches = (items.size() + B - 1) / B;
    const nn::CosineSchedule sched{oc.lr, oc.warmup_epochs * batches, std::max<std::size_t>(1, oc.epochs * batches)};
    const std::size_t threads = std::max<std::size_t>(1, opt.threads);

    nn::GradientSet<float> grads(m.store);
    std::vector<nn::GradientSet<float>> slots;
    std::vector<double> history;
    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < oc.epochs; ++epoch) {
        Snapshot frozen;
        if (opt.test_mode) frozen = snapshot_frozen(m.store);
        Rng order_rng(derive_seed(opt.seed, {opt.stage_tag, epoch}));
        const auto order = order_rng.permutation(items.size());
        double epoch_loss = 0;
        for (std::size_t b = 0; b < batches; ++b) {
            const std::size_t lo = b * B, hi = std::min(items.size(), lo + B), n = hi - lo;
            std::vector<std::size_t> partner;
            if (n >= 2) {
                Rng pair_rng(derive_seed(opt.seed, {opt.stage_tag, epoch, b, 0xfeed}));
                partner = pair_rng.derangement(n);
            }
            grads.zero();
            std::vector<double> losses(n, 0.0);
            const auto run_one = [&](std::size_t k, nn::GradientSet<float>& into) {
                Rng rng = sample_rng(opt.seed, opt.stage_tag, epoch, b, k);
                const TrainItem* other = partner.empty() ? nullptr : &items[order[lo + partner[k]]];
                Graph g(true);
                auto loss = loss_fn(g, items[order[lo + k]], other, rng);
                losses[k] = static_cast<double>(loss->val()[0]);
                g.backward(loss);
                g.accumulate(m.store, into);
            };
            if (threads == 1) {
                for (std::size_t k = 0; k < n; ++k) run_one(k, grads);
            } else {
                while (slots.size() < std::min(threads, n)) slots.emplace_back(m.store);
                for (std::size_t w = 0; w < n; w += threads) {
                    const std::size_t width = std::min(threads, n - w);
                    std::vector<std::exception_ptr> errors(width);
                    std::vector<std::thread> pool;
                    for (std::size_t j = 0; j < width; ++j) {
                        pool.emplace_back([&, j] {
                            try {
                                slots[j].zero();
                                run_one(w + j, slots[j]);
                            } catch (...) {
                                errors[j] = std::current_exception();
                            }
                        });
                    }
                    for (auto& t : pool) t.join();
                    for (auto& e : errors)
                        if (e) std::rethrow_exception(e);
                    for (std::size_t j = 0; j < width; ++j)
                        for (std::size_t i = 0; i < grads.grads.size(); ++i)
                            if (!grads.grads[i].empty()) grads.grads[i] += slots[j].grads[i];
                }
            }
            for (double l : losses) epoch_loss += l;
            grads.scale(1.0f / static_cast<float>(n));
            adam.step(grads, sched.at(step++));
        }
        history.push_back(epoch_loss / static_cast<double>(items.size()));
        if (opt.test_mode) verify_frozen(m.store, frozen, "after " + plan.stage + " epoch " + std::to_string(epoch + 1));
        if (opt.on_epoch) opt.on_epoch(epoch + 1, history.back());
    }
    return history;
}

// ---------------------------------------------------------------------------
// Stages

inline OptimizeOptions options_for(const RunConfig& cfg, std::uint64_t tag, EpochHook hook) {
    return {cfg.seed, tag, resolve_threads(cfg.threads), cfg.test_mode, std::move(hook)};
}

/// Category-conditioned denoising over all of [1, T] on the UNet and category table.
inline std::vector<double> train_stage0(Model& m, const std::vector<TrainItem>& items, const RunConfig& cfg,
                                        EpochHook hook = {}) {
    const auto sched = config::schedule(cfg);
    LossFn fn = [&](Graph& g, const TrainItem& it, const TrainItem*, Rng& rng) {
        const int view = static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.data.views)));
        const std::size_t t = 1 + static_cast<std::size_t>(rng.below(cfg.T));
        const auto& x0 = (*it.views)[static_cast<std::size_t>(view)].pixels;
        const auto eps = normal_tensor(x0.shape(), rng);
        return diffusion::denoising_loss(g, m.unet, x0, t, category_condition(g, m, {it.label}), eps, sched);
    };
    return optimize(m, FreezePlan::stage0(), cfg.stage0, items, fn, options_for(cfg, kStage0Tag, std::move(hook)));
}

/// Point-to-image denoising: g and the cross-attention key/value maps learn; the
/// rest of the UNet stays frozen.
inline std::vector<double> train_stage1(Model& m, const std::vector<TrainItem>& items, const RunConfig& cfg,
                                        EpochHook hook = {}) {
    const auto sched = config::schedule(cfg);
    LossFn fn = [&](Graph& g, const TrainItem& it, const TrainItem* partner, Rng& rng) {
        const auto plan = plan_iteration(rng, cfg, cfg.stage1_aug, partner != nullptr);
        const auto c = compose(it, partner, plan, cfg.stage1_aug, cfg, cfg.test_mode);
        const auto eps = normal_tensor(c.image.shape(), rng);
        return diffusion::denoising_loss(g, m.unet, c.image, plan.t, m.g(g, c.patches), eps, sched);
    };
    return optimize(m, FreezePlan::stage1(), cfg.stage1, items, fn, options_for(cfg, kStage1Tag, std::move(hook)));
}

/// Condition tokens used when extracting the frozen diffusion features.
inline Tensor<float> extraction_condition(const Model& m, const Composite& c, const RunConfig& cfg) {
    Graph g(false);
    switch (cfg.condition) {
        case config::Condition::Zero:
            return Tensor<float>({m.cond_tokens, cfg.unet.d_cond});
        case config::Condition::Category:
            return category_condition(g, m, c.labels)->val();
        case config::Condition::PointCloud:
            break;
    }
    return m.g(g, c.patches)->val();
}

/// Alignment target: the frozen tap on the clean (possibly stitched) image, or a
/// constant for the degenerate-target control.
inline diffusion::FeatureMap stage2_target(const Model& m, const Composite& c, const RunConfig& cfg) {
    if (cfg.constant_target) {
        const std::size_t C = m.unet.tap_channels(cfg.tap);
        diffusion::FeatureMap fm;
        fm.tap = cfg.tap;
        fm.height = 1;
        fm.width = 1;
        fm.values = Tensor<float>({1, C}, 1.0f);
        return fm;
    }
    return diffusion::extract_features(m.unet, c.image, extraction_condition(m, c, cfg), cfg.tap);
}

inline VarF stage2_loss(Graph& g, const Model& m, const Composite& c, const diffusion::FeatureMap& target,
                        const RunConfig& cfg) {
    const auto tokens = m.f(g, c.patches).tokens;
    if (cfg.alignment == config::Alignment::Tokens && !c.augmented && !cfg.constant_target) {
        const auto proj = m.s.per_token(g, tokens);
        if (proj->val().rows() != target.positions()) {
            throw std::invalid_argument("token-wise alignment needs one tap position per patch (" +
                                        std::to_string(target.positions()) + " positions, " +
                                        std::to_string(proj->val().rows()) + " patches)");
        }
        if (proj->val().cols() != target.channels()) {
            throw std::invalid_argument("token-wise alignment: projector width " + std::to_string(proj->val().cols()) +
                                        " != tap channels " + std::to_string(target.channels()));
        }
        const auto d = ops::squared_distance(g, proj, g.constant(target.values));
        return ops::scale(g, d, 1.0f / static_cast<float>(proj->val().rows()));
    }
    return encoders::alignment_loss(g, m.s(g, tokens), target.pooled());
}

/// Feature alignment: f and s learn from scratch against the frozen diffusion tap.
inline std::vector<double> train_stage2(Model& m, const std::vector<TrainItem>& items, const RunConfig& cfg,
                                        EpochHook hook = {}) {
    LossFn fn = [&](Graph& g, const TrainItem& it, const TrainItem* partner, Rng& rng) {
        const auto plan = plan_iteration(rng, cfg, cfg.stage2_aug, partner != nullptr);
        const auto c = compose(it, partner, plan, cfg.stage2_aug, cfg, cfg.test_mode);
        return stage2_loss(g, m, c, stage2_target(m, c, cfg), cfg);
    };
    return optimize(m, FreezePlan::stage2(), cfg.stage2, items, fn, options_for(cfg, kStage2Tag, std::move(hook)));
}

/// Mean denoising loss on fixed (view, t, eps) draws; identical weights give an
/// identical value.
inline double validation_loss(const Model& m, const std::vector<TrainItem>& items, const RunConfig& cfg) {
    const auto sched = config::schedule(cfg);
    double total = 0;
    for (const auto& it : items) {
        Rng rng(derive_seed(cfg.seed, {kValidationTag, static_cast<std::uint64_t>(it.id)}));
        const int view = static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.data.views)));
        const std::size_t t = 1 + static_cast<std::size_t>(rng.below(cfg.T));
        const auto& x0 = (*it.views)[static_cast<std::size_t>(view)].pixels;
        const auto eps = normal_tensor(x0.shape(), rng);
        Graph g(false);
        total += diffusion::denoising_loss(g, m.unet, x0, t, category_condition(g, m, {it.label}), eps, sched)->val()[0];
    }
    return total / static_cast<double>(items.size());
}

/// Mean over output dimensions of the across-sample variance of s(f(P)).
inline double projection_variance(const Model& m, const std::vector<TrainItem>& items) {
    std::vector<std::vector<double>> outs;
    for (const auto& it : items) {
        Graph g(false);
        const auto v = m.s(g, m.f(g, it.patches).tokens)->val();
        outs.emplace_back(v.storage().begin(), v.storage().end());
    }
    const std::size_t D = outs.front().size();
    double acc = 0;
    for (std::size_t d = 0; d < D; ++d) {
        double mean = 0;
        for (const auto& o : outs) mean += o[d];
        mean /= static_cast<double>(outs.size());
        double var = 0;
        for (const auto& o : outs) var += (o[d] - mean) * (o[d] - mean);
        acc += var / static_cast<double>(outs.size());
    }
    return acc / static_cast<double>(D);
}

inline CheckpointMeta make_meta(const std::string& stage, const RunConfig& cfg, const std::vector<double>& history) {
    return {stage, history.size(), config::hex64(config::config_hash(cfg)), history};
}

}  // namespace pointsd::training
