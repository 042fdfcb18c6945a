#pragma once

#include <array>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "pointsd/training.hpp"

// Downstream measurement on pooled backbone features: linear probe, fine-tune,
// few-shot episodes, the ablation table and the PCA scatter.
namespace pointsd::evaluation {

namespace fs = std::filesystem;
using training::Graph;
using training::Model;
using training::TrainItem;
using Features = std::vector<std::vector<float>>;

struct EvalReport {
    std::string metric;
    std::vector<double> values;
    double mean = 0;
    double std = 0;  // sample standard deviation, 0 for a single run
    std::string config_hash;
};

inline EvalReport make_report(std::string metric, std::vector<double> values, std::string config_hash = {}) {
    EvalReport r{std::move(metric), std::move(values), 0, 0, std::move(config_hash)};
    if (r.values.empty()) return r;
    r.mean = std::accumulate(r.values.begin(), r.values.end(), 0.0) / static_cast<double>(r.values.size());
    if (r.values.size() > 1) {
        double ss = 0;
        for (double v : r.values) ss += (v - r.mean) * (v - r.mean);
        r.std = std::sqrt(ss / static_cast<double>(r.values.size() - 1));
    }
    return r;
}

inline std::string format_double(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

inline std::string report_csv(const EvalReport& r) {
    std::string out = "run_id,accuracy\n";
    for (std::size_t i = 0; i < r.values.size(); ++i) out += std::to_string(i) + "," + format_double(r.values[i]) + "\n";
    return out;
}

inline std::string report_summary(const EvalReport& r) {
    std::string out = "metric = " + r.metric + "\n";
    out += "mean = " + format_double(r.mean) + "\n";
    out += "std = " + format_double(r.std) + "\n";
    out += "runs = " + std::to_string(r.values.size()) + "\n";
    if (!r.config_hash.empty()) out += "config_hash = " + r.config_hash + "\n";
    return out;
}

/// Writes `<dir>/<stem>.csv` and `<dir>/summary.txt`.
inline void write_report(const fs::path& dir, const EvalReport& r, const std::string& stem = "report") {
    std::error_code ec;
    fs::create_directories(dir, ec);
    synthdata::detail::write_atomic(dir / (stem + ".csv"), report_csv(r));
    synthdata::detail::write_atomic(dir / "summary.txt", report_summary(r));
}

// ---------------------------------------------------------------------------
// Features

enum class Encoder { Backbone, Condition };

/// Pooled concat(mean, max) token features, computed without gradients.
inline Features pooled_features(const Model& m, const std::vector<TrainItem>& items, Encoder which = Encoder::Backbone) {
    Features out;
    out.reserve(items.size());
    for (const auto& it : items) {
        Graph g(false);
        const auto v = which == Encoder::Backbone ? m.f(g, it.patches).pooled->val() : m.g.pooled(g, it.patches)->val();
        out.emplace_back(v.storage().begin(), v.storage().end());
    }
    return out;
}

inline std::vector<int> labels_of(const std::vector<TrainItem>& items) {
    std::vector<int> out;
    for (const auto& it : items) out.push_back(it.label);
    return out;
}

/// Per-dimension standardization fitted on one feature set.
struct Standardizer {
    std::vector<float> mean, inv_std;

    static Standardizer fit(const Features& x) {
        if (x.empty()) throw std::invalid_argument("Standardizer: no features");
        const std::size_t D = x.front().size();
        Standardizer s;
        s.mean.assign(D, 0.f);
        s.inv_std.assign(D, 1.f);
        for (std::size_t d = 0; d < D; ++d) {
            double mu = 0, ss = 0;
            for (const auto& r : x) mu += r[d];
            mu /= static_cast<double>(x.size());
            for (const auto& r : x) ss += (r[d] - mu) * (r[d] - mu);
            const double sd = std::sqrt(ss / static_cast<double>(x.size()));
            s.mean[d] = static_cast<float>(mu);
            s.inv_std[d] = sd > 1e-8 ? static_cast<float>(1.0 / sd) : 1.f;
        }
        return s;
    }

    Tensor<float> apply(const Features& x, const std::vector<std::size_t>& rows) const {
        Tensor<float> out({rows.size(), mean.size()});
        for (std::size_t i = 0; i < rows.size(); ++i)
            for (std::size_t d = 0; d < mean.size(); ++d) out(i, d) = (x[rows[i]][d] - mean[d]) * inv_std[d];
        return out;
    }
};

inline Tensor<float> broadcast_rows(const Tensor<float>& row, std::size_t n) {
    Tensor<float> out({n, row.size()});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t d = 0; d < row.size(); ++d) out(i, d) = row[d];
    return out;
}

inline std::vector<std::size_t> iota_rows(std::size_t n) {
    std::vector<std::size_t> r(n);
    std::iota(r.begin(), r.end(), std::size_t{0});
    return r;
}

inline double accuracy(const Tensor<float>& logits, const std::vector<int>& labels) {
    std::size_t hit = 0;
    for (std::size_t r = 0; r < labels.size(); ++r) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < logits.cols(); ++c)
            if (logits(r, c) > logits(r, best)) best = c;
        if (static_cast<int>(best) == labels[r]) ++hit;
    }
    return static_cast<double>(hit) / static_cast<double>(labels.size());
}

/// Softmax-regression head trained with AdamW on standardized features; returns
/// top-1 test accuracy.
inline double train_linear_head(const Features& train_x, const std::vector<int>& train_y, const Features& test_x,
                                const std::vector<int>& test_y, std::size_t classes, const config::OptimConfig& oc,
                                std::uint64_t seed) {
    if (train_x.size() != train_y.size() || test_x.size() != test_y.size()) {
        throw std::invalid_argument("linear head: " + std::to_string(train_x.size()) + " train features vs " +
                                    std::to_string(train_y.size()) + " labels, " + std::to_string(test_x.size()) +
                                    " test features vs " + std::to_string(test_y.size()) + " labels");
    }
    if (train_x.empty() || test_x.empty()) throw std::invalid_argument("linear head: empty split");
    const auto st = Standardizer::fit(train_x);
    const std::size_t D = train_x.front().size();
    nn::ParameterStore<float> store(derive_seed(seed, {0x4ead}));
    nn::Linear<float> head(store, "head", D, classes);
    nn::AdamW<float> adam(store, oc.weight_decay);
    const std::size_t B = std::min(oc.batch_size, train_x.size());
    const std::size_t batches = (train_x.size() + B - 1) / B;
    const nn::CosineSchedule sched{oc.lr, oc.warmup_epochs * batches, std::max<std::size_t>(1, oc.epochs * batches)};
    nn::GradientSet<float> grads(store);
    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < oc.epochs; ++epoch) {
        Rng rng(derive_seed(seed, {0x4eae, epoch}));
        const auto order = rng.permutation(train_x.size());
        for (std::size_t b = 0; b < batches; ++b) {
            std::vector<std::size_t> rows(order.begin() + static_cast<std::ptrdiff_t>(b * B),
                                          order.begin() + static_cast<std::ptrdiff_t>(std::min(train_x.size(), (b + 1) * B)));
            std::vector<int> y;
            for (auto r : rows) y.push_back(train_y[r]);
            Graph g(true);
            auto loss = ops::cross_entropy(g, head(g, g.constant(st.apply(train_x, rows))), y);
            g.backward(loss);
            grads.zero();
            g.accumulate(store, grads);
            adam.step(grads, sched.at(step++));
        }
    }
    Graph g(false);
    return accuracy(head(g, g.constant(st.apply(test_x, iota_rows(test_x.size()))))->val(), test_y);
}

inline training::Snapshot snapshot_prefix(const training::Store& store, const std::string& prefix) {
    training::Snapshot out;
    for (const auto& p : store)
        if (p->name.compare(0, prefix.size(), prefix) == 0) out.emplace(p->name, p->value);
    return out;
}

/// Linear probe on frozen pooled features of f (or g). The encoder is checked
/// bit-for-bit afterwards. `shuffle_labels` permutes training labels for a chance-level control.
inline double linear_probe(const Model& m, const std::vector<TrainItem>& train, const std::vector<TrainItem>& test,
                           const config::RunConfig& cfg, std::uint64_t seed, Encoder which = Encoder::Backbone,
                           bool shuffle_labels = false) {
    const auto before = snapshot_prefix(m.store, which == Encoder::Backbone ? "f." : "g.");
    auto train_y = labels_of(train);
    if (shuffle_labels) {
        Rng rng(derive_seed(seed, {0x5f}));
        rng.shuffle(train_y);
    }
    const double acc = train_linear_head(pooled_features(m, train, which), train_y, pooled_features(m, test, which),
                                         labels_of(test), cfg.data.categories.size(), cfg.probe,
                                         derive_seed(seed, {training::kProbeTag}));
    training::verify_frozen(m.store, before, "during linear probe");
    return acc;
}

/// Full fine-tune: f and a linear head on pooled features (standardized with
/// statistics of the initial features) train jointly. Leaves the tuned f in `m`.
inline double finetune(Model& m, const std::vector<TrainItem>& train, const std::vector<TrainItem>& test,
                       const config::RunConfig& cfg, std::uint64_t seed, bool shuffle_labels = false) {
    auto train_y = labels_of(train);
    if (shuffle_labels) {
        Rng rng(derive_seed(seed, {0x5f}));
        rng.shuffle(train_y);
    }
    const auto st = Standardizer::fit(pooled_features(m, train));
    const std::size_t D = st.mean.size();
    Tensor<float> mu({1, D}, st.mean), inv({1, D}, st.inv_std);
    const auto oc = cfg.finetune;
    training::FreezePlan{"finetune", {{"f.", ""}}}.apply(m.store);
    nn::ParameterStore<float> hstore(derive_seed(seed, {training::kFinetuneTag, 0x4ead}));
    nn::Linear<float> head(hstore, "head", D, cfg.data.categories.size());
    nn::AdamW<float> adam(m.store, oc.weight_decay), hadam(hstore, oc.weight_decay);
    const std::size_t B = std::min(oc.batch_size, train.size());
    const std::size_t batches = (train.size() + B - 1) / B;
    const nn::CosineSchedule sched{oc.lr, oc.warmup_epochs * batches, std::max<std::size_t>(1, oc.epochs * batches)};
    const nn::CosineSchedule hsched{cfg.finetune_head_lr, oc.warmup_epochs * batches,
                                    std::max<std::size_t>(1, oc.epochs * batches)};
    nn::GradientSet<float> grads(m.store), hgrads(hstore);
    const auto forward = [&](Graph& g, const std::vector<TrainItem>& items, const std::vector<std::size_t>& rows) {
        std::vector<training::VarF> pooled;
        for (auto r : rows) pooled.push_back(m.f(g, items[r].patches).pooled);
        auto x = ops::concat0(g, pooled);
        auto z = ops::mul(g, ops::sub(g, x, g.constant(broadcast_rows(mu, rows.size()))),
                          g.constant(broadcast_rows(inv, rows.size())));
        return head(g, z);
    };
    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < oc.epochs; ++epoch) {
        Rng rng(derive_seed(seed, {training::kFinetuneTag, epoch}));
        const auto order = rng.permutation(train.size());
        for (std::size_t b = 0; b < batches; ++b) {
            std::vector<std::size_t> rows(order.begin() + static_cast<std::ptrdiff_t>(b * B),
                                          order.begin() + static_cast<std::ptrdiff_t>(std::min(train.size(), (b + 1) * B)));
            std::vector<int> y;
            for (auto r : rows) y.push_back(train_y[r]);
            Graph g(true);
            auto loss = ops::cross_entropy(g, forward(g, train, rows), y);
            g.backward(loss);
            grads.zero();
            hgrads.zero();
            g.accumulate(m.store, grads);
            g.accumulate(hstore, hgrads);
            adam.step(grads, sched.at(step));
            hadam.step(hgrads, hsched.at(step));
            ++step;
        }
    }
    Graph g(false);
    return accuracy(forward(g, test, iota_rows(test.size()))->val(), labels_of(test));
}

// ---------------------------------------------------------------------------
// Few-shot episodes

struct EpisodeSpec {
    std::size_t n = 5;
    std::size_t k = 10;
    std::size_t test_per_class = 20;
    std::uint64_t seed = 0;
};

struct Episode {
    std::vector<int> classes;
    std::vector<std::size_t> train;  // indices into the pool
    std::vector<std::size_t> test;
    std::vector<int> train_labels;   // episode-local labels 0..n-1
    std::vector<int> test_labels;
};

/// n random classes, then k train and test_per_class test members of each, disjoint.
inline Episode sample_episode(const std::vector<int>& pool_labels, std::size_t num_classes, const EpisodeSpec& spec,
                              std::size_t run) {
    if (spec.n < 1 || spec.n > num_classes) {
        throw std::invalid_argument("few-shot: n = " + std::to_string(spec.n) + " exceeds " +
                                    std::to_string(num_classes) + " classes");
    }
    std::vector<std::vector<std::size_t>> members(num_classes);
    for (std::size_t i = 0; i < pool_labels.size(); ++i) members.at(static_cast<std::size_t>(pool_labels[i])).push_back(i);
    Rng rng(derive_seed(spec.seed, {training::kFewshotTag, run}));
    const auto perm = rng.permutation(num_classes);
    Episode ep;
    for (std::size_t c = 0; c < spec.n; ++c) {
        const auto cls = perm[c];
        const auto& pool = members[cls];
        if (spec.k + spec.test_per_class > pool.size()) {
            throw std::invalid_argument("few-shot: class " + std::to_string(cls) + " has " + std::to_string(pool.size()) +
                                        " samples, needs k + test_per_class = " +
                                        std::to_string(spec.k + spec.test_per_class));
        }
        ep.classes.push_back(static_cast<int>(cls));
        const auto pick = rng.permutation(pool.size());
        for (std::size_t j = 0; j < spec.k + spec.test_per_class; ++j) {
            const bool is_train = j < spec.k;
            (is_train ? ep.train : ep.test).push_back(pool[pick[j]]);
            (is_train ? ep.train_labels : ep.test_labels).push_back(static_cast<int>(c));
        }
    }
    return ep;
}

inline Features select(const Features& x, const std::vector<std::size_t>& rows) {
    Features out;
    for (auto r : rows) out.push_back(x[r]);
    return out;
}

/// `runs` independent episodes over the pool; a linear head is trained per episode
/// on frozen features, or f is fine-tuned per episode when cfg.fewshot_full_finetune.
inline EvalReport fewshot_eval(Model& m, const std::vector<TrainItem>& pool, const config::RunConfig& cfg,
                               const EpisodeSpec& spec, std::size_t runs) {
    const auto labels = labels_of(pool);
    std::vector<double> acc;
    const Features feats = cfg.fewshot_full_finetune ? Features{} : pooled_features(m, pool);
    for (std::size_t r = 0; r < runs; ++r) {
        const auto ep = sample_episode(labels, cfg.data.categories.size(), spec, r);
        const std::uint64_t seed = derive_seed(spec.seed, {training::kFewshotTag, r, 1});
        if (!cfg.fewshot_full_finetune) {
            acc.push_back(train_linear_head(select(feats, ep.train), ep.train_labels, select(feats, ep.test),
                                            ep.test_labels, spec.n, cfg.probe, seed));
            continue;
        }
        const auto saved = snapshot_prefix(m.store, "f.");
        std::vector<TrainItem> tr, te;
        for (std::size_t i = 0; i < ep.train.size(); ++i) {
            tr.push_back(pool[ep.train[i]]);
            tr.back().label = ep.train_labels[i];
        }
        for (std::size_t i = 0; i < ep.test.size(); ++i) {
            te.push_back(pool[ep.test[i]]);
            te.back().label = ep.test_labels[i];
        }
        auto local = cfg;
        local.data.categories.resize(spec.n);
        acc.push_back(finetune(m, tr, te, local, seed));
        for (auto& [name, v] : saved) m.store.at(name).value = v;
    }
    return make_report("fewshot_" + std::to_string(spec.n) + "way_" + std::to_string(spec.k) + "shot", acc,
                       config::hex64(config::config_hash(cfg)));
}

// ---------------------------------------------------------------------------
// Ablation table

inline std::vector<std::string> ablation_variants(const std::string& axis) {
    if (axis == "condition") return {"zero", "category", "pointcloud"};
    if (axis == "tap") return {"down_last", "mid", "up_last"};
    if (axis == "t_interval") return {"low", "normal", "high"};
    if (axis == "augmentation") return {"none", "mix", "mix_stitch"};
    if (axis == "stages") return {"without_alignment", "with_alignment"};
    throw std::invalid_argument("unknown ablation axis '" + axis + "'");
}

/// The configuration a variant is trained with.
inline config::RunConfig variant_config(config::RunConfig cfg, const std::string& axis, const std::string& variant) {
    const std::string where = "ablation " + axis + "=" + variant;
    if (axis == "condition") {
        config::apply(cfg, "stage2.condition", variant, where);
    } else if (axis == "tap") {
        config::apply(cfg, "stage2.tap", variant, where);
    } else if (axis == "t_interval") {
        const std::size_t half = std::max<std::size_t>(1, cfg.T / 2);
        cfg.t_min = variant == "high" ? half : 1;
        cfg.t_max = variant == "low" ? half : cfg.T;
        if (variant != "low" && variant != "normal" && variant != "high") {
            throw config::ConfigError("ablation.axis", where, "unknown t-interval variant");
        }
    } else if (axis == "augmentation") {
        config::apply(cfg, "stage1.augmentation", variant, where);
        config::apply(cfg, "stage2.augmentation", variant, where);
    } else if (axis != "stages") {
        throw config::ConfigError("ablation.axis", where, "unknown axis");
    }
    return cfg;
}

inline fs::path variant_dir(const fs::path& root, const std::string& axis, const std::string& variant) {
    return root / "ablation" / axis / variant;
}

/// Checkpoint a variant is probed from, and the encoder probed.
inline std::pair<fs::path, Encoder> variant_checkpoint(const fs::path& root, const std::string& axis,
                                                       const std::string& variant) {
    if (axis == "stages" && variant == "without_alignment") {
        return {variant_dir(root, axis, variant) / "stage1.ckpt", Encoder::Condition};
    }
    return {variant_dir(root, axis, variant) / "stage2.ckpt", Encoder::Backbone};
}

struct AblationRow {
    std::string axis;
    std::string variant;
    std::optional<double> accuracy;
    std::string diagnostic;
};

/// Probes every variant of cfg.ablation_axis found under `root`; a missing or
/// unreadable checkpoint skips its row with a diagnostic.
inline std::vector<AblationRow> ablation_harness(const config::RunConfig& cfg, const fs::path& root,
                                                 const std::vector<TrainItem>& train,
                                                 const std::vector<TrainItem>& test) {
    std::vector<AblationRow> rows;
    for (const auto& variant : ablation_variants(cfg.ablation_axis)) {
        AblationRow row{cfg.ablation_axis, variant, std::nullopt, {}};
        const auto vcfg = variant_config(cfg, cfg.ablation_axis, variant);
        const auto [path, which] = variant_checkpoint(root, cfg.ablation_axis, variant);
        try {
            const auto ck = training::load_checkpoint(path);
            Model m(vcfg);
            training::restore(m.store, ck, {which == Encoder::Backbone ? "f." : "g."});
            row.accuracy = linear_probe(m, train, test, vcfg, vcfg.seed, which);
        } catch (const std::exception& e) {
            row.diagnostic = e.what();
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

inline std::string ablation_csv(const std::vector<AblationRow>& rows) {
    std::string out = "axis,variant,accuracy\n";
    for (const auto& r : rows)
        if (r.accuracy) out += r.axis + "," + r.variant + "," + format_double(*r.accuracy) + "\n";
    return out;
}

// ---------------------------------------------------------------------------
// PCA scatter

struct Projection2D {
    std::vector<std::array<double, 2>> points;
    std::array<std::vector<double>, 2> components;
};

/// Top-2 principal components of centered features. Each component's sign makes
/// its largest-magnitude loading positive (first index on ties).
inline Projection2D pca2(const Features& x) {
    if (x.size() < 2) throw std::invalid_argument("pca2: need at least 2 samples, got " + std::to_string(x.size()));
    const std::size_t n = x.size(), D = x.front().size();
    Eigen::MatrixXd X(n, D);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t d = 0; d < D; ++d) X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(d)) = x[i][d];
    X.rowwise() -= X.colwise().mean();
    const Eigen::MatrixXd C = X.transpose() * X / static_cast<double>(n);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(C);
    Projection2D out;
    for (int k = 0; k < 2; ++k) {
        const Eigen::Index col = static_cast<Eigen::Index>(D) - 1 - k;
        Eigen::VectorXd v = col >= 0 ? Eigen::VectorXd(es.eigenvectors().col(col)) : Eigen::VectorXd::Zero(static_cast<Eigen::Index>(D));
        Eigen::Index arg = 0;
        for (Eigen::Index d = 1; d < v.size(); ++d)
            if (std::abs(v(d)) > std::abs(v(arg))) arg = d;
        if (v.size() && v(arg) < 0) v = -v;
        out.components[static_cast<std::size_t>(k)].assign(v.data(), v.data() + v.size());
        const Eigen::VectorXd proj = X * v;
        if (out.points.empty()) out.points.resize(n);
        for (std::size_t i = 0; i < n; ++i) out.points[i][static_cast<std::size_t>(k)] = proj(static_cast<Eigen::Index>(i));
    }
    return out;
}

/// Binary PPM scatter of the 2-D projection, one color per label.
inline std::string scatter_ppm(const Projection2D& proj, const std::vector<int>& labels, std::size_t size = 256) {
    static constexpr std::array<std::array<unsigned char, 3>, 8> palette{{{230, 25, 75},
                                                                         {60, 180, 75},
                                                                         {0, 130, 200},
                                                                         {245, 130, 48},
                                                                         {145, 30, 180},
                                                                         {70, 240, 240},
                                                                         {240, 50, 230},
                                                                         {128, 128, 0}}};
    std::vector<unsigned char> px(size * size * 3, 255);
    std::array<double, 2> lo{1e300, 1e300}, hi{-1e300, -1e300};
    for (const auto& p : proj.points)
        for (int k = 0; k < 2; ++k) {
            lo[k] = std::min(lo[k], p[k]);
            hi[k] = std::max(hi[k], p[k]);
        }
    const double margin = 8;
    const auto to_pixel = [&](double v, int k) {
        if (hi[k] - lo[k] < 1e-12) return static_cast<long>(size / 2);
        return static_cast<long>(std::lround(margin + (v - lo[k]) / (hi[k] - lo[k]) * (static_cast<double>(size) - 2 * margin)));
    };
    for (std::size_t i = 0; i < proj.points.size(); ++i) {
        const long cx = to_pixel(proj.points[i][0], 0);
        const long cy = static_cast<long>(size) - 1 - to_pixel(proj.points[i][1], 1);
        const auto& col = palette[static_cast<std::size_t>(labels[i]) % palette.size()];
        for (long dy = -1; dy <= 1; ++dy)
            for (long dx = -1; dx <= 1; ++dx) {
                const long x = cx + dx, y = cy + dy;
                if (x < 0 || y < 0 || x >= static_cast<long>(size) || y >= static_cast<long>(size)) continue;
                for (int c = 0; c < 3; ++c) px[(static_cast<std::size_t>(y) * size + static_cast<std::size_t>(x)) * 3 + c] = col[c];
            }
    }
    std::string out = "P6\n" + std::to_string(size) + " " + std::to_string(size) + "\n255\n";
    out.append(reinterpret_cast<const char*>(px.data()), px.size());
    return out;
}

inline Projection2D embed_scatter(const Features& x, const std::vector<int>& labels, const fs::path& out_path) {
    if (x.size() != labels.size()) throw std::invalid_argument("embed_scatter: feature/label count mismatch");
    auto proj = pca2(x);
    std::error_code ec;
    if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path(), ec);
    synthdata::detail::write_atomic(out_path, scatter_ppm(proj, labels));
    return proj;
}

/// Mean silhouette coefficient under Euclidean distance. Singleton clusters score 0.
inline double silhouette(const Features& x, const std::vector<int>& labels) {
    const std::size_t n = x.size();
    if (n < 2) throw std::invalid_argument("silhouette: need at least 2 samples");
    std::vector<double> dist(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            double s = 0;
            for (std::size_t d = 0; d < x[i].size(); ++d) s += (x[i][d] - x[j][d]) * (x[i][d] - x[j][d]);
            dist[i * n + j] = dist[j * n + i] = std::sqrt(s);
        }
    const int K = *std::max_element(labels.begin(), labels.end()) + 1;
    double total = 0;
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> sum(static_cast<std::size_t>(K), 0.0);
        std::vector<std::size_t> cnt(static_cast<std::size_t>(K), 0);
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            sum[static_cast<std::size_t>(labels[j])] += dist[i * n + j];
            ++cnt[static_cast<std::size_t>(labels[j])];
        }
        const auto own = static_cast<std::size_t>(labels[i]);
        if (cnt[own] == 0) continue;
        const double a = sum[own] / static_cast<double>(cnt[own]);
        double b = 1e300;
        for (std::size_t k = 0; k < static_cast<std::size_t>(K); ++k)
            if (k != own && cnt[k] > 0) b = std::min(b, sum[k] / static_cast<double>(cnt[k]));
        if (b == 1e300) continue;
        const double denom = std::max(a, b);
        total += denom > 0 ? (b - a) / denom : 0.0;
    }
    return total / static_cast<double>(n);
}

}  // namespace pointsd::evaluation
