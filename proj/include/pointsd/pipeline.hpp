#pragma once

#include <algorithm>
#include <filesystem>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "pointsd/evaluation.hpp"

// Stage composition over an output directory:
//   <out>/data/...            corpus (data.root, relative to <out> unless absolute)
//   <out>/stage{0,1,2}.ckpt   checkpoints with .meta.txt sidecars
//   <out>/ablation/<axis>/<variant>/stage{1,2}.ckpt
namespace pointsd::pipeline {

namespace fs = std::filesystem;
using config::RunConfig;
using training::Model;
using training::TrainItem;

/// A required input (dataset, checkpoint) does not exist.
class MissingArtifact : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

using Logger = std::function<void(const std::string&)>;

inline fs::path data_root(const RunConfig& cfg, const fs::path& out) {
    const fs::path p(cfg.data_root);
    return p.is_absolute() ? p : out / p;
}

inline fs::path checkpoint_path(const fs::path& dir, int stage) { return dir / ("stage" + std::to_string(stage) + ".ckpt"); }

inline void require_file(const fs::path& p, const std::string& what) {
    if (!fs::exists(p)) throw MissingArtifact(what + " not found: " + p.string());
}

struct Data {
    synthdata::Dataset dataset;
    std::vector<TrainItem> train;
    std::vector<TrainItem> test;
    std::vector<TrainItem> all;
};

/// Loads the corpus and checks that its manifest agrees with the data.* keys.
inline std::unique_ptr<Data> load_data(const RunConfig& cfg, const fs::path& root) {
    require_file(root / "manifest.txt", "dataset manifest");
    auto d = std::make_unique<Data>();
    d->dataset = synthdata::load_dataset(root);
    const auto& got = d->dataset.config;
    const auto& want = cfg.data;
    const auto mismatch = [&](const std::string& key) {
        throw config::ConfigError(key, "", "disagrees with dataset manifest at " + (root / "manifest.txt").string());
    };
    if (got.categories != want.categories) mismatch("data.categories");
    if (got.samples_per_category != want.samples_per_category) mismatch("data.samples_per_category");
    if (got.points != want.points) mismatch("data.points");
    if (got.views != want.views) mismatch("data.views");
    if (got.height != want.height) mismatch("data.height");
    if (got.width != want.width) mismatch("data.width");
    if (got.seed != want.seed) mismatch("data.seed");
    if (got.train_per_category() != want.train_per_category()) mismatch("data.train_fraction");
    d->train = training::prepare_items(d->dataset.train, cfg);
    d->test = training::prepare_items(d->dataset.test, cfg);
    d->all = d->train;
    d->all.insert(d->all.end(), d->test.begin(), d->test.end());
    std::sort(d->all.begin(), d->all.end(), [](const TrainItem& a, const TrainItem& b) { return a.id < b.id; });
    return d;
}

/// Corpus generated in memory, without touching disk.
inline std::unique_ptr<Data> generate_data(const RunConfig& cfg) {
    auto d = std::make_unique<Data>();
    d->dataset = synthdata::generate_dataset(cfg.data);
    d->train = training::prepare_items(d->dataset.train, cfg);
    d->test = training::prepare_items(d->dataset.test, cfg);
    d->all = d->train;
    d->all.insert(d->all.end(), d->test.begin(), d->test.end());
    std::sort(d->all.begin(), d->all.end(), [](const TrainItem& a, const TrainItem& b) { return a.id < b.id; });
    return d;
}

inline training::EpochHook epoch_logger(const std::string& stage, const Logger& log) {
    if (!log) return {};
    return [stage, log](std::size_t epoch, double loss) {
        log(stage + " epoch " + std::to_string(epoch) + " loss " + evaluation::format_double(loss));
    };
}

inline training::Checkpoint load_required(const fs::path& p, const std::string& what) {
    require_file(p, what);
    return training::load_checkpoint(p);
}

/// Prefixes each stage inherits from the previous checkpoint.
inline std::vector<std::string> inherited_prefixes(int stage) {
    if (stage == 1) return {"unet.", training::kCategoryTable};
    if (stage == 2) return {"unet.", training::kCategoryTable, "g."};
    return {};
}

/// Trains stage `stage` (0, 1 or 2) into `out`; stages 1 and 2 read the previous
/// stage's checkpoint from `from`.
inline std::vector<double> run_stage(int stage, const RunConfig& cfg, const Data& data, const fs::path& from,
                                     const fs::path& out, const Logger& log = {}) {
    auto m = std::make_unique<Model>(cfg);
    if (stage > 0) {
        const auto prev = checkpoint_path(from, stage - 1);
        training::restore(m->store, load_required(prev, "stage-" + std::to_string(stage - 1) + " checkpoint"),
                          inherited_prefixes(stage));
    }
    const std::string name = "stage" + std::to_string(stage);
    const auto hook = epoch_logger(name, log);
    std::vector<double> history;
    if (stage == 0) history = training::train_stage0(*m, data.train, cfg, hook);
    else if (stage == 1) history = training::train_stage1(*m, data.train, cfg, hook);
    else if (stage == 2) history = training::train_stage2(*m, data.train, cfg, hook);
    else throw std::invalid_argument("unknown stage " + std::to_string(stage));
    training::save_checkpoint(m->store, training::make_meta(name, cfg, history), checkpoint_path(out, stage));
    return history;
}

/// Model with the listed prefixes restored from a checkpoint.
inline std::unique_ptr<Model> model_from(const RunConfig& cfg, const fs::path& ckpt, const std::vector<std::string>& prefixes) {
    auto m = std::make_unique<Model>(cfg);
    training::restore(m->store, load_required(ckpt, "checkpoint"), prefixes);
    return m;
}

/// Trains every missing checkpoint of an ablation axis under <root>/ablation,
/// reusing <root>/stage0.ckpt and, where the variant leaves Stage I unchanged,
/// <root>/stage1.ckpt.
inline void train_ablation_variants(const RunConfig& cfg, const Data& data, const fs::path& root, const Logger& log = {}) {
    const auto& axis = cfg.ablation_axis;
    for (const auto& variant : evaluation::ablation_variants(axis)) {
        const auto vcfg = evaluation::variant_config(cfg, axis, variant);
        const auto dir = evaluation::variant_dir(root, axis, variant);
        const bool own_stage1 = axis == "augmentation" || axis == "t_interval";
        fs::path stage1_dir = root;
        if (axis == "stages" && variant == "without_alignment") {
            if (!fs::exists(checkpoint_path(dir, 1))) {
                const auto src = checkpoint_path(root, 1);
                require_file(src, "stage-1 checkpoint");
                fs::create_directories(dir);
                fs::copy_file(src, checkpoint_path(dir, 1), fs::copy_options::overwrite_existing);
                fs::copy_file(training::meta_path(src), training::meta_path(checkpoint_path(dir, 1)),
                              fs::copy_options::overwrite_existing);
            }
            continue;
        }
        if (own_stage1) {
            if (!fs::exists(checkpoint_path(dir, 1))) {
                if (log) log("ablation " + axis + "=" + variant + ": stage1");
                run_stage(1, vcfg, data, root, dir, log);
            }
            stage1_dir = dir;
        }
        if (!fs::exists(checkpoint_path(dir, 2))) {
            if (log) log("ablation " + axis + "=" + variant + ": stage2");
            run_stage(2, vcfg, data, stage1_dir, dir, log);
        }
    }
}

}  // namespace pointsd::pipeline
