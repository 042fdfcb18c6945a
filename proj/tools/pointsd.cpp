// pointsd: command-line entry point for the point-cloud/diffusion pretraining pipeline.
//
//   pointsd gen-data --out runs/a
//   pointsd stage0   --out runs/a --set stage0.epochs=8
//   pointsd stage1   --out runs/a
//   pointsd stage2   --out runs/a
//   pointsd probe    --out runs/a
//
// Exit codes: 0 success, 2 config error, 3 missing artifact, 4 runtime failure.

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "pointsd/pipeline.hpp"

namespace fs = std::filesystem;
using namespace pointsd;

namespace {

constexpr const char* kToolVersion = "pointsd 1.0.0";

enum Exit { kOk = 0, kConfigError = 2, kMissingArtifact = 3, kRuntimeFailure = 4 };

struct Options {
    std::string config_path;
    std::vector<std::string> overrides;
    std::string out;
    std::optional<std::uint64_t> seed;
    bool quiet = false;
};

std::string timestamp() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

/// Comment lines carry run metadata; the remaining `key = value` lines are the
/// resolved config, so the manifest itself is a valid --config file.
class Manifest {
public:
    Manifest(fs::path path, std::string verb, const config::RunConfig& cfg)
        : path_(std::move(path)), verb_(std::move(verb)), config_(config::dump(cfg)), seed_(cfg.seed),
          hash_(config::hex64(config::config_hash(cfg))), started_(timestamp()) {}

    void artifact(const fs::path& p) { artifacts_.push_back(p.string()); }
    void write(const std::string& status, int exit_code, const std::string& finished = {}) const {
        std::string s = "# pointsd run manifest\n";
        s += "# tool_version = " + std::string(kToolVersion) + "\n";
        s += "# verb = " + verb_ + "\n";
        s += "# seed = " + std::to_string(seed_) + "\n";
        s += "# config_hash = " + hash_ + "\n";
        s += "# started = " + started_ + "\n";
        s += "# finished = " + (finished.empty() ? std::string("-") : finished) + "\n";
        s += "# status = " + status + "\n";
        s += "# exit_code = " + std::to_string(exit_code) + "\n";
        for (const auto& a : artifacts_) s += "# artifact = " + a + "\n";
        s += config_;
        std::error_code ec;
        fs::create_directories(path_.parent_path(), ec);
        synthdata::detail::write_atomic(path_, s);
    }

private:
    fs::path path_;
    std::string verb_, config_;
    std::uint64_t seed_;
    std::string hash_, started_;
    std::vector<std::string> artifacts_;
};

fs::path resolve_out(const Options& o) {
    if (!o.out.empty()) return o.out;
    if (const char* env = std::getenv("POINTSD_OUT"); env && *env) return env;
    return "runs";
}

config::RunConfig resolve_config(const Options& o) {
    auto overrides = o.overrides;
    if (o.seed) overrides.push_back("run.seed=" + std::to_string(*o.seed));
    return config::parse_config(o.config_path, overrides);
}

int execute(const std::string& verb, const Options& opts) {
    const auto log = [&](const std::string& msg) {
        if (!opts.quiet) std::cerr << "[" << verb << "] " << msg << std::endl;
    };
    config::RunConfig cfg;
    try {
        cfg = resolve_config(opts);
    } catch (const config::ConfigError& e) {
        std::cerr << "pointsd " << verb << ": " << e.what() << "\n";
        return kConfigError;
    }
    const fs::path out = resolve_out(opts);
    Manifest manifest(out / "manifests" / (verb + ".manifest.txt"), verb, cfg);
    int code = kOk;
    std::string status = "success";
    try {
        manifest.write("running", -1);
        const fs::path droot = pipeline::data_root(cfg, out);
        const auto data = [&] { return pipeline::load_data(cfg, droot); };

        if (verb == "gen-data") {
            synthdata::build_dataset(cfg.data, droot);
            manifest.artifact(droot);
            log("wrote " + std::to_string(cfg.data.categories.size() * cfg.data.samples_per_category) + " samples to " +
                droot.string());
        } else if (verb == "stage0" || verb == "stage1" || verb == "stage2") {
            const int stage = verb.back() - '0';
            auto d = data();
            pipeline::run_stage(stage, cfg, *d, out, out, log);
            manifest.artifact(pipeline::checkpoint_path(out, stage));
        } else if (verb == "probe" || verb == "finetune" || verb == "fewshot" || verb == "plot") {
            auto d = data();
            auto m = pipeline::model_from(cfg, pipeline::checkpoint_path(out, 2), {"f."});
            const auto hash = config::hex64(config::config_hash(cfg));
            if (verb == "probe") {
                const double acc = evaluation::linear_probe(*m, d->train, d->test, cfg, cfg.seed);
                evaluation::write_report(out / "probe", evaluation::make_report("linear_probe_accuracy", {acc}, hash));
                log("linear probe accuracy " + evaluation::format_double(acc));
                manifest.artifact(out / "probe" / "summary.txt");
            } else if (verb == "finetune") {
                const double acc = evaluation::finetune(*m, d->train, d->test, cfg, cfg.seed);
                evaluation::write_report(out / "finetune", evaluation::make_report("finetune_accuracy", {acc}, hash));
                log("fine-tune accuracy " + evaluation::format_double(acc));
                manifest.artifact(out / "finetune" / "summary.txt");
            } else if (verb == "fewshot") {
                const evaluation::EpisodeSpec spec{cfg.fewshot_n, cfg.fewshot_k, cfg.fewshot_test, cfg.seed};
                const auto report = evaluation::fewshot_eval(*m, d->all, cfg, spec, cfg.fewshot_runs);
                evaluation::write_report(out / "fewshot", report);
                log(report.metric + " mean " + evaluation::format_double(report.mean) + " std " +
                    evaluation::format_double(report.std));
                manifest.artifact(out / "fewshot" / "summary.txt");
            } else {
                const auto feats = evaluation::pooled_features(*m, d->test);
                const auto labels = evaluation::labels_of(d->test);
                evaluation::embed_scatter(feats, labels, out / "plot" / "scatter.ppm");
                const double sil = evaluation::silhouette(feats, labels);
                synthdata::detail::write_atomic(out / "plot" / "summary.txt",
                                                "silhouette = " + evaluation::format_double(sil) + "\n");
                log("silhouette " + evaluation::format_double(sil));
                manifest.artifact(out / "plot" / "scatter.ppm");
            }
        } else if (verb == "ablate") {
            auto d = data();
            if (cfg.ablation_train) pipeline::train_ablation_variants(cfg, *d, out, log);
            const auto rows = evaluation::ablation_harness(cfg, out, d->train, d->test);
            for (const auto& r : rows)
                if (!r.accuracy) std::cerr << "pointsd ablate: skipping " << r.axis << "=" << r.variant << ": " << r.diagnostic << "\n";
            const fs::path csv = out / ("ablation_" + cfg.ablation_axis + ".csv");
            synthdata::detail::write_atomic(csv, evaluation::ablation_csv(rows));
            manifest.artifact(csv);
            log("wrote " + csv.string());
        } else if (verb == "sample") {
            const auto cat = synthdata::category_from_name(cfg.sample_category);
            const auto it = std::find(cfg.data.categories.begin(), cfg.data.categories.end(), cat);
            if (it == cfg.data.categories.end()) {
                throw config::ConfigError("sample.category", "", "category is not part of data.categories");
            }
            const int label = static_cast<int>(it - cfg.data.categories.begin());
            auto m = pipeline::model_from(cfg, pipeline::checkpoint_path(out, 0), pipeline::inherited_prefixes(1));
            const auto sched = config::schedule(cfg);
            training::Graph g(false);
            const auto cond = training::category_condition(g, *m, {label})->val();
            for (std::size_t i = 0; i < cfg.sample_count; ++i) {
                Rng rng(derive_seed(cfg.seed, {training::kSampleTag, i}));
                synthdata::RenderedImage img;
                img.pixels = diffusion::ancestral_sample(m->unet, cond, sched, rng, cfg.data.height, cfg.data.width);
                const fs::path p = out / "samples" / (cfg.sample_category + "_" + std::to_string(i) + ".pgm");
                std::error_code ec;
                fs::create_directories(p.parent_path(), ec);
                synthdata::detail::write_atomic(p, synthdata::encode_pgm(img));
                manifest.artifact(p);
            }
            log("wrote " + std::to_string(cfg.sample_count) + " samples");
        }
    } catch (const config::ConfigError& e) {
        std::cerr << "pointsd " << verb << ": " << e.what() << "\n";
        code = kConfigError;
    } catch (const pipeline::MissingArtifact& e) {
        std::cerr << "pointsd " << verb << ": " << e.what() << "\n";
        code = kMissingArtifact;
    } catch (const std::exception& e) {
        std::cerr << "pointsd " << verb << ": " << e.what() << "\n";
        code = kRuntimeFailure;
    }
    if (code != kOk) status = "failed";
    try {
        manifest.write(status, code, timestamp());
    } catch (const std::exception& e) {
        std::cerr << "pointsd " << verb << ": cannot write manifest: " << e.what() << "\n";
        if (code == kOk) code = kRuntimeFailure;
    }
    return code;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Diffusion-assisted point-cloud pretraining at desk scale"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kToolVersion);
    Options opts;
    const std::vector<std::pair<std::string, std::string>> verbs{
        {"gen-data", "Generate the synthetic shape corpus"},
        {"stage0", "Pretrain the category-conditioned diffusion model"},
        {"stage1", "Train the point-cloud condition encoder and cross-attention keys/values"},
        {"stage2", "Align a fresh backbone and projector to frozen diffusion features"},
        {"probe", "Linear probe on the Stage-II backbone"},
        {"finetune", "Fine-tune the Stage-II backbone with a linear head"},
        {"fewshot", "n-way k-shot episodes on the Stage-II backbone"},
        {"ablate", "Probe every variant of ablation.axis"},
        {"sample", "Draw images from the Stage-0 model for sample.category"},
        {"plot", "PCA scatter of Stage-II test features"},
    };
    for (const auto& [name, help] : verbs) {
        auto* sub = app.add_subcommand(name, help);
        sub->add_option("--config", opts.config_path, "Config file (key = value lines)");
        sub->add_option("--set", opts.overrides, "Override, key=value (repeatable)")->expected(1)->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
        sub->add_option("--out", opts.out, "Output directory (default $POINTSD_OUT or ./runs)");
        sub->add_option("--seed", opts.seed, "Master seed (overrides run.seed)");
        sub->add_flag("--quiet", opts.quiet, "Suppress progress output");
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kOk : kConfigError;
    }
    return execute(app.get_subcommands().front()->get_name(), opts);
}
