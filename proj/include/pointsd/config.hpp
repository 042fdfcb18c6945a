#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "pointsd/core/rng.hpp"
#include "pointsd/diffusion.hpp"
#include "pointsd/encoders.hpp"
#include "pointsd/synthdata.hpp"

namespace pointsd::config {

/// Parse or validation failure. `key` and `where` ("line 12", "--set #2") are kept
/// separately so callers can report them.
class ConfigError : public std::runtime_error {
public:
    ConfigError(std::string key, std::string where, const std::string& what)
        : std::runtime_error(format(key, where, what)), key_(std::move(key)), where_(std::move(where)) {}
    const std::string& key() const noexcept { return key_; }
    const std::string& where() const noexcept { return where_; }

private:
    static std::string format(const std::string& key, const std::string& where, const std::string& what) {
        std::string s = "config";
        if (!where.empty()) s += " (" + where + ")";
        if (!key.empty()) s += ": key '" + key + "'";
        return s + ": " + what;
    }
    std::string key_, where_;
};

struct OptimConfig {
    std::size_t epochs = 60;
    double lr = 1e-3;
    double weight_decay = 0.05;
    std::size_t warmup_epochs = 5;
    std::size_t batch_size = 32;
};

enum class Augmentation { None, Mix, MixStitch };
enum class Condition { Zero, Category, PointCloud };
enum class Alignment { Pooled, Tokens };

inline const char* augmentation_name(Augmentation a) {
    return a == Augmentation::None ? "none" : a == Augmentation::Mix ? "mix" : "mix_stitch";
}
inline const char* condition_name(Condition c) {
    return c == Condition::Zero ? "zero" : c == Condition::Category ? "category" : "pointcloud";
}
inline const char* alignment_name(Alignment a) { return a == Alignment::Pooled ? "pooled" : "tokens"; }

struct RunConfig {
    std::uint64_t seed = 1;
    std::size_t threads = 0;  // 0 = hardware concurrency
    bool test_mode = false;
    std::string data_root = "data";

    synthdata::DatasetConfig data;
    std::size_t groups = 16;
    std::size_t group_size = 16;
    bool fps_random_start = false;
    double mix_ratio = 0.5;

    std::size_t T = 1000;
    double beta_start = 1e-4;
    double beta_end = 0.02;
    diffusion::UNetSpec unet;
    encoders::EncoderSpec encoder;
    encoders::ProjectorSpec projector;

    OptimConfig stage0{20, 2e-3, 0.0, 1, 32};
    std::size_t cond_tokens = 4;

    OptimConfig stage1;
    std::size_t t_min = 500;
    std::size_t t_max = 1000;
    Augmentation stage1_aug = Augmentation::MixStitch;

    OptimConfig stage2;
    diffusion::Tap tap = diffusion::Tap::DownLast;
    Condition condition = Condition::PointCloud;
    Augmentation stage2_aug = Augmentation::MixStitch;
    Alignment alignment = Alignment::Pooled;
    bool constant_target = false;

    OptimConfig probe{100, 1e-2, 1e-4, 0, 64};
    OptimConfig finetune{30, 5e-4, 0.05, 2, 32};
    double finetune_head_lr = 1e-2;

    std::size_t fewshot_n = 5;
    std::size_t fewshot_k = 10;
    std::size_t fewshot_test = 20;
    std::size_t fewshot_runs = 10;
    bool fewshot_full_finetune = false;

    std::string ablation_axis = "condition";
    bool ablation_train = false;
    std::string sample_category = "sphere";
    std::size_t sample_count = 4;
};

namespace detail {

inline std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

inline std::uint64_t parse_uint(const std::string& v) {
    std::uint64_t out = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || p != v.data() + v.size()) throw std::invalid_argument("expected a non-negative integer, got '" + v + "'");
    return out;
}
inline double parse_real(const std::string& v) {
    double out = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || p != v.data() + v.size() || !std::isfinite(out)) {
        throw std::invalid_argument("expected a real number, got '" + v + "'");
    }
    return out;
}
inline bool parse_bool(const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw std::invalid_argument("expected true or false, got '" + v + "'");
}
inline std::vector<std::string> split_list(const std::string& v) {
    std::vector<std::string> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (item.empty()) throw std::invalid_argument("empty list element in '" + v + "'");
        out.push_back(item);
    }
    if (out.empty()) throw std::invalid_argument("expected a non-empty list");
    return out;
}
inline std::string format_real(double v) {
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, p);
}

struct Field {
    std::function<void(RunConfig&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
};

template <class M>
Field uint_field(M RunConfig::*m) {
    return {[m](RunConfig& c, const std::string& v) { c.*m = static_cast<M>(parse_uint(v)); },
            [m](const RunConfig& c) { return std::to_string(c.*m); }};
}
template <class F>
Field uint_ref(F ref) {
    return {[ref](RunConfig& c, const std::string& v) {
                auto& x = ref(c);
                x = static_cast<std::remove_reference_t<decltype(x)>>(parse_uint(v));
            },
            [ref](const RunConfig& c) { return std::to_string(ref(const_cast<RunConfig&>(c))); }};
}
template <class F>
Field real_ref(F ref) {
    return {[ref](RunConfig& c, const std::string& v) { ref(c) = parse_real(v); },
            [ref](const RunConfig& c) { return format_real(ref(const_cast<RunConfig&>(c))); }};
}
template <class F>
Field bool_ref(F ref) {
    return {[ref](RunConfig& c, const std::string& v) { ref(c) = parse_bool(v); },
            [ref](const RunConfig& c) { return std::string(ref(const_cast<RunConfig&>(c)) ? "true" : "false"); }};
}

inline Augmentation parse_augmentation(const std::string& v) {
    if (v == "none") return Augmentation::None;
    if (v == "mix") return Augmentation::Mix;
    if (v == "mix_stitch") return Augmentation::MixStitch;
    throw std::invalid_argument("expected none, mix or mix_stitch, got '" + v + "'");
}
inline Condition parse_condition(const std::string& v) {
    if (v == "zero") return Condition::Zero;
    if (v == "category") return Condition::Category;
    if (v == "pointcloud") return Condition::PointCloud;
    throw std::invalid_argument("expected zero, category or pointcloud, got '" + v + "'");
}

inline void add_optim(std::map<std::string, Field>& f, const std::string& prefix, OptimConfig RunConfig::*m) {
    f[prefix + ".epochs"] = uint_ref([m](RunConfig& c) -> std::size_t& { return (c.*m).epochs; });
    f[prefix + ".lr"] = real_ref([m](RunConfig& c) -> double& { return (c.*m).lr; });
    f[prefix + ".weight_decay"] = real_ref([m](RunConfig& c) -> double& { return (c.*m).weight_decay; });
    f[prefix + ".warmup_epochs"] = uint_ref([m](RunConfig& c) -> std::size_t& { return (c.*m).warmup_epochs; });
    f[prefix + ".batch_size"] = uint_ref([m](RunConfig& c) -> std::size_t& { return (c.*m).batch_size; });
}

inline const std::map<std::string, Field>& fields() {
    static const std::map<std::string, Field> table = [] {
        std::map<std::string, Field> f;
        f["run.seed"] = uint_field(&RunConfig::seed);
        f["run.threads"] = uint_field(&RunConfig::threads);
        f["run.test_mode"] = bool_ref([](RunConfig& c) -> bool& { return c.test_mode; });

        f["data.root"] = {[](RunConfig& c, const std::string& v) { c.data_root = v; },
                          [](const RunConfig& c) { return c.data_root; }};
        f["data.categories"] = {[](RunConfig& c, const std::string& v) {
                                    c.data.categories.clear();
                                    for (const auto& n : split_list(v)) c.data.categories.push_back(synthdata::category_from_name(n));
                                },
                                [](const RunConfig& c) {
                                    std::string s;
                                    for (auto cat : c.data.categories) s += (s.empty() ? "" : ",") + std::string(synthdata::category_name(cat));
                                    return s;
                                }};
        f["data.samples_per_category"] = uint_ref([](RunConfig& c) -> std::size_t& { return c.data.samples_per_category; });
        f["data.points"] = uint_ref([](RunConfig& c) -> std::size_t& { return c.data.points; });
        f["data.views"] = uint_ref([](RunConfig& c) -> int& { return c.data.views; });
        f["data.height"] = uint_ref([](RunConfig& c) -> std::size_t& { return c.data.height; });
        f["data.width"] = uint_ref([](RunConfig& c) -> std::size_t& { return c.data.width; });
        f["data.seed"] = uint_ref([](RunConfig& c) -> std::uint64_t& { return c.data.seed; });
        f["data.train_fraction"] = real_ref([](RunConfig& c) -> double& { return c.data.train_fraction; });

        f["patch.groups"] = uint_field(&RunConfig::groups);
        f["patch.group_size"] = uint_field(&RunConfig::group_size);
        f["patch.random_start"] = bool_ref([](RunConfig& c) -> bool& { return c.fps_random_start; });
        f["aug.mix_ratio"] = real_ref([](RunConfig& c) -> double& { return c.mix_ratio; });

        f["diffusion.T"] = uint_field(&RunConfig::T);
        f["diffusion.beta_start"] = real_ref([](RunConfig& c) -> double& { return c.beta_start; });
        f["diffusion.beta_end"] = real_ref([](RunConfig& c) -> double& { return c.beta_end; });
        f["unet.widths"] = {[](RunConfig& c, const std::string& v) {
                                c.unet.widths.clear();
                                for (const auto& w : split_list(v)) c.unet.widths.push_back(parse_uint(w));
                            },
                            [](const RunConfig& c) {
                                std::string s;
                                for (auto w : c.unet.widths) s += (s.empty() ? "" : ",") + std::to_string(w);
                                return s;
                            }};
        f["unet.groups"] = uint_ref([](RunConfig& c) -> std::size_t& { return c.unet.groups; });
        f["unet.d_attn"] = uint_ref([](RunConfig& c) -> std::size_t& { return c.unet.d_attn; });
        f["unet.d_cond"] = uint_ref([](RunConfig& c) -> std::size_t& { return c.unet.d_cond; });
        f["unet.time_dim"] = uint_ref([](RunConfig& c) -> std::size_t& { return c.unet.time_dim; });

        f["encoder.d_model"] = uint_ref([](RunConfig& c) -> std::size_t& { return c.encoder.d_model; });
        f["encoder.depth"] = uint_ref([](RunConfig& c) -> std::size_t& { return c.encoder.depth; });
        f["encoder.heads"] = uint_ref([](RunConfig& c) -> std::size_t& { return c.encoder.heads; });
        f["projector.d_proj"] = uint_ref([](RunConfig& c) -> std::size_t& { return c.projector.d_proj; });
        f["projector.depth"] = uint_ref([](RunConfig& c) -> std::size_t& { return c.projector.depth; });
        f["projector.heads"] = uint_ref([](RunConfig& c) -> std::size_t& { return c.projector.heads; });

        add_optim(f, "stage0", &RunConfig::stage0);
        f["stage0.cond_tokens"] = uint_field(&RunConfig::cond_tokens);

        add_optim(f, "stage1", &RunConfig::stage1);
        f["stage1.t_min"] = uint_field(&RunConfig::t_min);
        f["stage1.t_max"] = uint_field(&RunConfig::t_max);
        f["stage1.augmentation"] = {[](RunConfig& c, const std::string& v) { c.stage1_aug = parse_augmentation(v); },
                                    [](const RunConfig& c) { return std::string(augmentation_name(c.stage1_aug)); }};

        add_optim(f, "stage2", &RunConfig::stage2);
        f["stage2.tap"] = {[](RunConfig& c, const std::string& v) { c.tap = diffusion::parse_tap(v); },
                           [](const RunConfig& c) { return std::string(diffusion::tap_name(c.tap)); }};
        f["stage2.condition"] = {[](RunConfig& c, const std::string& v) { c.condition = parse_condition(v); },
                                 [](const RunConfig& c) { return std::string(condition_name(c.condition)); }};
        f["stage2.augmentation"] = {[](RunConfig& c, const std::string& v) { c.stage2_aug = parse_augmentation(v); },
                                    [](const RunConfig& c) { return std::string(augmentation_name(c.stage2_aug)); }};
        f["stage2.alignment"] = {[](RunConfig& c, const std::string& v) {
                                     if (v == "pooled") c.alignment = Alignment::Pooled;
                                     else if (v == "tokens") c.alignment = Alignment::Tokens;
                                     else throw std::invalid_argument("expected pooled or tokens, got '" + v + "'");
                                 },
                                 [](const RunConfig& c) { return std::string(alignment_name(c.alignment)); }};
        f["stage2.constant_target"] = bool_ref([](RunConfig& c) -> bool& { return c.constant_target; });

        add_optim(f, "probe", &RunConfig::probe);
        add_optim(f, "finetune", &RunConfig::finetune);
        f["finetune.head_lr"] = real_ref([](RunConfig& c) -> double& { return c.finetune_head_lr; });

        f["fewshot.n"] = uint_field(&RunConfig::fewshot_n);
        f["fewshot.k"] = uint_field(&RunConfig::fewshot_k);
        f["fewshot.test_per_class"] = uint_field(&RunConfig::fewshot_test);
        f["fewshot.runs"] = uint_field(&RunConfig::fewshot_runs);
        f["fewshot.full_finetune"] = bool_ref([](RunConfig& c) -> bool& { return c.fewshot_full_finetune; });

        f["ablation.axis"] = {[](RunConfig& c, const std::string& v) {
                                  static const std::vector<std::string> axes{"condition", "tap", "t_interval",
                                                                             "augmentation", "stages"};
                                  if (std::find(axes.begin(), axes.end(), v) == axes.end()) {
                                      throw std::invalid_argument(
                                          "expected condition, tap, t_interval, augmentation or stages, got '" + v + "'");
                                  }
                                  c.ablation_axis = v;
                              },
                              [](const RunConfig& c) { return c.ablation_axis; }};
        f["ablation.train"] = bool_ref([](RunConfig& c) -> bool& { return c.ablation_train; });
        f["sample.category"] = {[](RunConfig& c, const std::string& v) {
                                    synthdata::category_from_name(v);
                                    c.sample_category = v;
                                },
                                [](const RunConfig& c) { return c.sample_category; }};
        f["sample.count"] = uint_field(&RunConfig::sample_count);
        return f;
    }();
    return table;
}

}  // namespace detail

inline std::vector<std::string> known_keys() {
    std::vector<std::string> out;
    for (const auto& [k, f] : detail::fields()) out.push_back(k);
    return out;
}

/// Applies one assignment. Unknown keys and malformed values raise ConfigError.
inline void apply(RunConfig& cfg, const std::string& key, const std::string& value, const std::string& where) {
    const auto& f = detail::fields();
    auto it = f.find(key);
    if (it == f.end()) throw ConfigError(key, where, "unknown key");
    try {
        it->second.set(cfg, value);
    } catch (const std::exception& e) {
        throw ConfigError(key, where, e.what());
    }
}

/// Cross-field constraints; `where` maps a key to where it was last set.
inline void validate(const RunConfig& c, const std::map<std::string, std::string>& where = {}) {
    const auto fail = [&](const std::string& key, const std::string& what) {
        auto it = where.find(key);
        throw ConfigError(key, it == where.end() ? "" : it->second, what);
    };
    if (c.T < 1) fail("diffusion.T", "must be >= 1");
    if (!(c.beta_start > 0 && c.beta_start < c.beta_end && c.beta_end < 1)) {
        fail("diffusion.beta_end", "need 0 < beta_start < beta_end < 1");
    }
    if (c.t_min < 1 || c.t_min > c.T) fail("stage1.t_min", "must lie in [1, T=" + std::to_string(c.T) + "]");
    if (c.t_max < 1 || c.t_max > c.T) fail("stage1.t_max", "must lie in [1, T=" + std::to_string(c.T) + "]");
    if (c.t_min > c.t_max) fail("stage1.t_min", "exceeds stage1.t_max");
    for (const auto& [name, o] : {std::pair{"stage0", &c.stage0}, std::pair{"stage1", &c.stage1},
                                  std::pair{"stage2", &c.stage2}, std::pair{"probe", &c.probe},
                                  std::pair{"finetune", &c.finetune}}) {
        const std::string n = name;
        if (o->warmup_epochs > o->epochs) fail(n + ".warmup_epochs", "exceeds " + n + ".epochs");
        if (o->batch_size < 1) fail(n + ".batch_size", "must be >= 1");
        if (!(o->lr > 0)) fail(n + ".lr", "must be positive");
        if (o->weight_decay < 0) fail(n + ".weight_decay", "must be non-negative");
    }
    if (c.data.categories.empty()) fail("data.categories", "needs at least one category");
    if (c.data.samples_per_category < 1) fail("data.samples_per_category", "must be >= 1");
    if (c.data.views < 1) fail("data.views", "must be >= 1");
    if (!(c.data.train_fraction > 0 && c.data.train_fraction < 1)) fail("data.train_fraction", "must lie in (0, 1)");
    if (c.groups < 1 || c.groups > c.data.points) fail("patch.groups", "must lie in [1, data.points]");
    if (c.group_size < 1 || c.group_size > c.data.points) fail("patch.group_size", "must lie in [1, data.points]");
    if (!(c.mix_ratio >= 0 && c.mix_ratio <= 1)) fail("aug.mix_ratio", "must lie in [0, 1]");
    if (c.unet.widths.empty()) fail("unet.widths", "needs at least one level");
    const std::size_t div = std::size_t{1} << c.unet.widths.size();
    if (c.data.height % div || c.data.width % div) {
        fail("data.height", "image size must be divisible by 2^levels = " + std::to_string(div));
    }
    for (auto w : c.unet.widths)
        if (c.unet.groups == 0 || w % c.unet.groups) fail("unet.groups", "must divide every UNet width");
    if (c.encoder.heads == 0 || c.encoder.d_model % c.encoder.heads) fail("encoder.heads", "must divide encoder.d_model");
    if (c.projector.heads == 0 || c.projector.d_proj % c.projector.heads) {
        fail("projector.heads", "must divide projector.d_proj");
    }
    if (c.cond_tokens < 1) fail("stage0.cond_tokens", "must be >= 1");
    if (c.fewshot_n < 1 || c.fewshot_n > c.data.categories.size()) fail("fewshot.n", "must lie in [1, categories]");
    if (c.fewshot_k < 1) fail("fewshot.k", "must be >= 1");
    if (c.fewshot_k + c.fewshot_test > c.data.samples_per_category) {
        fail("fewshot.k", "k + test_per_class exceeds data.samples_per_category");
    }
    if (c.fewshot_runs < 1) fail("fewshot.runs", "must be >= 1");
}

/// Parses `key = value` lines; `#` starts a comment.
inline void apply_text(RunConfig& cfg, const std::string& text, const std::string& source,
                       std::map<std::string, std::string>& where) {
    std::istringstream in(text);
    std::string raw;
    for (std::size_t line = 1; std::getline(in, raw); ++line) {
        const std::string loc = source + " line " + std::to_string(line);
        const auto hash = raw.find('#');
        const std::string body = detail::trim(hash == std::string::npos ? raw : raw.substr(0, hash));
        if (body.empty()) continue;
        const auto eq = body.find('=');
        if (eq == std::string::npos) throw ConfigError("", loc, "expected 'key = value', got '" + body + "'");
        const std::string key = detail::trim(body.substr(0, eq));
        apply(cfg, key, detail::trim(body.substr(eq + 1)), loc);
        where[key] = loc;
    }
}

/// Defaults, then the file (if any), then overrides ("key=value") in order.
inline RunConfig parse_config(const std::string& path, const std::vector<std::string>& overrides = {}) {
    RunConfig cfg;
    std::map<std::string, std::string> where;
    if (!path.empty()) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw ConfigError("", path, "cannot open config file");
        std::ostringstream ss;
        ss << in.rdbuf();
        apply_text(cfg, ss.str(), path, where);
    }
    for (std::size_t i = 0; i < overrides.size(); ++i) {
        const std::string loc = "--set #" + std::to_string(i + 1);
        const auto eq = overrides[i].find('=');
        if (eq == std::string::npos) throw ConfigError("", loc, "expected key=value, got '" + overrides[i] + "'");
        const std::string key = detail::trim(overrides[i].substr(0, eq));
        apply(cfg, key, detail::trim(overrides[i].substr(eq + 1)), loc);
        where[key] = loc;
    }
    validate(cfg, where);
    return cfg;
}

/// Every key in sorted order as `key = value`; parseable by parse_config.
inline std::string dump(const RunConfig& cfg) {
    std::string out;
    for (const auto& [k, f] : detail::fields()) out += k + " = " + f.get(cfg) + "\n";
    return out;
}

/// Stable 64-bit digest of the resolved configuration.
inline std::uint64_t config_hash(const RunConfig& cfg) { return fnv1a(dump(cfg)); }

inline std::string hex64(std::uint64_t v) {
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << v;
    return os.str();
}

inline diffusion::NoiseSchedule schedule(const RunConfig& c) {
    return diffusion::build_noise_schedule(c.T, c.beta_start, c.beta_end);
}

}  // namespace pointsd::config
