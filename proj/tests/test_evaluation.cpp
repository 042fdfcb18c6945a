#include <gtest/gtest.h>

#include <filesystem>
#include <set>
#include <unistd.h>

#include "pointsd/pipeline.hpp"
#include "support.hpp"

using namespace pointsd;
using namespace pointsd::evaluation;
using namespace pointsd::testing;
using training::Model;
namespace fs = std::filesystem;

namespace {

struct TinyData {
    config::RunConfig cfg = tiny_config();
    std::unique_ptr<pipeline::Data> data = pipeline::generate_data(cfg);
};

const TinyData& tiny() {
    static const TinyData d;
    return d;
}

fs::path scratch_dir(const std::string& tag) {
    auto p = fs::temp_directory_path() / ("pointsd_eval_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) { return synthdata::detail::read_file(p); }

}  // namespace

TEST(Report, MeanAndSampleStd) {
    const auto r = make_report("acc", {0.25, 0.5, 0.75, 1.0});
    EXPECT_DOUBLE_EQ(r.mean, 0.625);
    EXPECT_DOUBLE_EQ(r.std, std::sqrt(0.3125 / 3));
    EXPECT_EQ(make_report("one", {0.4}).std, 0.0);
    EXPECT_EQ(make_report("none", {}).mean, 0.0);
}

TEST(Report, FilesRecomputeExactly) {
    const auto dir = scratch_dir("report");
    const auto r = make_report("acc", {0.1, 0.7, 0.3}, "abc");
    write_report(dir, r);
    const auto csv = slurp(dir / "report.csv");
    EXPECT_TRUE(csv.starts_with("run_id,accuracy\n"));
    std::istringstream in(csv);
    std::string line;
    std::getline(in, line);
    std::vector<double> back;
    while (std::getline(in, line)) back.push_back(std::stod(line.substr(line.find(',') + 1)));
    const auto again = make_report("acc", back);
    EXPECT_EQ(again.mean, r.mean);
    EXPECT_EQ(again.std, r.std);
    const auto summary = slurp(dir / "summary.txt");
    EXPECT_NE(summary.find("mean = " + format_double(r.mean) + "\n"), std::string::npos);
    EXPECT_NE(summary.find("std = " + format_double(r.std) + "\n"), std::string::npos);
    EXPECT_NE(summary.find("config_hash = abc"), std::string::npos);
    fs::remove_all(dir);
}

TEST(Episodes, FiveWayTenShotArithmeticAndDisjointness) {
    std::vector<int> labels;
    for (int c = 0; c < 8; ++c)
        for (int i = 0; i < 200; ++i) labels.push_back(c);
    const EpisodeSpec spec{5, 10, 20, 9};
    for (std::size_t run = 0; run < 100; ++run) {
        const auto ep = sample_episode(labels, 8, spec, run);
        ASSERT_EQ(ep.train.size(), 50u);
        ASSERT_EQ(ep.test.size(), 100u);
        EXPECT_EQ(std::set<int>(ep.classes.begin(), ep.classes.end()).size(), 5u);
        const std::set<std::size_t> tr(ep.train.begin(), ep.train.end()), te(ep.test.begin(), ep.test.end());
        EXPECT_EQ(tr.size(), 50u);
        EXPECT_EQ(te.size(), 100u);
        for (auto i : tr) EXPECT_FALSE(te.count(i));
        std::vector<int> per_train(5, 0), per_test(5, 0);
        for (std::size_t i = 0; i < 50; ++i) {
            ++per_train[ep.train_labels[i]];
            EXPECT_EQ(labels[ep.train[i]], ep.classes[ep.train_labels[i]]);
        }
        for (std::size_t i = 0; i < 100; ++i) {
            ++per_test[ep.test_labels[i]];
            EXPECT_EQ(labels[ep.test[i]], ep.classes[ep.test_labels[i]]);
        }
        EXPECT_EQ(per_train, std::vector<int>(5, 10));
        EXPECT_EQ(per_test, std::vector<int>(5, 20));
    }
}

TEST(Episodes, ReproducibleFromSeed) {
    std::vector<int> labels;
    for (int c = 0; c < 6; ++c)
        for (int i = 0; i < 40; ++i) labels.push_back(c);
    const EpisodeSpec spec{5, 10, 20, 3};
    const auto a = sample_episode(labels, 6, spec, 4), b = sample_episode(labels, 6, spec, 4);
    EXPECT_EQ(a.train, b.train);
    EXPECT_EQ(a.test, b.test);
    EXPECT_EQ(a.classes, b.classes);
    EXPECT_NE(sample_episode(labels, 6, spec, 5).train, a.train);
    EXPECT_NE(sample_episode(labels, 6, {5, 10, 20, 4}, 4).train, a.train);
}

TEST(Episodes, UnsatisfiableSpecRejected) {
    std::vector<int> labels(30);
    for (std::size_t i = 0; i < 30; ++i) labels[i] = static_cast<int>(i % 3);
    EXPECT_THROW(sample_episode(labels, 3, {4, 2, 2, 0}, 0), std::invalid_argument);
    EXPECT_THROW(sample_episode(labels, 3, {2, 6, 5, 0}, 0), std::invalid_argument);
    EXPECT_NO_THROW(sample_episode(labels, 3, {3, 5, 5, 0}, 0));
}

TEST(LinearHead, SeparableFeaturesAndRejection) {
    Features x, tx;
    std::vector<int> y, ty;
    Rng rng(3);
    for (int i = 0; i < 600; ++i) {
        const int c = i % 3;
        std::vector<float> f(4);
        for (auto& v : f) v = static_cast<float>(0.1 * rng.normal());
        f[static_cast<std::size_t>(c)] += 3;
        (i < 450 ? x : tx).push_back(f);
        (i < 450 ? y : ty).push_back(c);
    }
    const auto oc = config::parse_config("").probe;
    EXPECT_EQ(train_linear_head(x, y, tx, ty, 3, oc, 1), 1.0);
    EXPECT_EQ(train_linear_head(x, y, tx, ty, 3, oc, 1), train_linear_head(x, y, tx, ty, 3, oc, 1));
    y.pop_back();
    EXPECT_THROW(train_linear_head(x, y, tx, ty, 3, oc, 1), std::invalid_argument);
}

TEST(LinearProbe, EncoderBitFrozenAndDeterministic) {
    const auto& d = tiny();
    const Model m(d.cfg);
    const auto before = training::encode_checkpoint(m.store);
    const double a = linear_probe(m, d.data->train, d.data->test, d.cfg, 1);
    EXPECT_TRUE(training::encode_checkpoint(m.store) == before);
    EXPECT_EQ(linear_probe(m, d.data->train, d.data->test, d.cfg, 1), a);
    EXPECT_GE(a, 0.0);
    EXPECT_LE(a, 1.0);
    linear_probe(m, d.data->train, d.data->test, d.cfg, 1, Encoder::Condition);
    EXPECT_TRUE(training::encode_checkpoint(m.store) == before);
}

// 8 categories, 320 test samples; averaged over three label shuffles.
TEST(LinearProbe, ShuffledLabelsGiveChance) {
    const auto cfg = tiny_config({"data.categories=sphere,box,cylinder,cone,torus,pyramid,capsule,prism",
                                  "data.samples_per_category=200", "fewshot.test_per_class=3"});
    const auto data = pipeline::generate_data(cfg);
    const Model m(cfg);
    double mean = 0;
    for (std::uint64_t seed = 1; seed <= 3; ++seed) mean += linear_probe(m, data->train, data->test, cfg, seed, Encoder::Backbone, true);
    mean /= 3;
    EXPECT_NEAR(mean, 1.0 / 8, 0.05);
}

TEST(Finetune, DeterministicGivenSeed) {
    const auto& d = tiny();
    Model a(d.cfg), b(d.cfg);
    const double x = finetune(a, d.data->train, d.data->test, d.cfg, 5);
    const double y = finetune(b, d.data->train, d.data->test, d.cfg, 5);
    EXPECT_EQ(x, y);
    EXPECT_TRUE(training::encode_checkpoint(a.store) == training::encode_checkpoint(b.store));
    // Only f moves.
    const Model init(d.cfg);
    for (const auto& p : a.store) {
        if (p->name.starts_with("f.")) continue;
        EXPECT_EQ(p->value.storage(), init.store.find(p->name)->value.storage()) << p->name;
    }
}

TEST(Fewshot, ReportShapeDeterminismAndRestoredBackbone) {
    const auto& d = tiny();
    Model m(d.cfg);
    const EpisodeSpec spec{d.cfg.fewshot_n, d.cfg.fewshot_k, d.cfg.fewshot_test, d.cfg.seed};
    const auto r1 = fewshot_eval(m, d.data->all, d.cfg, spec, 3);
    const auto r2 = fewshot_eval(m, d.data->all, d.cfg, spec, 3);
    EXPECT_EQ(r1.values.size(), 3u);
    EXPECT_EQ(r1.values, r2.values);
    EXPECT_EQ(r1.metric, "fewshot_3way_2shot");

    auto full = tiny_config({"fewshot.full_finetune=true"});
    Model mf(full);
    const auto before = training::encode_checkpoint(mf.store);
    const auto rf = fewshot_eval(mf, d.data->all, full, spec, 2);
    EXPECT_EQ(rf.values.size(), 2u);
    // Each episode starts from the same backbone.
    EXPECT_TRUE(training::encode_checkpoint(mf.store) == before);
}

TEST(Pca, TwoPointsSpreadAlongFirstComponent) {
    const Features x{{1, 2, 3}, {3, 2, -1}};
    const auto p = pca2(x);
    const double half = std::sqrt(4.0 + 16.0) / 2;
    EXPECT_NEAR(std::abs(p.points[0][0]), half, 1e-9);
    EXPECT_NEAR(p.points[0][0], -p.points[1][0], 1e-9);
    EXPECT_NEAR(p.points[0][1], 0, 1e-9);
    EXPECT_NEAR(p.points[1][1], 0, 1e-9);
    // Largest loading is the third coordinate (-4 over the pair): made positive.
    EXPECT_GT(p.components[0][2], 0);
    EXPECT_NEAR(p.components[0][2], 4 / std::sqrt(20.0), 1e-9);
    EXPECT_THROW(pca2({{1, 2}}), std::invalid_argument);
}

TEST(Pca, DuplicateRowsCoincide) {
    Rng rng(4);
    Features x;
    for (int i = 0; i < 10; ++i) {
        std::vector<float> f(5);
        for (auto& v : f) v = static_cast<float>(rng.normal());
        x.push_back(f);
        if (i % 3 == 0) x.push_back(f);
    }
    const auto p = pca2(x);
    EXPECT_EQ(p.points[0], p.points[1]);
    EXPECT_EQ(p.points[4], p.points[5]);
}

TEST(Pca, ScatterFileIsDeterministicPpm) {
    const auto dir = scratch_dir("scatter");
    const Features x{{0, 0}, {1, 0}, {0, 1}, {1, 1}};
    embed_scatter(x, {0, 1, 2, 3}, dir / "a.ppm");
    embed_scatter(x, {0, 1, 2, 3}, dir / "b.ppm");
    const auto a = slurp(dir / "a.ppm");
    EXPECT_TRUE(a.starts_with("P6\n256 256\n255\n"));
    EXPECT_EQ(a.size(), std::string("P6\n256 256\n255\n").size() + 256 * 256 * 3);
    EXPECT_EQ(a, slurp(dir / "b.ppm"));
    EXPECT_THROW(embed_scatter(x, {0, 1}, dir / "c.ppm"), std::invalid_argument);
    fs::remove_all(dir);
}

TEST(Silhouette, HandComputedExample) {
    // Points 0,1 | 4,5 on a line: per-point scores 7/9, 5/7, 5/7, 7/9.
    EXPECT_NEAR(silhouette({{0}, {1}, {4}, {5}}, {0, 0, 1, 1}), 47.0 / 63, 1e-12);
    // Swapping labels across clusters makes it negative.
    EXPECT_LT(silhouette({{0}, {1}, {4}, {5}}, {0, 1, 0, 1}), 0);
    EXPECT_THROW(silhouette({{0}}, {0}), std::invalid_argument);
}

TEST(Ablation, VariantConfigs) {
    const auto cfg = tiny().cfg;
    EXPECT_EQ(variant_config(cfg, "condition", "zero").condition, config::Condition::Zero);
    EXPECT_EQ(variant_config(cfg, "tap", "mid").tap, diffusion::Tap::Mid);
    const auto low = variant_config(cfg, "t_interval", "low"), high = variant_config(cfg, "t_interval", "high");
    EXPECT_EQ(low.t_min, 1u);
    EXPECT_EQ(low.t_max, cfg.T / 2);
    EXPECT_EQ(high.t_min, cfg.T / 2);
    EXPECT_EQ(high.t_max, cfg.T);
    const auto none = variant_config(cfg, "augmentation", "none");
    EXPECT_EQ(none.stage1_aug, config::Augmentation::None);
    EXPECT_EQ(none.stage2_aug, config::Augmentation::None);
    EXPECT_THROW(ablation_variants("colour"), std::invalid_argument);
    EXPECT_EQ(variant_checkpoint("/r", "stages", "without_alignment").second, Encoder::Condition);
}

TEST(Ablation, MissingCheckpointSkipsRowWithDiagnostic) {
    const auto dir = scratch_dir("ablation");
    const auto& d = tiny();
    const Model m(variant_config(d.cfg, "condition", "pointcloud"));
    training::save_checkpoint(m.store, training::make_meta("stage2", d.cfg, {}),
                              variant_dir(dir, "condition", "pointcloud") / "stage2.ckpt");
    const auto rows = ablation_harness(d.cfg, dir, d.data->train, d.data->test);
    ASSERT_EQ(rows.size(), 3u);
    for (const auto& r : rows) {
        if (r.variant == "pointcloud") {
            ASSERT_TRUE(r.accuracy.has_value()) << r.diagnostic;
            EXPECT_EQ(*r.accuracy, linear_probe(m, d.data->train, d.data->test, d.cfg, d.cfg.seed));
        } else {
            EXPECT_FALSE(r.accuracy.has_value());
            EXPECT_NE(r.diagnostic.find((variant_dir(dir, "condition", r.variant) / "stage2.ckpt").string()),
                      std::string::npos)
                << r.diagnostic;
        }
    }
    const auto csv = ablation_csv(rows);
    EXPECT_EQ(csv, "axis,variant,accuracy\ncondition,pointcloud," + format_double(*rows[2].accuracy) + "\n");
    fs::remove_all(dir);
}
