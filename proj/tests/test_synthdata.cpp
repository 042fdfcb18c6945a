#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "pointsd/synthdata.hpp"

using namespace pointsd;
using namespace pointsd::synthdata;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
    const auto p = fs::temp_directory_path() / ("pointsd_test_" + name + "_" + std::to_string(::getpid()));
    fs::remove_all(p);
    return p;
}

std::size_t lit(const RenderedImage& img) {
    std::size_t n = 0;
    for (float v : img.pixels.storage()) n += v > -1.0f;
    return n;
}

DatasetConfig small_config() {
    DatasetConfig cfg;
    cfg.categories = {Category::Sphere, Category::Box, Category::Torus};
    cfg.samples_per_category = 5;
    cfg.points = 64;
    cfg.views = 3;
    cfg.height = 16;
    cfg.width = 16;
    return cfg;
}

}  // namespace

TEST(Shapes, UnitSphereHasRadiusOne) {
    const auto pc = generate_shape({Category::Sphere, 1.0, {1, 1, 1}, {0, 0, 0}, 4}).sample(2000, 0);
    for (const auto& p : pc.points) EXPECT_NEAR(std::sqrt(geometry::squared_distance(p, {0, 0, 0})), 1.0, 1e-6);
}

TEST(Shapes, SameSpecIsBitIdentical) {
    for (int c = 0; c < 8; ++c) {
        const ShapeSpec spec{static_cast<Category>(c), 1.3, {1.1, 0.9, 1.2}, {0.3, -1.0, 2.0}, 77};
        EXPECT_EQ(generate_shape(spec).sample(300, 5), generate_shape(spec).sample(300, 5));
        EXPECT_NE(generate_shape(spec).sample(300, 5), generate_shape(spec).sample(300, 6));
        EXPECT_EQ(generate_shape(spec).label(), c);
    }
}

TEST(Shapes, BoxAspectBoundingBox) {
    const auto pc = generate_shape({Category::Box, 1.0, {1, 2, 3}, {0, 0, 0}, 9}).sample(10000, 0);
    std::array<double, 3> lo{1e9, 1e9, 1e9}, hi{-1e9, -1e9, -1e9};
    for (const auto& p : pc.points)
        for (int k = 0; k < 3; ++k) {
            lo[k] = std::min<double>(lo[k], p[k]);
            hi[k] = std::max<double>(hi[k], p[k]);
        }
    const double ex = hi[0] - lo[0];
    EXPECT_NEAR((hi[1] - lo[1]) / ex, 2.0, 0.1);
    EXPECT_NEAR((hi[2] - lo[2]) / ex, 3.0, 0.15);
}

TEST(Shapes, EveryCategoryProducesFiniteSurfacePoints) {
    for (int c = 0; c < 8; ++c) {
        const auto pc = generate_shape({static_cast<Category>(c), 2.0, {1, 1, 1}, {0, 0, 0}, 1}).sample(500, 0);
        ASSERT_EQ(pc.size(), 500u);
        for (const auto& p : pc.points)
            for (float v : p) ASSERT_TRUE(std::isfinite(v));
        EXPECT_EQ(category_from_name(category_name(static_cast<Category>(c))), static_cast<Category>(c));
    }
}

TEST(Shapes, RejectsOutOfBoundsParameters) {
    EXPECT_THROW(generate_shape({Category::Box, 0.01, {1, 1, 1}, {0, 0, 0}, 0}), std::invalid_argument);
    EXPECT_THROW(generate_shape({Category::Box, 1.0, {1, 9, 1}, {0, 0, 0}, 0}), std::invalid_argument);
    EXPECT_THROW(generate_shape({Category::Box, 1.0, {1, 1, 1}, {0, 4, 0}, 0}), std::invalid_argument);
    EXPECT_THROW(generate_shape({static_cast<Category>(11), 1.0, {1, 1, 1}, {0, 0, 0}, 0}), std::invalid_argument);
    EXPECT_THROW(category_from_name("teapot"), std::invalid_argument);
}

TEST(Render, OriginPointLightsCenterPixelInEveryView) {
    const geometry::PointCloud pc{{{0, 0, 0}}, std::nullopt};
    for (const auto& img : render_views(pc, 8, 32, 32)) {
        EXPECT_EQ(lit(img), 1u);
        EXPECT_GT(img.at(0, 16, 16), -1.0f);
    }
}

TEST(Render, EvenlySpacedAzimuths) {
    // A point on +x appears on the right at 0 degrees, at the center column at 90 and
    // 270, and on the left at 180.
    const geometry::PointCloud pc{{{0.9f, 0, 0}}, std::nullopt};
    const auto views = render_views(pc, 8, 32, 32);
    ASSERT_EQ(views.size(), 8u);
    const auto lit_col = [](const RenderedImage& img) {
        for (std::size_t x = 0; x < img.width(); ++x)
            if (img.at(0, 16, x) > -1.0f) return static_cast<int>(x);
        return -1;
    };
    EXPECT_EQ(lit_col(views[0]), 30);
    // cos(90 deg) is not exactly zero in floating point, so the splat may land on
    // either side of the center line.
    EXPECT_NEAR(lit_col(views[2]), 15.5, 0.5);
    EXPECT_EQ(lit_col(views[4]), 1);
    EXPECT_NEAR(lit_col(views[6]), 15.5, 0.5);
    for (int v = 0; v < 8; ++v) EXPECT_EQ(views[static_cast<std::size_t>(v)].view_index, v);
    // Nearer is brighter: at 270 degrees the point faces the camera, at 90 it is behind.
    const auto level = [&](int v) {
        const auto& img = views[static_cast<std::size_t>(v)];
        return img.at(0, 16, static_cast<std::size_t>(lit_col(img)));
    };
    EXPECT_GT(level(6), level(0));
    EXPECT_GT(level(0), level(2));
}

TEST(Render, SphereLitCountStableAcrossViews) {
    const auto pc = geometry::normalize_unit_sphere(generate_shape({Category::Sphere, 1.0, {1, 1, 1}, {0, 0, 0}, 3}).sample(4000, 0));
    std::size_t lo = SIZE_MAX, hi = 0;
    for (const auto& img : render_views(pc, 8, 32, 32)) {
        lo = std::min(lo, lit(img));
        hi = std::max(hi, lit(img));
    }
    EXPECT_LT(static_cast<double>(hi - lo) / static_cast<double>(hi), 0.10);
}

TEST(Render, DeterministicAndInRange) {
    const auto pc = make_sample(small_config(), 7).points;
    const auto a = render_view(pc, 2, 8, 32, 32), b = render_view(pc, 2, 8, 32, 32);
    EXPECT_EQ(a, b);
    for (float v : a.pixels.storage()) {
        EXPECT_GE(v, -1.0f);
        EXPECT_LE(v, 1.0f);
    }
}

TEST(Stitch, PlacementAndShape) {
    const auto cfg = small_config();
    const auto x = make_sample(cfg, 0).views[0], x2 = make_sample(cfg, 6).views[1];
    const auto s = stitch_images(x, x2);
    EXPECT_EQ(s.pixels.shape(), (pointsd::Shape{1, 16, 32}));
    Rng rng(4);
    for (int i = 0; i < 50; ++i) {
        const std::size_t r = rng.below(16), c = rng.below(16);
        EXPECT_EQ(s.at(0, r, c), x.at(0, r, c));
        EXPECT_EQ(s.at(0, r, 16 + c), x2.at(0, r, c));
    }
    const auto same = stitch_images(x, x);
    for (std::size_t r = 0; r < 16; ++r)
        for (std::size_t c = 0; c < 16; ++c) EXPECT_EQ(same.at(0, r, c), same.at(0, r, c + 16));
    double ma = 0, mb = 0, ms = 0;
    for (float v : x.pixels.storage()) ma += v;
    for (float v : x2.pixels.storage()) mb += v;
    for (float v : s.pixels.storage()) ms += v;
    EXPECT_NEAR(ms / 512, 0.5 * (ma / 256 + mb / 256), 1e-12);
}

TEST(Stitch, RejectsHeightMismatch) {
    RenderedImage a{Tensor<float>({1, 16, 16}), 0}, b{Tensor<float>({1, 8, 16}), 0};
    EXPECT_THROW(stitch_images(a, b), std::invalid_argument);
}

TEST(Formats, PgmAndPointsRoundTrip) {
    const auto rec = make_sample(small_config(), 3);
    for (const auto& v : rec.views) EXPECT_EQ(decode_pgm(encode_pgm(v), v.view_index), v);
    auto pts = decode_points(encode_points(rec.points));
    pts.label = rec.points.label;
    EXPECT_EQ(pts, rec.points);
    const auto pgm = encode_pgm(rec.views[0]);
    EXPECT_EQ(pgm.substr(0, 13), "P5\n16 16\n255\n");
    EXPECT_THROW(decode_pgm(pgm.substr(0, pgm.size() - 1)), std::runtime_error);
    EXPECT_THROW(decode_points("abc"), std::runtime_error);
}

TEST(Formats, SampleRoundTripsThroughDisk) {
    const auto dir = scratch_dir("sample");
    const auto cfg = small_config();
    const auto rec = make_sample(cfg, 11);
    write_sample(dir / rec.id, rec);
    EXPECT_EQ(read_sample(dir / rec.id, cfg.views), rec);
    fs::remove_all(dir);
}

TEST(Corpus, CountsAndSplit) {
    DatasetConfig cfg;  // 8 categories x 200
    const std::size_t total = cfg.categories.size() * cfg.samples_per_category;
    EXPECT_EQ(total, 1600u);
    std::size_t train = 0;
    for (std::size_t id = 0; id < total; ++id) train += is_train_id(cfg, id);
    EXPECT_EQ(train, 1280u);
    EXPECT_EQ(total - train, 320u);
}

TEST(Corpus, PersistedCorpusIsByteIdenticalAndOrderIndependent) {
    const auto cfg = small_config();
    const auto a = scratch_dir("corpus_a"), b = scratch_dir("corpus_b");
    build_dataset(cfg, a);
    build_dataset(cfg, b);
    std::size_t files = 0;
    for (const auto& e : fs::recursive_directory_iterator(a)) {
        if (!e.is_regular_file()) continue;
        const auto rel = fs::relative(e.path(), a);
        ASSERT_TRUE(fs::exists(b / rel)) << rel;
        EXPECT_EQ(detail::read_file(e.path()), detail::read_file(b / rel)) << rel;
        ++files;
    }
    // manifest + per sample: points, label, 3 views
    EXPECT_EQ(files, 1u + 15u * 5u);

    const auto ds = load_dataset(a);
    EXPECT_EQ(ds.train.size(), 12u);
    EXPECT_EQ(ds.test.size(), 3u);
    std::set<std::string> train_ids, test_ids;
    for (const auto& r : ds.train) train_ids.insert(r.id);
    for (const auto& r : ds.test) test_ids.insert(r.id);
    for (const auto& id : test_ids) EXPECT_FALSE(train_ids.count(id));
    // Per-sample seeds: a record does not depend on which others were generated.
    for (const auto& r : ds.test) EXPECT_EQ(r, make_sample(cfg, std::stoul(r.id)));
    EXPECT_EQ(ds.config.categories, cfg.categories);
    EXPECT_EQ(ds.config.points, cfg.points);
    fs::remove_all(a);
    fs::remove_all(b);
}

TEST(Corpus, UnwritableRootIsRejected) {
    const auto dir = scratch_dir("blocked");
    detail::write_atomic(fs::temp_directory_path() / dir.filename(), "file, not a directory");
    EXPECT_THROW(build_dataset(small_config(), dir / "sub"), std::runtime_error);
    fs::remove_all(dir);
}
