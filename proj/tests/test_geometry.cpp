#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "oracles.hpp"

using namespace pointsd;
using namespace pointsd::geometry;

namespace {

using oracle::random_cloud;
using oracle::fps;
using oracle::knn;

PatchSet tagged(std::size_t G, std::size_t m, int tag) {
    PatchSet ps;
    ps.group_size = m;
    for (std::size_t i = 0; i < G; ++i) {
        ps.centers.push_back({static_cast<float>(i), static_cast<float>(tag), 0});
        for (std::size_t j = 0; j < m; ++j) ps.groups.push_back({static_cast<float>(tag), static_cast<float>(j), 0});
        ps.source_ids.push_back(tag);
    }
    return ps;
}

}  // namespace

TEST(Normalize, TwoPointExample) {
    const auto out = normalize_unit_sphere({{{2, 0, 0}, {4, 0, 0}}, std::nullopt});
    EXPECT_EQ(out.points[0], (Vec3{-1, 0, 0}));
    EXPECT_EQ(out.points[1], (Vec3{1, 0, 0}));
}

TEST(Normalize, SinglePointMapsToOrigin) {
    const auto out = normalize_unit_sphere({{{5, 5, 5}}, 3});
    EXPECT_EQ(out.points[0], (Vec3{0, 0, 0}));
    EXPECT_EQ(out.label, 3);
}

TEST(Normalize, CentroidAndRadiusOfRandomCloud) {
    Rng rng(7);
    auto pc = random_cloud(rng, 256, false);
    for (auto& p : pc.points) p = {3 * p[0] + 4, p[1] - 2, 0.5f * p[2]};
    const auto out = normalize_unit_sphere(pc);
    double c[3] = {0, 0, 0}, rmax = 0;
    for (const auto& p : out.points) {
        for (int k = 0; k < 3; ++k) c[k] += p[k];
        rmax = std::max(rmax, std::sqrt(squared_distance(p, {0, 0, 0})));
    }
    EXPECT_LT(std::hypot(c[0], c[1], c[2]) / 256, 1e-6);
    EXPECT_NEAR(rmax, 1.0, 1e-6);
}

TEST(Normalize, Idempotent) {
    Rng rng(8);
    for (int trial = 0; trial < 20; ++trial) {
        const auto once = normalize_unit_sphere(random_cloud(rng, 100, false));
        const auto twice = normalize_unit_sphere(once);
        for (std::size_t i = 0; i < once.size(); ++i)
            for (int k = 0; k < 3; ++k) EXPECT_NEAR(once.points[i][k], twice.points[i][k], 1e-6);
    }
}

TEST(Normalize, RejectsNonFinite) {
    EXPECT_THROW(normalize_unit_sphere({{{0, NAN, 0}}, std::nullopt}), std::invalid_argument);
    EXPECT_THROW(normalize_unit_sphere({{{INFINITY, 0, 0}}, std::nullopt}), std::invalid_argument);
    EXPECT_THROW(normalize_unit_sphere({}), std::invalid_argument);
}

TEST(Fps, LineExample) {
    const PointCloud pc{{{0, 0, 0}, {1, 0, 0}, {2, 0, 0}, {10, 0, 0}}, std::nullopt};
    EXPECT_EQ(farthest_point_sample(pc, 2, 0), (std::vector<std::size_t>{0, 3}));
}

TEST(Fps, KEqualsNReturnsAllIndicesFromAnyStart) {
    Rng rng(1);
    const auto pc = random_cloud(rng, 12, false);
    for (std::size_t s = 0; s < 12; ++s) {
        auto idx = farthest_point_sample(pc, 12, s);
        EXPECT_EQ(idx.front(), s);
        std::sort(idx.begin(), idx.end());
        for (std::size_t i = 0; i < 12; ++i) EXPECT_EQ(idx[i], i);
    }
}

TEST(Fps, RejectsBadArguments) {
    const PointCloud pc{{{0, 0, 0}, {1, 0, 0}}, std::nullopt};
    EXPECT_THROW(farthest_point_sample(pc, 3), std::invalid_argument);
    EXPECT_THROW(farthest_point_sample(pc, 0), std::invalid_argument);
    EXPECT_THROW(farthest_point_sample(pc, 1, 2), std::invalid_argument);
}

TEST(Fps, MatchesBruteForceOracleIncludingTies) {
    Rng rng(2024);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 1 + rng.below(64);
        const auto pc = random_cloud(rng, n, trial % 2 == 0);
        const std::size_t k = 1 + rng.below(n);
        const std::size_t start = rng.below(n);
        ASSERT_EQ(farthest_point_sample(pc, k, start), fps(pc, k, start)) << "trial " << trial;
    }
}

TEST(Fps, PermutationCovariant) {
    Rng rng(99);
    for (int trial = 0; trial < 20; ++trial) {
        const auto pc = random_cloud(rng, 64, false);  // continuous coordinates: no ties
        const auto perm = rng.permutation(64);         // new index i holds old point perm[i]
        PointCloud shuffled;
        std::vector<std::size_t> inverse(64);
        for (std::size_t i = 0; i < 64; ++i) {
            shuffled.points.push_back(pc.points[perm[i]]);
            inverse[perm[i]] = i;
        }
        const auto a = farthest_point_sample(pc, 8, 5);
        const auto b = farthest_point_sample(shuffled, 8, inverse[5]);
        for (std::size_t j = 0; j < 8; ++j) EXPECT_EQ(perm[b[j]], a[j]);
    }
}

TEST(Knn, MatchesBruteForceOracleIncludingTies) {
    Rng rng(77);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 1 + rng.below(64);
        const auto pc = random_cloud(rng, n, trial % 2 == 1);
        const std::size_t m = 1 + rng.below(n);
        std::vector<std::size_t> centers;
        for (int c = 0; c < 4; ++c) centers.push_back(rng.below(n));
        const auto ps = knn_group(pc, centers, m);
        ASSERT_EQ(ps.num_groups(), centers.size());
        for (std::size_t c = 0; c < centers.size(); ++c) {
            const auto want = knn(pc, centers[c], m);
            const auto& ctr = pc.points[centers[c]];
            EXPECT_EQ(ps.centers[c], ctr);
            for (std::size_t j = 0; j < m; ++j) {
                const auto& p = pc.points[want[j]];
                ASSERT_EQ(ps.point(c, j), (Vec3{p[0] - ctr[0], p[1] - ctr[1], p[2] - ctr[2]})) << "trial " << trial;
            }
        }
    }
}

TEST(Knn, Shapes256And1024) {
    Rng rng(5);
    const auto small = random_cloud(rng, 256, false);
    const auto ps = make_patches(small, 16, 16);
    EXPECT_EQ(ps.num_groups(), 16u);
    for (std::size_t c = 0; c < 16; ++c) {
        const auto want = knn(small, farthest_point_sample(small, 16)[c], 16);
        for (std::size_t j = 0; j < 16; ++j) {
            const auto& p = small.points[want[j]];
            EXPECT_EQ(ps.point(c, j), (Vec3{p[0] - ps.centers[c][0], p[1] - ps.centers[c][1], p[2] - ps.centers[c][2]}));
        }
    }
    const auto big = make_patches(random_cloud(rng, 1024, false), 64, 32);
    EXPECT_EQ(big.num_groups(), 64u);
    EXPECT_EQ(big.group_size, 32u);
    EXPECT_EQ(big.groups.size(), 64u * 32u);
}

TEST(Knn, SinglePointGroupIsTheCenter) {
    Rng rng(6);
    const auto pc = random_cloud(rng, 10, false);
    const auto ps = knn_group(pc, {4}, 1);
    EXPECT_EQ(ps.point(0, 0), (Vec3{0, 0, 0}));
    EXPECT_EQ(ps.centers[0], pc.points[4]);
    EXPECT_THROW(knn_group(pc, {0}, 11), std::invalid_argument);
}

TEST(MixMask, CountsAndDeterminism) {
    Rng a(3), b(3);
    const auto m1 = sample_mix_mask(16, 0.5, a);
    const auto m2 = sample_mix_mask(16, 0.5, b);
    EXPECT_EQ(m1.popcount(), 8u);
    EXPECT_EQ(m1.bits, m2.bits);
    EXPECT_EQ(sample_mix_mask(16, 1.0, a).popcount(), 16u);
    EXPECT_EQ(sample_mix_mask(16, 0.0, a).popcount(), 0u);
    EXPECT_THROW(sample_mix_mask(16, 1.5, a), std::invalid_argument);
}

TEST(MixPatchsets, AllOnesAndAllZeros) {
    const auto A = tagged(16, 4, 1), B = tagged(16, 4, 2);
    MixMask ones{std::vector<std::uint8_t>(16, 1), 1.0}, zeros{std::vector<std::uint8_t>(16, 0), 0.0};
    EXPECT_EQ(mix_patchsets(A, B, ones), A);
    EXPECT_EQ(mix_patchsets(A, B, zeros), B);
}

TEST(MixPatchsets, ProvenanceCountsMatchMask) {
    Rng rng(10);
    const auto A = tagged(16, 4, 1), B = tagged(16, 4, 2);
    for (int trial = 0; trial < 100; ++trial) {
        const auto mask = sample_mix_mask(16, rng.uniform(), rng);
        const auto out = mix_patchsets(A, B, mask);
        const auto from_a = static_cast<std::size_t>(std::count(out.source_ids.begin(), out.source_ids.end(), 1));
        EXPECT_EQ(from_a, mask.popcount());
        EXPECT_EQ(out.num_groups() - from_a, 16 - mask.popcount());
        for (std::size_t i = 0; i < 16; ++i) {
            const auto& src = mask.bits[i] ? A : B;
            EXPECT_EQ(out.centers[i], src.centers[i]);
            EXPECT_EQ(out.point(i, 3), src.point(i, 3));
        }
    }
}

TEST(MixPatchsets, RejectsShapeMismatch) {
    MixMask mask{std::vector<std::uint8_t>(16, 1), 1.0};
    EXPECT_THROW(mix_patchsets(tagged(16, 4, 1), tagged(8, 4, 2), mask), std::invalid_argument);
    EXPECT_THROW(mix_patchsets(tagged(16, 4, 1), tagged(16, 3, 2), mask), std::invalid_argument);
    EXPECT_THROW(mix_patchsets(tagged(8, 4, 1), tagged(8, 4, 2), mask), std::invalid_argument);
}
