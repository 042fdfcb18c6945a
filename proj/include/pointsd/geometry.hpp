#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "pointsd/core/rng.hpp"

// Point-cloud primitives: normalization, farthest-point sampling, KNN patch
// grouping and patch-level mixing. Every function here is pure; randomized ones
// take an explicit Rng that callers must not share across threads.
namespace pointsd::geometry {

using Vec3 = std::array<float, 3>;

struct PointCloud {
    std::vector<Vec3> points;
    std::optional<int> label;

    std::size_t size() const noexcept { return points.size(); }
    bool operator==(const PointCloud&) const = default;
};

/// G patches of m points each. Group points are stored relative to their center,
/// row-major [G * m]. source_ids tags the cloud each patch came from.
struct PatchSet {
    std::vector<Vec3> centers;
    std::vector<Vec3> groups;
    std::vector<int> source_ids;
    std::size_t group_size = 0;

    std::size_t num_groups() const noexcept { return centers.size(); }
    const Vec3& point(std::size_t group, std::size_t j) const { return groups[group * group_size + j]; }
    bool operator==(const PatchSet&) const = default;
};

struct MixMask {
    std::vector<std::uint8_t> bits;
    double ratio = 0.5;

    std::size_t popcount() const { return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), 1)); }
};

inline double squared_distance(const Vec3& a, const Vec3& b) {
    const double dx = static_cast<double>(a[0]) - static_cast<double>(b[0]);
    const double dy = static_cast<double>(a[1]) - static_cast<double>(b[1]);
    const double dz = static_cast<double>(a[2]) - static_cast<double>(b[2]);
    return dx * dx + dy * dy + dz * dz;
}

inline void require_finite(const PointCloud& pc, const char* who) {
    for (std::size_t i = 0; i < pc.points.size(); ++i)
        for (float v : pc.points[i])
            if (!std::isfinite(v)) {
                throw std::invalid_argument(std::string(who) + ": point " + std::to_string(i) +
                                            " has a non-finite coordinate");
            }
}

/// Centers the cloud at its centroid and scales the farthest point to radius 1.
/// A cloud whose points all coincide maps to the origin.
inline PointCloud normalize_unit_sphere(const PointCloud& pc) {
    if (pc.points.empty()) throw std::invalid_argument("normalize_unit_sphere: empty point cloud");
    require_finite(pc, "normalize_unit_sphere");
    std::array<double, 3> c{0, 0, 0};
    for (const auto& p : pc.points)
        for (int k = 0; k < 3; ++k) c[k] += p[k];
    for (auto& v : c) v /= static_cast<double>(pc.points.size());
    double rmax = 0;
    for (const auto& p : pc.points) {
        double r2 = 0;
        for (int k = 0; k < 3; ++k) r2 += (p[k] - c[k]) * (p[k] - c[k]);
        rmax = std::max(rmax, std::sqrt(r2));
    }
    PointCloud out;
    out.label = pc.label;
    out.points.reserve(pc.points.size());
    const double inv = rmax > 0 ? 1.0 / rmax : 0.0;
    for (const auto& p : pc.points)
        out.points.push_back({static_cast<float>((p[0] - c[0]) * inv), static_cast<float>((p[1] - c[1]) * inv),
                              static_cast<float>((p[2] - c[2]) * inv)});
    return out;
}

/// Greedy max-min selection of k distinct indices starting from `start`.
/// Ties go to the lowest index.
inline std::vector<std::size_t> farthest_point_sample(const PointCloud& pc, std::size_t k, std::size_t start = 0) {
    const std::size_t n = pc.points.size();
    if (k < 1 || k > n) {
        throw std::invalid_argument("farthest_point_sample: k = " + std::to_string(k) + " outside [1, " +
                                    std::to_string(n) + "]");
    }
    if (start >= n) throw std::invalid_argument("farthest_point_sample: start index out of range");
    std::vector<double> mind(n, std::numeric_limits<double>::infinity());
    std::vector<bool> chosen(n, false);
    std::vector<std::size_t> out;
    out.reserve(k);
    std::size_t cur = start;
    for (;;) {
        out.push_back(cur);
        chosen[cur] = true;
        if (out.size() == k) break;
        std::size_t best = n;
        double best_d = -1.0;
        for (std::size_t i = 0; i < n; ++i) {
            if (chosen[i]) continue;
            mind[i] = std::min(mind[i], squared_distance(pc.points[i], pc.points[cur]));
            if (mind[i] > best_d) {
                best_d = mind[i];
                best = i;
            }
        }
        cur = best;
    }
    return out;
}

/// For each center index, the m nearest points (center included), ordered by
/// (distance, index), stored relative to the center.
inline PatchSet knn_group(const PointCloud& pc, const std::vector<std::size_t>& centers, std::size_t m,
                          int source_id = 0) {
    const std::size_t n = pc.points.size();
    if (m < 1 || m > n) {
        throw std::invalid_argument("knn_group: group size " + std::to_string(m) + " outside [1, " +
                                    std::to_string(n) + "]");
    }
    PatchSet ps;
    ps.group_size = m;
    ps.centers.reserve(centers.size());
    ps.groups.reserve(centers.size() * m);
    std::vector<std::size_t> order(n);
    std::vector<double> d(n);
    for (std::size_t c : centers) {
        if (c >= n) throw std::invalid_argument("knn_group: center index out of range");
        const Vec3& ctr = pc.points[c];
        for (std::size_t i = 0; i < n; ++i) d[i] = squared_distance(pc.points[i], ctr);
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(m), order.end(),
                          [&](std::size_t a, std::size_t b) { return d[a] < d[b] || (d[a] == d[b] && a < b); });
        ps.centers.push_back(ctr);
        for (std::size_t j = 0; j < m; ++j) {
            const Vec3& p = pc.points[order[j]];
            ps.groups.push_back({p[0] - ctr[0], p[1] - ctr[1], p[2] - ctr[2]});
        }
        ps.source_ids.push_back(source_id);
    }
    return ps;
}

/// FPS centers followed by KNN grouping.
inline PatchSet make_patches(const PointCloud& pc, std::size_t groups, std::size_t group_size, std::size_t start = 0,
                             int source_id = 0) {
    return knn_group(pc, farthest_point_sample(pc, groups, start), group_size, source_id);
}

/// Uniformly random subset of round(ratio * G) patches set to 1.
inline MixMask sample_mix_mask(std::size_t G, double ratio, Rng& rng) {
    if (!(ratio >= 0.0 && ratio <= 1.0)) throw std::invalid_argument("sample_mix_mask: ratio outside [0, 1]");
    MixMask mask;
    mask.ratio = ratio;
    mask.bits.assign(G, 0);
    const auto ones = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(G)));
    auto perm = rng.permutation(G);
    for (std::size_t i = 0; i < ones; ++i) mask.bits[perm[i]] = 1;
    return mask;
}

/// Patch i comes from A where mask bit i is 1, otherwise from B. Retained patches
/// keep their original centers.
inline PatchSet mix_patchsets(const PatchSet& a, const PatchSet& b, const MixMask& mask) {
    if (a.num_groups() != b.num_groups() || a.num_groups() != mask.bits.size() || a.group_size != b.group_size) {
        throw std::invalid_argument("mix_patchsets: shape mismatch (A has " + std::to_string(a.num_groups()) + "x" +
                                    std::to_string(a.group_size) + ", B has " + std::to_string(b.num_groups()) + "x" +
                                    std::to_string(b.group_size) + ", mask has " +
                                    std::to_string(mask.bits.size()) + ")");
    }
    PatchSet out;
    out.group_size = a.group_size;
    const std::size_t m = a.group_size;
    for (std::size_t i = 0; i < a.num_groups(); ++i) {
        const PatchSet& src = mask.bits[i] ? a : b;
        out.centers.push_back(src.centers[i]);
        out.source_ids.push_back(src.source_ids[i]);
        out.groups.insert(out.groups.end(), src.groups.begin() + static_cast<std::ptrdiff_t>(i * m),
                          src.groups.begin() + static_cast<std::ptrdiff_t>((i + 1) * m));
    }
    return out;
}

}  // namespace pointsd::geometry
