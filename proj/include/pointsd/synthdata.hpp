#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "pointsd/core/rng.hpp"
#include "pointsd/core/tensor.hpp"
#include "pointsd/geometry.hpp"

// Procedural shape corpus: analytic primitives, orthographic point-splat
// renders, width-wise image stitching and on-disk persistence.
namespace pointsd::synthdata {

namespace fs = std::filesystem;
using geometry::PointCloud;
using geometry::Vec3;

enum class Category { Sphere, Box, Cylinder, Cone, Torus, Pyramid, Capsule, Prism };

inline constexpr std::array<const char*, 8> kCategoryNames = {"sphere", "box",     "cylinder", "cone",
                                                               "torus",  "pyramid", "capsule",  "prism"};

inline const char* category_name(Category c) {
    const auto i = static_cast<std::size_t>(c);
    return i < kCategoryNames.size() ? kCategoryNames[i] : "unknown";
}

inline Category category_from_name(const std::string& name) {
    for (std::size_t i = 0; i < kCategoryNames.size(); ++i)
        if (name == kCategoryNames[i]) return static_cast<Category>(i);
    throw std::invalid_argument("unknown shape category '" + name + "'");
}

/// Parameter bounds: scale in [0.1, 10], aspect components in [0.25, 4],
/// rotation angles (radians, yaw/pitch/roll) in [-pi, pi].
struct ShapeSpec {
    Category category = Category::Sphere;
    double scale = 1.0;
    std::array<double, 3> aspect{1.0, 1.0, 1.0};
    std::array<double, 3> rotation{0.0, 0.0, 0.0};
    std::uint64_t seed = 0;
};

/// Analytic surface with area-weighted point sampling.
class Shape {
public:
    explicit Shape(const ShapeSpec& spec) : spec_(spec) {
        const auto& [yaw, pitch, roll] = spec.rotation;
        // R = Ry(yaw) Rx(pitch) Rz(roll)
        const double cy = std::cos(yaw), sy = std::sin(yaw);
        const double cp = std::cos(pitch), sp = std::sin(pitch);
        const double cr = std::cos(roll), sr = std::sin(roll);
        const double Ry[3][3] = {{cy, 0, sy}, {0, 1, 0}, {-sy, 0, cy}};
        const double Rx[3][3] = {{1, 0, 0}, {0, cp, -sp}, {0, sp, cp}};
        const double Rz[3][3] = {{cr, -sr, 0}, {sr, cr, 0}, {0, 0, 1}};
        double tmp[3][3]{};
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j)
                for (int k = 0; k < 3; ++k) tmp[i][j] += Ry[i][k] * Rx[k][j];
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) {
                rot_[i][j] = 0;
                for (int k = 0; k < 3; ++k) rot_[i][j] += tmp[i][k] * Rz[k][j];
            }
    }

    const ShapeSpec& spec() const noexcept { return spec_; }
    int label() const noexcept { return static_cast<int>(spec_.category); }

    /// n surface points in world space (not normalized); deterministic in `seed`.
    PointCloud sample(std::size_t n, std::uint64_t seed) const {
        Rng rng(derive_seed(spec_.seed, {seed}));
        PointCloud pc;
        pc.label = label();
        pc.points.reserve(n);
        for (std::size_t i = 0; i < n; ++i) {
            std::array<double, 3> p = sample_canonical(rng);
            for (int k = 0; k < 3; ++k) p[k] *= spec_.aspect[k];
            Vec3 out{};
            for (int r = 0; r < 3; ++r) {
                double acc = 0;
                for (int k = 0; k < 3; ++k) acc += rot_[r][k] * p[k];
                out[r] = static_cast<float>(spec_.scale * acc);
            }
            pc.points.push_back(out);
        }
        return pc;
    }

private:
    using P = std::array<double, 3>;

    static P on_sphere(Rng& rng, double radius) {
        double x, y, z, r2;
        do {
            x = rng.normal();
            y = rng.normal();
            z = rng.normal();
            r2 = x * x + y * y + z * z;
        } while (r2 < 1e-12);
        const double s = radius / std::sqrt(r2);
        return {x * s, y * s, z * s};
    }

    // Uniform point on triangle (a, b, c).
    static P on_triangle(Rng& rng, const P& a, const P& b, const P& c) {
        double u = rng.uniform(), v = rng.uniform();
        if (u + v > 1) {
            u = 1 - u;
            v = 1 - v;
        }
        return {a[0] + u * (b[0] - a[0]) + v * (c[0] - a[0]), a[1] + u * (b[1] - a[1]) + v * (c[1] - a[1]),
                a[2] + u * (b[2] - a[2]) + v * (c[2] - a[2])};
    }

    static double tri_area(const P& a, const P& b, const P& c) {
        const P u{b[0] - a[0], b[1] - a[1], b[2] - a[2]};
        const P v{c[0] - a[0], c[1] - a[1], c[2] - a[2]};
        const P x{u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0]};
        return 0.5 * std::sqrt(x[0] * x[0] + x[1] * x[1] + x[2] * x[2]);
    }

    // Picks index i with probability weights[i] / sum.
    static std::size_t pick(Rng& rng, const std::vector<double>& weights) {
        double total = 0;
        for (double w : weights) total += w;
        double u = rng.uniform() * total;
        for (std::size_t i = 0; i < weights.size(); ++i) {
            if (u < weights[i]) return i;
            u -= weights[i];
        }
        return weights.size() - 1;
    }

    static P on_disk(Rng& rng, double radius, double y) {
        const double r = radius * std::sqrt(rng.uniform());
        const double th = 2 * std::numbers::pi * rng.uniform();
        return {r * std::cos(th), y, r * std::sin(th)};
    }

    P sample_canonical(Rng& rng) const {
        constexpr double pi = std::numbers::pi;
        switch (spec_.category) {
            case Category::Sphere:
                return on_sphere(rng, 1.0);
            case Category::Box: {
                const std::size_t face = rng.below(6);
                const double a = rng.uniform(-1, 1), b = rng.uniform(-1, 1);
                const double s = (face % 2) ? 1.0 : -1.0;
                switch (face / 2) {
                    case 0: return {s, a, b};
                    case 1: return {a, s, b};
                    default: return {a, b, s};
                }
            }
            case Category::Cylinder: {
                // radius 1, y in [-1, 1]; lateral area 4 pi, caps pi each
                const std::size_t part = pick(rng, {4 * pi, pi, pi});
                if (part == 0) {
                    const double th = 2 * pi * rng.uniform();
                    return {std::cos(th), rng.uniform(-1, 1), std::sin(th)};
                }
                return on_disk(rng, 1.0, part == 1 ? 1.0 : -1.0);
            }
            case Category::Cone: {
                // base radius 1 at y = -1, apex at y = 1
                const double slant = std::sqrt(1.0 + 4.0);
                if (pick(rng, {pi * slant, pi}) == 0) {
                    const double f = std::sqrt(rng.uniform());  // distance from apex, area-uniform
                    const double th = 2 * pi * rng.uniform();
                    return {f * std::cos(th), 1.0 - 2.0 * f, f * std::sin(th)};
                }
                return on_disk(rng, 1.0, -1.0);
            }
            case Category::Torus: {
                constexpr double R = 1.0, r = 0.35;
                for (;;) {
                    const double u = 2 * pi * rng.uniform(), v = 2 * pi * rng.uniform();
                    if (rng.uniform() * (R + r) <= R + r * std::cos(v)) {
                        const double w = R + r * std::cos(v);
                        return {w * std::cos(u), r * std::sin(v), w * std::sin(u)};
                    }
                }
            }
            case Category::Pyramid: {
                const P apex{0, 1, 0};
                const P c[4] = {{-1, -1, -1}, {1, -1, -1}, {1, -1, 1}, {-1, -1, 1}};
                std::vector<double> w{4.0};
                for (int i = 0; i < 4; ++i) w.push_back(tri_area(c[i], c[(i + 1) % 4], apex));
                const std::size_t part = pick(rng, w);
                if (part == 0) return {rng.uniform(-1, 1), -1.0, rng.uniform(-1, 1)};
                return on_triangle(rng, c[part - 1], c[part % 4], apex);
            }
            case Category::Capsule: {
                // radius 0.5, straight section y in [-0.5, 0.5]
                constexpr double rad = 0.5, half = 0.5;
                const double lateral = 2 * pi * rad * 2 * half, caps = 4 * pi * rad * rad;
                if (pick(rng, {lateral, caps}) == 0) {
                    const double th = 2 * pi * rng.uniform();
                    return {rad * std::cos(th), rng.uniform(-half, half), rad * std::sin(th)};
                }
                P p = on_sphere(rng, rad);
                p[1] += p[1] >= 0 ? half : -half;
                return p;
            }
            case Category::Prism: {
                // equilateral triangle (circumradius 1) in the xy plane, extruded over z in [-1, 1]
                P v[3];
                for (int i = 0; i < 3; ++i) {
                    const double th = pi / 2 + 2 * pi * i / 3.0;
                    v[i] = {std::cos(th), std::sin(th), 0};
                }
                const double side = std::sqrt(3.0);
                const double cap = tri_area(v[0], v[1], v[2]);
                const std::size_t part = pick(rng, {cap, cap, 2 * side, 2 * side, 2 * side});
                if (part < 2) {
                    P p = on_triangle(rng, v[0], v[1], v[2]);
                    p[2] = part == 0 ? 1.0 : -1.0;
                    return p;
                }
                const P& a = v[part - 2];
                const P& b = v[(part - 1) % 3];
                const double t = rng.uniform();
                return {a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1]), rng.uniform(-1, 1)};
            }
        }
        return {0, 0, 0};
    }

    ShapeSpec spec_;
    double rot_[3][3]{};
};

inline Shape generate_shape(const ShapeSpec& spec) {
    const auto bad = [&](const std::string& what) {
        throw std::invalid_argument(std::string("generate_shape(") + category_name(spec.category) + "): " + what);
    };
    if (static_cast<int>(spec.category) < 0 || static_cast<int>(spec.category) >= 8) bad("unknown category");
    if (!(spec.scale >= 0.1 && spec.scale <= 10.0)) bad("scale outside [0.1, 10]");
    for (double a : spec.aspect)
        if (!(a >= 0.25 && a <= 4.0)) bad("aspect component outside [0.25, 4]");
    for (double r : spec.rotation)
        if (!(r >= -std::numbers::pi && r <= std::numbers::pi)) bad("rotation angle outside [-pi, pi]");
    return Shape(spec);
}

// ---------------------------------------------------------------------------
// Rendering

/// [C, H, W] pixels in [-1, 1]; background is -1.
struct RenderedImage {
    Tensor<float> pixels;
    int view_index = 0;

    std::size_t channels() const { return pixels.dim(0); }
    std::size_t height() const { return pixels.dim(1); }
    std::size_t width() const { return pixels.dim(2); }
    float at(std::size_t c, std::size_t r, std::size_t x) const {
        return pixels[(c * height() + r) * width() + x];
    }
    bool operator==(const RenderedImage&) const = default;
};

/// Pixel value of an 8-bit level: q / 127.5 - 1.
inline float dequantize(std::uint8_t q) { return static_cast<float>(static_cast<double>(q) / 127.5 - 1.0); }
inline std::uint8_t quantize(float p) {
    const double q = std::round((static_cast<double>(p) + 1.0) * 127.5);
    return static_cast<std::uint8_t>(std::clamp(q, 0.0, 255.0));
}

/// Orthographic splat of view v of V: the cloud is rotated by azimuth 360 v / V
/// degrees about +y and viewed from +z. Nearer points are brighter; each pixel
/// keeps its nearest point. Values are snapped to the 8-bit grid used on disk.
inline RenderedImage render_view(const PointCloud& pc, int view, int num_views, std::size_t height, std::size_t width) {
    const double az = 2.0 * std::numbers::pi * view / num_views;
    const double c = std::cos(az), s = std::sin(az);
    std::vector<double> bright(height * width, -1.0);
    for (const auto& p : pc.points) {
        const double x = c * p[0] + s * p[2];
        const double y = p[1];
        const double z = -s * p[0] + c * p[2];
        const auto col = static_cast<long>(std::floor((x + 1.0) * 0.5 * static_cast<double>(width)));
        const auto row = static_cast<long>(std::floor((1.0 - y) * 0.5 * static_cast<double>(height)));
        const std::size_t cc = static_cast<std::size_t>(std::clamp<long>(col, 0, static_cast<long>(width) - 1));
        const std::size_t rr = static_cast<std::size_t>(std::clamp<long>(row, 0, static_cast<long>(height) - 1));
        const double b = std::clamp(0.35 + 0.65 * (z + 1.0) * 0.5, 0.0, 1.0);
        double& px = bright[rr * width + cc];
        px = std::max(px, b);
    }
    RenderedImage img;
    img.view_index = view;
    img.pixels = Tensor<float>({1, height, width}, -1.0f);
    for (std::size_t i = 0; i < bright.size(); ++i)
        if (bright[i] >= 0) img.pixels[i] = dequantize(quantize(static_cast<float>(2.0 * bright[i] - 1.0)));
    return img;
}

inline std::vector<RenderedImage> render_views(const PointCloud& pc, int num_views, std::size_t height,
                                               std::size_t width) {
    if (num_views < 1) throw std::invalid_argument("render_views: need at least one view");
    std::vector<RenderedImage> out;
    out.reserve(static_cast<std::size_t>(num_views));
    for (int v = 0; v < num_views; ++v) out.push_back(render_view(pc, v, num_views, height, width));
    return out;
}

/// Concatenates two images along the width: left block is `left`, right block is `right`.
inline RenderedImage stitch_images(const RenderedImage& left, const RenderedImage& right) {
    if (left.height() != right.height() || left.channels() != right.channels()) {
        throw std::invalid_argument("stitch_images: height/channel mismatch (" + shape_string(left.pixels.shape()) +
                                    " vs " + shape_string(right.pixels.shape()) + ")");
    }
    const std::size_t C = left.channels(), H = left.height(), W1 = left.width(), W2 = right.width();
    RenderedImage out;
    out.view_index = left.view_index;
    out.pixels = Tensor<float>({C, H, W1 + W2});
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t r = 0; r < H; ++r) {
            float* dst = out.pixels.data() + (c * H + r) * (W1 + W2);
            std::copy_n(left.pixels.data() + (c * H + r) * W1, W1, dst);
            std::copy_n(right.pixels.data() + (c * H + r) * W2, W2, dst + W1);
        }
    return out;
}

// ---------------------------------------------------------------------------
// Corpus

struct SampleRecord {
    std::string id;
    int label = 0;
    PointCloud points;
    std::vector<RenderedImage> views;
    bool operator==(const SampleRecord&) const = default;
};

struct DatasetConfig {
    std::vector<Category> categories{Category::Sphere,  Category::Box,     Category::Cylinder, Category::Cone,
                                     Category::Torus,   Category::Pyramid, Category::Capsule,  Category::Prism};
    std::size_t samples_per_category = 200;
    std::size_t points = 256;
    int views = 8;
    std::size_t height = 32;
    std::size_t width = 32;
    std::uint64_t seed = 7;
    double train_fraction = 0.8;

    std::size_t train_per_category() const {
        return static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(samples_per_category)));
    }
};

struct Dataset {
    DatasetConfig config;
    std::vector<SampleRecord> train;
    std::vector<SampleRecord> test;
};

inline std::string sample_id_string(std::size_t id) {
    std::ostringstream os;
    os << std::setw(6) << std::setfill('0') << id;
    return os.str();
}

/// Randomized shape parameters for corpus sample `id`; seeds derive from the master
/// seed and the id only, so samples can be generated in any order.
inline ShapeSpec corpus_shape_spec(const DatasetConfig& cfg, std::size_t id) {
    Rng rng(derive_seed(cfg.seed, {0x5a, id}));
    ShapeSpec spec;
    spec.category = cfg.categories[id / cfg.samples_per_category];
    spec.scale = rng.uniform(0.5, 1.5);
    for (auto& a : spec.aspect) a = rng.uniform(0.8, 1.25);
    spec.rotation = {rng.uniform(-std::numbers::pi, std::numbers::pi), rng.uniform(-0.25, 0.25),
                     rng.uniform(-0.25, 0.25)};
    spec.seed = derive_seed(cfg.seed, {0x5b, id});
    return spec;
}

inline SampleRecord make_sample(const DatasetConfig& cfg, std::size_t id) {
    const ShapeSpec spec = corpus_shape_spec(cfg, id);
    SampleRecord rec;
    rec.id = sample_id_string(id);
    rec.label = static_cast<int>(id / cfg.samples_per_category);
    rec.points = geometry::normalize_unit_sphere(generate_shape(spec).sample(cfg.points, 0));
    rec.points.label = rec.label;
    rec.views = render_views(rec.points, cfg.views, cfg.height, cfg.width);
    return rec;
}

inline bool is_train_id(const DatasetConfig& cfg, std::size_t id) {
    return id % cfg.samples_per_category < cfg.train_per_category();
}

/// Generates the full corpus in memory (train/test split per category).
inline Dataset generate_dataset(const DatasetConfig& cfg) {
    Dataset ds;
    ds.config = cfg;
    const std::size_t total = cfg.categories.size() * cfg.samples_per_category;
    for (std::size_t id = 0; id < total; ++id) {
        (is_train_id(cfg, id) ? ds.train : ds.test).push_back(make_sample(cfg, id));
    }
    return ds;
}

// --- file formats -----------------------------------------------------------

namespace detail {

inline void write_atomic(const fs::path& path, const std::string& bytes) {
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write '" + tmp.string() + "'");
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw std::runtime_error("short write to '" + tmp.string() + "'");
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) throw std::runtime_error("cannot rename '" + tmp.string() + "': " + ec.message());
}

inline std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read '" + path.string() + "'");
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

inline void put_f32le(std::string& out, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

inline float get_f32le(const unsigned char* p) {
    std::uint32_t bits = 0;
    for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(p[i]) << (8 * i);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

}  // namespace detail

/// Binary PGM (P5, maxval 255) of a single-channel image.
inline std::string encode_pgm(const RenderedImage& img) {
    if (img.channels() != 1) throw std::invalid_argument("encode_pgm: single-channel image required");
    std::string out = "P5\n" + std::to_string(img.width()) + " " + std::to_string(img.height()) + "\n255\n";
    for (float p : img.pixels.storage()) out.push_back(static_cast<char>(quantize(p)));
    return out;
}

inline RenderedImage decode_pgm(const std::string& bytes, int view_index = 0) {
    std::size_t pos = 0;
    auto token = [&]() {
        for (;;) {
            while (pos < bytes.size() && std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
            if (pos < bytes.size() && bytes[pos] == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
                continue;
            }
            break;
        }
        const std::size_t start = pos;
        while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
        return bytes.substr(start, pos - start);
    };
    if (token() != "P5") throw std::runtime_error("decode_pgm: not a binary PGM");
    const std::size_t w = std::stoul(token()), h = std::stoul(token());
    if (std::stoul(token()) != 255) throw std::runtime_error("decode_pgm: only maxval 255 is supported");
    ++pos;  // single whitespace before the raster
    if (bytes.size() < pos + w * h) throw std::runtime_error("decode_pgm: truncated raster");
    RenderedImage img;
    img.view_index = view_index;
    img.pixels = Tensor<float>({1, h, w});
    for (std::size_t i = 0; i < w * h; ++i) img.pixels[i] = dequantize(static_cast<std::uint8_t>(bytes[pos + i]));
    return img;
}

inline std::string encode_points(const PointCloud& pc) {
    std::string out;
    out.reserve(pc.points.size() * 12);
    for (const auto& p : pc.points)
        for (float v : p) detail::put_f32le(out, v);
    return out;
}

inline PointCloud decode_points(const std::string& bytes) {
    if (bytes.size() % 12 != 0) throw std::runtime_error("decode_points: size is not a multiple of 12 bytes");
    PointCloud pc;
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    for (std::size_t i = 0; i < bytes.size() / 12; ++i)
        pc.points.push_back({detail::get_f32le(p + 12 * i), detail::get_f32le(p + 12 * i + 4),
                             detail::get_f32le(p + 12 * i + 8)});
    return pc;
}

inline void write_sample(const fs::path& dir, const SampleRecord& rec) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw std::runtime_error("cannot create '" + dir.string() + "': " + ec.message());
    detail::write_atomic(dir / "points.f32le", encode_points(rec.points));
    for (const auto& v : rec.views)
        detail::write_atomic(dir / ("view_" + std::to_string(v.view_index) + ".pgm"), encode_pgm(v));
    detail::write_atomic(dir / "label.txt", std::to_string(rec.label) + "\n");
}

inline SampleRecord read_sample(const fs::path& dir, int num_views) {
    SampleRecord rec;
    rec.id = dir.filename().string();
    rec.label = std::stoi(detail::read_file(dir / "label.txt"));
    rec.points = decode_points(detail::read_file(dir / "points.f32le"));
    rec.points.label = rec.label;
    for (int v = 0; v < num_views; ++v)
        rec.views.push_back(decode_pgm(detail::read_file(dir / ("view_" + std::to_string(v) + ".pgm")), v));
    return rec;
}

inline std::string encode_manifest(const DatasetConfig& cfg) {
    std::ostringstream os;
    os << "format_version = 1\n";
    os << "categories = ";
    for (std::size_t i = 0; i < cfg.categories.size(); ++i) os << (i ? "," : "") << category_name(cfg.categories[i]);
    os << "\nsamples_per_category = " << cfg.samples_per_category << "\n";
    os << "points = " << cfg.points << "\n";
    os << "views = " << cfg.views << "\n";
    os << "height = " << cfg.height << "\n";
    os << "width = " << cfg.width << "\n";
    os << "channels = 1\n";
    os << "seed = " << cfg.seed << "\n";
    os << "train_fraction = " << std::setprecision(17) << cfg.train_fraction << "\n";
    return os.str();
}

inline DatasetConfig decode_manifest(const std::string& text) {
    std::map<std::string, std::string> kv;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        auto trim = [](std::string s) {
            const auto a = s.find_first_not_of(" \t\r");
            const auto b = s.find_last_not_of(" \t\r");
            return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
        };
        kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    auto need = [&](const char* key) -> const std::string& {
        auto it = kv.find(key);
        if (it == kv.end()) throw std::runtime_error(std::string("dataset manifest: missing key '") + key + "'");
        return it->second;
    };
    if (need("format_version") != "1") throw std::runtime_error("dataset manifest: unsupported format_version");
    DatasetConfig cfg;
    cfg.categories.clear();
    std::istringstream cats(need("categories"));
    std::string name;
    while (std::getline(cats, name, ',')) cfg.categories.push_back(category_from_name(name));
    cfg.samples_per_category = std::stoul(need("samples_per_category"));
    cfg.points = std::stoul(need("points"));
    cfg.views = std::stoi(need("views"));
    cfg.height = std::stoul(need("height"));
    cfg.width = std::stoul(need("width"));
    cfg.seed = std::stoull(need("seed"));
    cfg.train_fraction = std::stod(need("train_fraction"));
    return cfg;
}

/// Writes <root>/manifest.txt and <root>/<split>/<id>/{points.f32le, view_<v>.pgm, label.txt}.
inline void build_dataset(const DatasetConfig& cfg, const fs::path& root) {
    std::error_code ec;
    fs::create_directories(root, ec);
    if (ec || !fs::is_directory(root)) {
        throw std::runtime_error("build_dataset: cannot create dataset root '" + root.string() + "'" +
                                 (ec ? ": " + ec.message() : std::string()));
    }
    const std::size_t total = cfg.categories.size() * cfg.samples_per_category;
    for (std::size_t id = 0; id < total; ++id) {
        const SampleRecord rec = make_sample(cfg, id);
        write_sample(root / (is_train_id(cfg, id) ? "train" : "test") / rec.id, rec);
    }
    detail::write_atomic(root / "manifest.txt", encode_manifest(cfg));
}

inline Dataset load_dataset(const fs::path& root) {
    if (!fs::exists(root / "manifest.txt")) {
        throw std::runtime_error("dataset not found: missing '" + (root / "manifest.txt").string() + "'");
    }
    Dataset ds;
    ds.config = decode_manifest(detail::read_file(root / "manifest.txt"));
    for (const char* split : {"train", "test"}) {
        std::vector<fs::path> dirs;
        if (fs::is_directory(root / split))
            for (const auto& e : fs::directory_iterator(root / split))
                if (e.is_directory()) dirs.push_back(e.path());
        std::sort(dirs.begin(), dirs.end());
        auto& dst = std::string(split) == "train" ? ds.train : ds.test;
        for (const auto& d : dirs) dst.push_back(read_sample(d, ds.config.views));
    }
    return ds;
}

}  // namespace pointsd::synthdata
