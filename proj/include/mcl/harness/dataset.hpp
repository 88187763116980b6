#pragma once

// Labelled image sets: procedural coloured shapes, or a directory of PPMs
// laid out as <root>/<split>/<class>/*.ppm.

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "mcl/harness/config.hpp"
#include "mcl/harness/image_io.hpp"
#include "mcl/ops.hpp"
#include "mcl/rng.hpp"
#include "mcl/tensor.hpp"

namespace mcl {

struct LabeledImages {
    Tensor<float> images;  // [N,3,H,W], values in [0,1]
    std::vector<int> labels;
    std::size_t classes = 0;

    std::size_t size() const { return labels.size(); }

    /// Rows `ids` stacked into a batch.
    Tensor<float> gather(const std::vector<std::size_t>& ids) const {
        const std::size_t per = images.size() / std::max<std::size_t>(1, size());
        Shape s = images.shape();
        s[0] = ids.size();
        Tensor<float> out(s);
        for (std::size_t i = 0; i < ids.size(); ++i)
            std::copy(images.data() + ids[i] * per, images.data() + (ids[i] + 1) * per, out.data() + i * per);
        return out;
    }

    std::vector<int> gather_labels(const std::vector<std::size_t>& ids) const {
        std::vector<int> out;
        out.reserve(ids.size());
        for (auto i : ids) out.push_back(labels.at(i));
        return out;
    }
};

struct DatasetSplits {
    LabeledImages train;
    LabeledImages eval;
};

enum class ShapeKind { Disk, Square, Triangle, Ring, Plus, Diamond, HBar, VBar, Frame, HalfDisk };
inline constexpr std::size_t kShapeKinds = 10;

namespace shapes {

/// Point (x, y) relative to the shape centre, in units of its half size.
inline bool inside(ShapeKind k, double x, double y) {
    const double ax = std::abs(x), ay = std::abs(y), r2 = x * x + y * y;
    switch (k) {
        case ShapeKind::Disk: return r2 <= 1.0;
        case ShapeKind::Square: return ax <= 0.8 && ay <= 0.8;
        case ShapeKind::Triangle: return y <= 0.8 && y >= -0.9 + 1.7 * ax / 0.95;
        case ShapeKind::Ring: return r2 <= 1.0 && r2 >= 0.36;
        case ShapeKind::Plus: return (ax <= 0.3 && ay <= 1.0) || (ay <= 0.3 && ax <= 1.0);
        case ShapeKind::Diamond: return ax + ay <= 1.0;
        case ShapeKind::HBar: return ax <= 1.0 && ay <= 0.35;
        case ShapeKind::VBar: return ay <= 1.0 && ax <= 0.35;
        case ShapeKind::Frame: return ax <= 0.85 && ay <= 0.85 && (ax >= 0.5 || ay >= 0.5);
        case ShapeKind::HalfDisk: return r2 <= 1.0 && y >= 0.0;
    }
    return false;
}

struct Placed {
    ShapeKind kind;
    double cx, cy, half;
    std::array<double, 3> color;
};

inline std::array<double, 3> random_color(SeededRng& rng) {
    // Saturated colours, away from the mid-grey background.
    std::array<double, 3> c;
    for (auto& v : c) v = rng.uniform(0.0, 1.0);
    const std::size_t hi = rng.below(3);
    c[hi] = rng.uniform(0.85, 1.0);
    c[(hi + 1 + rng.below(2)) % 3] *= 0.3;
    return c;
}

/// One image: low-frequency noise background, a large dominant shape of
/// kind `cls`, then 0..2 smaller distractors of other kinds. 2x2 supersampled.
inline Tensor<float> render(std::size_t cls, std::size_t size, std::size_t classes, SeededRng& rng) {
    const double S = static_cast<double>(size);
    constexpr std::size_t G = 4;  // background control grid
    std::array<std::array<std::array<double, 3>, G>, G> grid;
    for (auto& row : grid)
        for (auto& cell : row)
            for (auto& v : cell) v = rng.uniform(0.25, 0.6);

    std::vector<Placed> placed;
    const double dom = rng.uniform(0.28, 0.4) * S;
    placed.push_back({static_cast<ShapeKind>(cls), rng.uniform(dom, S - dom), rng.uniform(dom, S - dom), dom,
                      random_color(rng)});
    const std::size_t extra = rng.below(3);
    for (std::size_t e = 0; e < extra; ++e) {
        std::size_t other = rng.below(classes - 1);
        if (other >= cls) ++other;
        const double h = rng.uniform(0.08, 0.14) * S;
        placed.push_back({static_cast<ShapeKind>(other), rng.uniform(h, S - h), rng.uniform(h, S - h), h,
                          random_color(rng)});
    }

    Tensor<float> img({3, size, size});
    constexpr int SS = 2;
    for (std::size_t y = 0; y < size; ++y)
        for (std::size_t x = 0; x < size; ++x) {
            std::array<double, 3> acc{0, 0, 0};
            for (int sy = 0; sy < SS; ++sy)
                for (int sx = 0; sx < SS; ++sx) {
                    const double px = static_cast<double>(x) + (sx + 0.5) / SS;
                    const double py = static_cast<double>(y) + (sy + 0.5) / SS;
                    std::array<double, 3> col;
                    // bilinear background
                    const double gx = std::clamp(px / S * (G - 1), 0.0, G - 1.0);
                    const double gy = std::clamp(py / S * (G - 1), 0.0, G - 1.0);
                    const std::size_t x0 = std::min<std::size_t>(static_cast<std::size_t>(gx), G - 2);
                    const std::size_t y0 = std::min<std::size_t>(static_cast<std::size_t>(gy), G - 2);
                    const double fx = gx - static_cast<double>(x0), fy = gy - static_cast<double>(y0);
                    for (int c = 0; c < 3; ++c)
                        col[c] = (1 - fy) * ((1 - fx) * grid[y0][x0][c] + fx * grid[y0][x0 + 1][c]) +
                                 fy * ((1 - fx) * grid[y0 + 1][x0][c] + fx * grid[y0 + 1][x0 + 1][c]);
                    for (const auto& p : placed)
                        if (inside(p.kind, (px - p.cx) / p.half, (py - p.cy) / p.half)) col = p.color;
                    for (int c = 0; c < 3; ++c) acc[c] += col[c];
                }
            for (std::size_t c = 0; c < 3; ++c) img.at(c, y, x) = static_cast<float>(acc[c] / (SS * SS));
        }
    return img;
}

}  // namespace shapes

/// n images; labels are i % classes, shuffled by a seed-derived permutation.
inline LabeledImages generate_shapes(std::size_t n, std::size_t classes, std::size_t size, std::uint64_t seed,
                                     std::uint64_t split) {
    if (classes < 2 || classes > kShapeKinds)
        throw std::invalid_argument("generate_shapes: classes must be in [2," + std::to_string(kShapeKinds) + "]");
    if (size < 8) throw std::invalid_argument("generate_shapes: image_size must be >= 8");
    LabeledImages out;
    out.classes = classes;
    out.images = Tensor<float>({n, 3, size, size});
    out.labels.resize(n);
    SeededRng order(seed, derive_stream(seed, {0x6c6162ULL, split}));
    const auto perm = order.permutation(n);
    const std::size_t per = 3 * size * size;
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t cls = perm[i] % classes;
        out.labels[i] = static_cast<int>(cls);
        SeededRng rng(seed, derive_stream(seed, {0x696d67ULL, split, i}));
        const auto img = shapes::render(cls, size, classes, rng);
        std::copy(img.data(), img.data() + per, out.images.data() + i * per);
    }
    return out;
}

/// <dir>/<class>/*.ppm, classes in sorted order, every image resized to size x size.
inline LabeledImages load_image_dir(const std::string& dir, std::size_t size) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) throw std::runtime_error("load_image_dir: " + dir + " is not a directory");
    std::vector<fs::path> class_dirs;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_directory()) class_dirs.push_back(e.path());
    std::sort(class_dirs.begin(), class_dirs.end());
    if (class_dirs.empty()) throw std::runtime_error("load_image_dir: no class subdirectories in " + dir);
    std::vector<Tensor<float>> imgs;
    LabeledImages out;
    out.classes = class_dirs.size();
    for (std::size_t c = 0; c < class_dirs.size(); ++c) {
        std::vector<fs::path> files;
        for (const auto& e : fs::directory_iterator(class_dirs[c]))
            if (e.is_regular_file() && e.path().extension() == ".ppm") files.push_back(e.path());
        std::sort(files.begin(), files.end());
        for (const auto& f : files) {
            imgs.push_back(resize_bilinear(read_ppm<float>(f.string()), size, size));
            out.labels.push_back(static_cast<int>(c));
        }
    }
    if (imgs.empty()) throw std::runtime_error("load_image_dir: no .ppm files under " + dir);
    out.images = Tensor<float>({imgs.size(), 3, size, size});
    const std::size_t per = 3 * size * size;
    for (std::size_t i = 0; i < imgs.size(); ++i) std::copy(imgs[i].data(), imgs[i].data() + per, out.images.data() + i * per);
    return out;
}

inline DatasetSplits load_dataset(const DatasetSpec& spec) {
    if (spec.kind == "shapes")
        return {generate_shapes(spec.n_train, spec.classes, spec.image_size, spec.seed, 0),
                generate_shapes(spec.n_eval, spec.classes, spec.image_size, spec.seed, 1)};
    if (spec.kind == "images") {
        const std::filesystem::path root(spec.path);
        DatasetSplits d{load_image_dir((root / "train").string(), spec.image_size),
                        load_image_dir((root / "eval").string(), spec.image_size)};
        if (d.train.classes != d.eval.classes)
            throw std::runtime_error("load_dataset: train and eval class counts differ");
        return d;
    }
    throw std::invalid_argument("load_dataset: unknown kind '" + spec.kind + "'");
}

}  // namespace mcl
