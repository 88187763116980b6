#pragma once

// Montage previews: one PPM per level showing the first montage image with
// every tile box outlined.

#include <filesystem>
#include <string>
#include <vector>

#include "mcl/harness/config.hpp"
#include "mcl/harness/dataset.hpp"
#include "mcl/harness/image_io.hpp"
#include "mcl/montage.hpp"

namespace mcl {

struct PreviewImage {
    int level = 0;
    Tensor<float> image;  // [3,H,W], outlines drawn
    std::vector<Box> boxes;
    std::string path;
};

/// One-pixel outline of `b` drawn inside the box.
inline void draw_box(Tensor<float>& img, const Box& b, const std::array<float, 3>& color) {
    for (std::size_t c = 0; c < 3; ++c) {
        for (std::size_t x = b.x0; x < b.x1; ++x) {
            img.at(c, b.y0, x) = color[c];
            img.at(c, b.y1 - 1, x) = color[c];
        }
        for (std::size_t y = b.y0; y < b.y1; ++y) {
            img.at(c, y, b.x0) = color[c];
            img.at(c, y, b.x1 - 1) = color[c];
        }
    }
}

/// Level s uses the first 4^s training images (view-0 augmentation), so each
/// preview is exactly one montage.
inline std::vector<PreviewImage> montage_preview(const TrainConfig& cfg, const LabeledImages& data,
                                                 const std::string& out_dir) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (!fs::is_directory(out_dir)) throw std::runtime_error("preview: cannot create " + out_dir);
    std::vector<PreviewImage> out;
    for (int s = 0; s < cfg.net.pyramid_levels; ++s) {
        const std::size_t B = std::size_t{1} << (2 * s);
        if (data.size() < B) throw std::invalid_argument("preview: need " + std::to_string(B) + " images for level " + std::to_string(s));
        std::vector<std::size_t> ids(B);
        for (std::size_t i = 0; i < B; ++i) ids[i] = i;
        const auto views = two_views(data.gather(ids), cfg.aug, derive_stream(cfg.seed, {0x70726576ULL}));
        SeededRng rng = montage_stream(cfg.seed, 0, s, 0);
        const auto mb = assemble(views.first, s, rng, cfg.boundary_k > 0 ? std::optional<double>(cfg.boundary_k) : std::nullopt);
        PreviewImage p;
        p.level = s;
        p.image = mb.images.slice(0, 1).reshaped({3, mb.images.dim(2), mb.images.dim(3)});
        p.boxes = mb.boxes;
        for (const auto& b : p.boxes) draw_box(p.image, b, {1.0f, 1.0f, 0.0f});
        p.path = (fs::path(out_dir) / ("montage_level" + std::to_string(s) + ".ppm")).string();
        write_ppm(p.path, p.image);
        out.push_back(std::move(p));
    }
    return out;
}

}  // namespace mcl
