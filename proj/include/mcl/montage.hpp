#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mcl/augment.hpp"
#include "mcl/ops.hpp"
#include "mcl/rng.hpp"
#include "mcl/tensor.hpp"

namespace mcl {

/// One montage level: B images downsampled by 2^s, shuffled, and tiled
/// 2^s x 2^s into B / 4^s full-size images.
///
/// Tile k = m*r*r + i*r + j sits in montage m at tile row i, column j and
/// holds source image src_ids[k].
template <class T>
struct MontageBatch {
    int level = 0;
    std::size_t ratio = 1;
    Tensor<T> images;                   // [B / 4^s, C, H, W]
    std::vector<Box> boxes;             // the 4^s tile boxes of one montage, row-major
    std::vector<std::size_t> src_ids;   // tile index -> source image index

    std::size_t batch() const { return src_ids.size(); }
    std::size_t tiles_per_image() const { return ratio * ratio; }

    Roi tile_roi(std::size_t tile) const {
        return {tile / tiles_per_image(), boxes[tile % tiles_per_image()]};
    }

    /// source image index -> tile index
    std::vector<std::size_t> tile_of_source() const {
        std::vector<std::size_t> inv(src_ids.size());
        for (std::size_t k = 0; k < src_ids.size(); ++k) inv[src_ids[k]] = k;
        return inv;
    }
};

namespace detail {

inline void check_montage_geometry(std::size_t B, std::size_t H, std::size_t W, int s) {
    if (s < 0 || s > 20) throw std::invalid_argument("montage: level s=" + std::to_string(s) + " out of range");
    const std::size_t r = std::size_t{1} << s;
    if (H % r != 0) throw std::invalid_argument("montage: H=" + std::to_string(H) + " not divisible by 2^s=" + std::to_string(r));
    if (W % r != 0) throw std::invalid_argument("montage: W=" + std::to_string(W) + " not divisible by 2^s=" + std::to_string(r));
    if (B % (r * r) != 0)
        throw std::invalid_argument("montage: B=" + std::to_string(B) + " not divisible by 4^s=" + std::to_string(r * r));
}

}  // namespace detail

/// Row-major tile boxes (x0, y0, x1, y1) of a level-s montage of size H x W.
inline std::vector<Box> subimage_boxes(int s, std::size_t H, std::size_t W) {
    detail::check_montage_geometry(std::size_t{1} << (2 * s), H, W, s);
    const std::size_t r = std::size_t{1} << s, th = H / r, tw = W / r;
    std::vector<Box> out;
    out.reserve(r * r);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < r; ++j) out.push_back({j * tw, i * th, (j + 1) * tw, (i + 1) * th});
    return out;
}

/// Builds the level-s montage batch. `boundary_k`, when set, multiplies each
/// downsampled tile by gaussian_boundary_mask(tile_h, tile_w, k) first.
template <class T>
MontageBatch<T> assemble(const Tensor<T>& batch, int s, SeededRng& rng, std::optional<double> boundary_k = std::nullopt) {
    if (batch.rank() != 4) throw std::invalid_argument("montage: batch must be [B,C,H,W]");
    const std::size_t B = batch.dim(0), C = batch.dim(1), H = batch.dim(2), W = batch.dim(3);
    detail::check_montage_geometry(B, H, W, s);
    const std::size_t r = std::size_t{1} << s, th = H / r, tw = W / r;

    Tensor<T> ds = resize_bilinear(batch, th, tw);
    if (boundary_k) {
        const Tensor<T> mask = gaussian_boundary_mask<T>(th, tw, *boundary_k);
        for (std::size_t p = 0; p < B * C; ++p)
            for (std::size_t k = 0; k < th * tw; ++k) ds[p * th * tw + k] *= mask[k];
    }

    MontageBatch<T> mb;
    mb.level = s;
    mb.ratio = r;
    mb.boxes = subimage_boxes(s, H, W);
    mb.src_ids = rng.permutation(B);
    mb.images = Tensor<T>({B / (r * r), C, H, W});
    for (std::size_t k = 0; k < B; ++k) {
        const Roi roi = mb.tile_roi(k);
        const std::size_t src = mb.src_ids[k];
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t y = 0; y < th; ++y) {
                const T* from = ds.data() + ((src * C + c) * th + y) * tw;
                std::copy(from, from + tw, &mb.images.at(roi.image, c, roi.box.y0 + y, roi.box.x0));
            }
    }
    return mb;
}

/// Cuts the tiles back out, ordered by source id: [B, C, H/2^s, W/2^s].
template <class T>
Tensor<T> disassemble(const MontageBatch<T>& mb) {
    const std::size_t B = mb.batch(), C = mb.images.dim(1);
    const std::size_t th = mb.images.dim(2) / mb.ratio, tw = mb.images.dim(3) / mb.ratio;
    Tensor<T> out({B, C, th, tw});
    for (std::size_t k = 0; k < B; ++k) {
        const Roi roi = mb.tile_roi(k);
        const std::size_t src = mb.src_ids[k];
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t y = 0; y < th; ++y) {
                const T* from = &mb.images.at(roi.image, c, roi.box.y0 + y, roi.box.x0);
                std::copy(from, from + tw, out.data() + ((src * C + c) * th + y) * tw);
            }
    }
    return out;
}

/// Random stream for the montage shuffle of (step, level, view).
inline SeededRng montage_stream(std::uint64_t seed, std::uint64_t step, int level, int view) {
    return SeededRng(seed, derive_stream(seed ^ 0x6d6f6e74616765ULL,
                                         {step, static_cast<std::uint64_t>(level), static_cast<std::uint64_t>(view)}));
}

}  // namespace mcl
