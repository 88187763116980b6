#pragma once

// Two-view augmentation: random resized crop, horizontal flip, colour
// jitter, grayscale, Gaussian blur and solarisation, each driven by a
// per-(image, view) random stream.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string>
#include <utility>

#include "mcl/ops.hpp"
#include "mcl/rng.hpp"
#include "mcl/tensor.hpp"

namespace mcl {

struct AugPolicy {
    std::array<double, 2> crop_scale{0.08, 1.0};
    std::array<double, 2> crop_ratio{3.0 / 4.0, 4.0 / 3.0};
    double flip_p = 0.5;
    double jitter_p = 0.8;
    double brightness = 0.4;
    double contrast = 0.4;
    double saturation = 0.2;
    double hue = 0.1;
    std::array<double, 2> blur_sigma{0.1, 2.0};
    std::array<double, 2> blur_p{1.0, 0.1};  // view 0, view 1
    double grayscale_p = 0.2;
    double solarize_threshold = 0.5;
    std::array<double, 2> solarize_p{0.0, 0.2};
    bool asymmetric = true;  // when false both views use the view-0 probabilities
    std::size_t out_h = 64;
    std::size_t out_w = 64;

    double blur_prob(int view) const { return blur_p[asymmetric && view == 1 ? 1 : 0]; }
    double solarize_prob(int view) const { return solarize_p[asymmetric && view == 1 ? 1 : 0]; }

    /// Everything off; with a square input of size (h, w) the pipeline is the identity.
    static AugPolicy identity(std::size_t h, std::size_t w) {
        AugPolicy p;
        p.crop_scale = {1.0, 1.0};
        p.crop_ratio = {1.0, 1.0};
        p.flip_p = p.jitter_p = p.grayscale_p = 0.0;
        p.blur_p = {0.0, 0.0};
        p.solarize_p = {0.0, 0.0};
        p.out_h = h;
        p.out_w = w;
        return p;
    }

    void validate(int levels = 1) const {
        auto prob = [](double v, const char* name) {
            if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument(std::string("AugPolicy: ") + name + " must be in [0,1]");
        };
        prob(flip_p, "flip_p");
        prob(jitter_p, "jitter_p");
        prob(grayscale_p, "grayscale_p");
        prob(blur_p[0], "blur_p");
        prob(blur_p[1], "blur_p");
        prob(solarize_p[0], "solarize_p");
        prob(solarize_p[1], "solarize_p");
        prob(solarize_threshold, "solarize_threshold");
        if (!(crop_scale[0] > 0.0 && crop_scale[0] <= crop_scale[1] && crop_scale[1] <= 1.0))
            throw std::invalid_argument("AugPolicy: crop_scale must satisfy 0 < min <= max <= 1");
        if (!(crop_ratio[0] > 0.0 && crop_ratio[0] <= crop_ratio[1]))
            throw std::invalid_argument("AugPolicy: crop_ratio must satisfy 0 < min <= max");
        if (!(blur_sigma[0] > 0.0 && blur_sigma[0] <= blur_sigma[1]))
            throw std::invalid_argument("AugPolicy: blur_sigma must satisfy 0 < min <= max");
        const std::size_t div = std::size_t{1} << (levels > 0 ? levels - 1 : 0);
        if (out_h == 0 || out_w == 0 || out_h % div || out_w % div)
            throw std::invalid_argument("AugPolicy: out_size must be divisible by 2^(S-1) = " + std::to_string(div));
    }
};

namespace augment_ops {

/// Integer crop box (top, left, height, width) following the usual
/// scale/log-ratio sampling with ten attempts and a centre-crop fallback.
inline std::array<std::size_t, 4> sample_crop(std::size_t H, std::size_t W, const AugPolicy& p, SeededRng& rng) {
    const double area = static_cast<double>(H * W);
    const double lr0 = std::log(p.crop_ratio[0]), lr1 = std::log(p.crop_ratio[1]);
    for (int attempt = 0; attempt < 10; ++attempt) {
        const double target = area * rng.uniform(p.crop_scale[0], p.crop_scale[1]);
        const double ar = std::exp(lr0 == lr1 ? lr0 : rng.uniform(lr0, lr1));
        const auto w = static_cast<std::size_t>(std::lround(std::sqrt(target * ar)));
        const auto h = static_cast<std::size_t>(std::lround(std::sqrt(target / ar)));
        if (w > 0 && h > 0 && w <= W && h <= H) {
            const std::size_t top = rng.below(H - h + 1);
            const std::size_t left = rng.below(W - w + 1);
            return {top, left, h, w};
        }
    }
    const double in_ratio = static_cast<double>(W) / static_cast<double>(H);
    std::size_t w = W, h = H;
    if (in_ratio < p.crop_ratio[0]) {
        h = std::min<std::size_t>(H, static_cast<std::size_t>(std::lround(static_cast<double>(W) / p.crop_ratio[0])));
    } else if (in_ratio > p.crop_ratio[1]) {
        w = std::min<std::size_t>(W, static_cast<std::size_t>(std::lround(static_cast<double>(H) * p.crop_ratio[1])));
    }
    return {(H - h) / 2, (W - w) / 2, h, w};
}

template <class T>
Tensor<T> crop(const Tensor<T>& img, std::size_t top, std::size_t left, std::size_t h, std::size_t w) {
    const std::size_t C = img.dim(0);
    Tensor<T> out({C, h, w});
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) out.at(c, y, x) = img.at(c, top + y, left + x);
    return out;
}

template <class T>
void hflip(Tensor<T>& img) {
    const std::size_t C = img.dim(0), H = img.dim(1), W = img.dim(2);
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t y = 0; y < H; ++y) {
            T* row = &img.at(c, y, 0);
            std::reverse(row, row + W);
        }
}

template <class T>
void clamp01(Tensor<T>& img) {
    for (T& v : img.values()) v = std::clamp(v, T(0), T(1));
}

/// Luma plane of a 3-channel image (or the single channel itself).
template <class T>
std::vector<T> luma(const Tensor<T>& img) {
    const std::size_t C = img.dim(0), HW = img.dim(1) * img.dim(2);
    std::vector<T> y(HW);
    for (std::size_t i = 0; i < HW; ++i) {
        y[i] = C == 3 ? T(0.299) * img[i] + T(0.587) * img[HW + i] + T(0.114) * img[2 * HW + i] : img[i];
    }
    return y;
}

template <class T>
void adjust_brightness(Tensor<T>& img, T f) {
    for (T& v : img.values()) v *= f;
    clamp01(img);
}

template <class T>
void adjust_contrast(Tensor<T>& img, T f) {
    const auto y = luma(img);
    T m = 0;
    for (T v : y) m += v;
    m /= static_cast<T>(y.size());
    for (T& v : img.values()) v = f * v + (T(1) - f) * m;
    clamp01(img);
}

template <class T>
void adjust_saturation(Tensor<T>& img, T f) {
    if (img.dim(0) != 3) return;
    const auto y = luma(img);
    const std::size_t HW = y.size();
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < HW; ++i) img[c * HW + i] = f * img[c * HW + i] + (T(1) - f) * y[i];
    clamp01(img);
}

/// Hue shift as a rotation of the chroma plane in YIQ space; `shift` is a
/// fraction of a full turn.
template <class T>
void adjust_hue(Tensor<T>& img, T shift) {
    if (img.dim(0) != 3) return;
    const std::size_t HW = img.dim(1) * img.dim(2);
    const T th = shift * T(2) * std::numbers::pi_v<T>;
    const T cs = std::cos(th), sn = std::sin(th);
    for (std::size_t i = 0; i < HW; ++i) {
        const T r = img[i], g = img[HW + i], b = img[2 * HW + i];
        const T Y = T(0.299) * r + T(0.587) * g + T(0.114) * b;
        const T I = T(0.596) * r - T(0.274) * g - T(0.322) * b;
        const T Q = T(0.211) * r - T(0.523) * g + T(0.312) * b;
        const T I2 = cs * I - sn * Q, Q2 = sn * I + cs * Q;
        img[i] = Y + T(0.956) * I2 + T(0.621) * Q2;
        img[HW + i] = Y - T(0.272) * I2 - T(0.647) * Q2;
        img[2 * HW + i] = Y - T(1.106) * I2 + T(1.703) * Q2;
    }
    clamp01(img);
}

template <class T>
void to_grayscale(Tensor<T>& img) {
    if (img.dim(0) != 3) return;
    const auto y = luma(img);
    const std::size_t HW = y.size();
    for (std::size_t c = 0; c < 3; ++c) std::copy(y.begin(), y.end(), img.data() + c * HW);
}

/// Separable Gaussian blur with reflected borders.
template <class T>
void gaussian_blur(Tensor<T>& img, double sigma, std::size_t radius) {
    std::vector<T> k(2 * radius + 1);
    T ks = 0;
    for (std::size_t i = 0; i < k.size(); ++i) {
        const double d = static_cast<double>(i) - static_cast<double>(radius);
        k[i] = static_cast<T>(std::exp(-d * d / (2 * sigma * sigma)));
        ks += k[i];
    }
    for (T& v : k) v /= ks;
    const std::size_t C = img.dim(0), H = img.dim(1), W = img.dim(2);
    auto reflect = [](std::ptrdiff_t i, std::ptrdiff_t n) {
        if (n == 1) return std::ptrdiff_t{0};
        while (i < 0 || i >= n) i = i < 0 ? -i : 2 * (n - 1) - i;
        return i;
    };
    std::vector<T> tmp(H * W);
    const auto r = static_cast<std::ptrdiff_t>(radius);
    for (std::size_t c = 0; c < C; ++c) {
        T* plane = img.data() + c * H * W;
        for (std::size_t y = 0; y < H; ++y)
            for (std::size_t x = 0; x < W; ++x) {
                T s = 0;
                for (std::ptrdiff_t d = -r; d <= r; ++d)
                    s += k[static_cast<std::size_t>(d + r)] *
                         plane[y * W + static_cast<std::size_t>(reflect(static_cast<std::ptrdiff_t>(x) + d, static_cast<std::ptrdiff_t>(W)))];
                tmp[y * W + x] = s;
            }
        for (std::size_t y = 0; y < H; ++y)
            for (std::size_t x = 0; x < W; ++x) {
                T s = 0;
                for (std::ptrdiff_t d = -r; d <= r; ++d)
                    s += k[static_cast<std::size_t>(d + r)] *
                         tmp[static_cast<std::size_t>(reflect(static_cast<std::ptrdiff_t>(y) + d, static_cast<std::ptrdiff_t>(H))) * W + x];
                plane[y * W + x] = s;
            }
    }
}

template <class T>
void solarize(Tensor<T>& img, T threshold) {
    for (T& v : img.values())
        if (v >= threshold) v = T(1) - v;
}

}  // namespace augment_ops

/// One augmented view of img [C,H,W] (values in [0,1]). `view` selects the
/// blur/solarize probabilities when the policy is asymmetric.
template <class T>
Tensor<T> apply_pipeline(const Tensor<T>& img, const AugPolicy& policy, SeededRng& rng, int view = 0) {
    using namespace augment_ops;
    if (img.rank() != 3) throw std::invalid_argument("apply_pipeline: image must be [C,H,W]");
    const std::size_t H = img.dim(1), W = img.dim(2);
    if (H == 0 || W == 0 || static_cast<double>(H * W) * policy.crop_scale[0] < 1.0) {
        throw std::invalid_argument("apply_pipeline: image " + std::to_string(H) + "x" + std::to_string(W) +
                                    " is smaller than the minimum crop");
    }
    const auto [top, left, ch, cw] = sample_crop(H, W, policy, rng);
    Tensor<T> out = resize_bilinear(crop(img, top, left, ch, cw), policy.out_h, policy.out_w);

    if (rng.bernoulli(policy.flip_p)) hflip(out);

    if (rng.bernoulli(policy.jitter_p)) {
        const auto order = rng.permutation(4);
        for (std::size_t op : order) {
            switch (op) {
                case 0:
                    if (policy.brightness > 0)
                        adjust_brightness(out, static_cast<T>(rng.uniform(std::max(0.0, 1 - policy.brightness), 1 + policy.brightness)));
                    break;
                case 1:
                    if (policy.contrast > 0)
                        adjust_contrast(out, static_cast<T>(rng.uniform(std::max(0.0, 1 - policy.contrast), 1 + policy.contrast)));
                    break;
                case 2:
                    if (policy.saturation > 0)
                        adjust_saturation(out, static_cast<T>(rng.uniform(std::max(0.0, 1 - policy.saturation), 1 + policy.saturation)));
                    break;
                default:
                    if (policy.hue > 0) adjust_hue(out, static_cast<T>(rng.uniform(-policy.hue, policy.hue)));
                    break;
            }
        }
    }

    if (rng.bernoulli(policy.grayscale_p)) to_grayscale(out);

    if (rng.bernoulli(policy.blur_prob(view))) {
        const double sigma = rng.uniform(policy.blur_sigma[0], policy.blur_sigma[1]);
        const auto radius = std::max<std::size_t>(
            1, static_cast<std::size_t>(std::lround(0.05 * static_cast<double>(std::max(policy.out_h, policy.out_w)))));
        gaussian_blur(out, sigma, radius);
    }

    if (rng.bernoulli(policy.solarize_prob(view))) solarize(out, static_cast<T>(policy.solarize_threshold));

    clamp01(out);
    return out;
}

/// Random stream for image `index`, view `view` under `base_seed`.
inline SeededRng view_stream(std::uint64_t base_seed, std::uint64_t index, std::uint64_t view) {
    return SeededRng(base_seed, derive_stream(base_seed, {index, view}));
}

/// Augments every image of batch [B,C,H,W] twice with independent streams.
template <class T>
std::pair<Tensor<T>, Tensor<T>> two_views(const Tensor<T>& batch, const AugPolicy& policy, std::uint64_t base_seed) {
    if (batch.rank() != 4) throw std::invalid_argument("two_views: batch must be [B,C,H,W]");
    const std::size_t B = batch.dim(0), C = batch.dim(1);
    Tensor<T> x1({B, C, policy.out_h, policy.out_w});
    Tensor<T> x2({B, C, policy.out_h, policy.out_w});
    const std::size_t per = C * policy.out_h * policy.out_w;
    for (std::size_t b = 0; b < B; ++b) {
        const Tensor<T> img = batch.slice(b, 1).reshaped({C, batch.dim(2), batch.dim(3)});
        for (int view = 0; view < 2; ++view) {
            SeededRng rng = view_stream(base_seed, b, static_cast<std::uint64_t>(view));
            const Tensor<T> v = apply_pipeline(img, policy, rng, view);
            std::copy(v.data(), v.data() + per, (view == 0 ? x1 : x2).data() + b * per);
        }
    }
    return {std::move(x1), std::move(x2)};
}

/// exp(-((x-cx)^2/(2 sx^2) + (y-cy)^2/(2 sy^2))) at pixel centres,
/// sx = k*w, sy = k*h. Returns [h, w].
template <class T>
Tensor<T> gaussian_boundary_mask(std::size_t h, std::size_t w, double k) {
    if (!(k > 0)) throw std::invalid_argument("gaussian_boundary_mask: k must be > 0");
    Tensor<T> m({h, w});
    const double sx = k * static_cast<double>(w), sy = k * static_cast<double>(h);
    const double cx = static_cast<double>(w) / 2, cy = static_cast<double>(h) / 2;
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            const double dx = static_cast<double>(x) + 0.5 - cx, dy = static_cast<double>(y) + 0.5 - cy;
            m.at(y, x) = static_cast<T>(std::exp(-(dx * dx / (2 * sx * sx) + dy * dy / (2 * sy * sy))));
        }
    return m;
}

}  // namespace mcl
