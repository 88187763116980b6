#pragma once

// Online/target encoders: conv backbone, feature-pyramid neck, shared conv
// head, per-subimage average pooling, projector and predictor MLPs.

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "mcl/montage.hpp"
#include "mcl/nn.hpp"

namespace mcl {

struct NetConfig {
    std::vector<std::size_t> stage_channels{16, 32, 64, 128};
    std::size_t in_channels = 3;
    std::size_t stem_channels = 16;
    int stem_stride = 1;
    std::size_t convs_per_stage = 1;
    int pyramid_levels = 3;  // S
    std::size_t pyramid_channels = 64;
    bool fpn = true;
    std::size_t head_convs = 4;
    std::size_t proj_hidden = 256;
    std::size_t embed_dim = 64;
    bool predictor_final_bn = false;
    std::size_t input_h = 64;
    std::size_t input_w = 64;

    /// ResNet-scale head widths, for large runs.
    static NetConfig full_scale() {
        NetConfig c;
        c.proj_hidden = 2048;
        c.embed_dim = 256;
        c.pyramid_channels = 256;
        return c;
    }

    /// Output stride of backbone stage i.
    std::size_t stage_stride(std::size_t i) const {
        return static_cast<std::size_t>(stem_stride) << (i + 1);
    }

    /// Strides of the pyramid maps, finest first (the last S stages).
    std::vector<std::size_t> pyramid_strides() const {
        std::vector<std::size_t> s;
        const std::size_t first = stage_channels.size() - static_cast<std::size_t>(pyramid_levels);
        for (std::size_t i = first; i < stage_channels.size(); ++i) s.push_back(stage_stride(i));
        return s;
    }

    void validate() const {
        if (pyramid_levels < 1) throw std::invalid_argument("NetConfig: pyramid_levels must be >= 1");
        if (stage_channels.size() < static_cast<std::size_t>(pyramid_levels))
            throw std::invalid_argument("NetConfig: backbone has " + std::to_string(stage_channels.size()) +
                                        " stages but S=" + std::to_string(pyramid_levels));
        if (stem_stride < 1 || convs_per_stage < 1) throw std::invalid_argument("NetConfig: bad stem/stage settings");
        const std::size_t coarse = stage_stride(stage_channels.size() - 1);
        if (input_h % coarse || input_w % coarse)
            throw std::invalid_argument("NetConfig: input " + std::to_string(input_h) + "x" + std::to_string(input_w) +
                                        " not divisible by coarsest stride " + std::to_string(coarse));
    }
};

/// Multi-resolution maps, finest first. Maps that were not requested stay invalid.
template <class T>
struct FeaturePyramid {
    std::vector<Var<T>> maps;
    std::vector<std::size_t> strides;

    std::size_t levels() const { return maps.size(); }
};

template <class T>
struct Backbone {
    Conv2d<T> stem;
    BatchNorm<T> stem_bn;
    std::vector<Conv2d<T>> convs;
    std::vector<BatchNorm<T>> bns;
    std::size_t per_stage = 1;

    Backbone() = default;
    Backbone(const NetConfig& cfg, SeededRng& rng)
        : stem("backbone.stem", cfg.in_channels, cfg.stem_channels, 3, cfg.stem_stride, 1, false, rng),
          stem_bn("backbone.stem_bn", cfg.stem_channels),
          per_stage(cfg.convs_per_stage) {
        std::size_t prev = cfg.stem_channels;
        for (std::size_t s = 0; s < cfg.stage_channels.size(); ++s) {
            for (std::size_t k = 0; k < per_stage; ++k) {
                const std::string name = "backbone.stage" + std::to_string(s) + ".conv" + std::to_string(k);
                convs.emplace_back(name, prev, cfg.stage_channels[s], 3, k == 0 ? 2 : 1, 1, false, rng);
                bns.emplace_back(name + ".bn", cfg.stage_channels[s]);
                prev = cfg.stage_channels[s];
            }
        }
    }

    std::size_t stages() const { return convs.size() / per_stage; }

    /// One output per stage.
    std::vector<Var<T>> operator()(Graph<T>& g, Var<T> x, ForwardMode mode) {
        std::vector<Var<T>> outs;
        Var<T> h = relu(stem_bn(g, stem(g, x), mode));
        for (std::size_t i = 0; i < convs.size(); ++i) {
            h = relu(bns[i](g, convs[i](g, h), mode));
            if ((i + 1) % per_stage == 0) outs.push_back(h);
        }
        return outs;
    }

    template <class F>
    void visit(F&& f) {
        stem.visit(f);
        stem_bn.visit(f);
        for (std::size_t i = 0; i < convs.size(); ++i) {
            convs[i].visit(f);
            bns[i].visit(f);
        }
    }

    template <class F>
    void visit_buffers(F&& f) {
        stem_bn.visit_buffers(f);
        for (auto& b : bns) b.visit_buffers(f);
    }
};

/// FPN (1x1 laterals, nearest 2x top-down, 3x3 smoothing) or, with fpn off,
/// one 1x1 projection of the last stage bilinearly resized to every size.
template <class T>
struct Neck {
    bool fpn = true;
    std::vector<Conv2d<T>> lateral;
    std::vector<Conv2d<T>> smooth;

    Neck() = default;
    Neck(const NetConfig& cfg, SeededRng& rng) : fpn(cfg.fpn) {
        const std::size_t S = static_cast<std::size_t>(cfg.pyramid_levels);
        const std::size_t first = cfg.stage_channels.size() - S;
        if (fpn) {
            for (std::size_t l = 0; l < S; ++l) {
                lateral.emplace_back("neck.lateral" + std::to_string(l), cfg.stage_channels[first + l],
                                     cfg.pyramid_channels, 1, 1, 0, true, rng);
                smooth.emplace_back("neck.smooth" + std::to_string(l), cfg.pyramid_channels, cfg.pyramid_channels, 3,
                                    1, 1, true, rng);
            }
        } else {
            lateral.emplace_back("neck.project", cfg.stage_channels.back(), cfg.pyramid_channels, 1, 1, 0, true, rng);
        }
    }

    /// `stage_outputs` holds every backbone stage; maps finer than
    /// `finest_needed` are skipped.
    FeaturePyramid<T> operator()(Graph<T>& g, const std::vector<Var<T>>& stage_outputs,
                                 const std::vector<std::size_t>& strides, std::size_t input_h, std::size_t input_w,
                                 std::size_t finest_needed = 0) {
        const std::size_t S = strides.size();
        if (stage_outputs.size() < S) throw std::invalid_argument("neck: not enough backbone stages");
        if (finest_needed >= S) throw std::invalid_argument("neck: requested level out of range");
        FeaturePyramid<T> pyr;
        pyr.strides = strides;
        pyr.maps.assign(S, Var<T>{});
        const std::size_t first = stage_outputs.size() - S;
        if (fpn) {
            Var<T> top_down;
            for (std::size_t l = S; l-- > finest_needed;) {
                Var<T> lat = lateral[l](g, stage_outputs[first + l]);
                top_down = (l == S - 1) ? lat : add(lat, upsample_nearest(top_down, strides[l + 1] / strides[l]));
                pyr.maps[l] = smooth[l](g, top_down);
            }
        } else {
            Var<T> base = lateral[0](g, stage_outputs.back());
            for (std::size_t l = finest_needed; l < S; ++l) {
                pyr.maps[l] = bilinear_resize(base, input_h / strides[l], input_w / strides[l]);
            }
        }
        return pyr;
    }

    template <class F>
    void visit(F&& f) {
        for (auto& c : lateral) c.visit(f);
        for (auto& c : smooth) c.visit(f);
    }
};

/// Shared conv head: head_convs x (3x3 conv, BN, relu), same width in and out.
template <class T>
struct Head {
    std::vector<Conv2d<T>> convs;
    std::vector<BatchNorm<T>> bns;

    Head() = default;
    Head(const NetConfig& cfg, SeededRng& rng) {
        for (std::size_t i = 0; i < cfg.head_convs; ++i) {
            const std::string name = "head.conv" + std::to_string(i);
            convs.emplace_back(name, cfg.pyramid_channels, cfg.pyramid_channels, 3, 1, 1, false, rng);
            bns.emplace_back(name + ".bn", cfg.pyramid_channels);
        }
    }

    Var<T> operator()(Graph<T>& g, Var<T> x, ForwardMode mode) {
        for (std::size_t i = 0; i < convs.size(); ++i) x = relu(bns[i](g, convs[i](g, x), mode));
        return x;
    }

    template <class F>
    void visit(F&& f) {
        for (std::size_t i = 0; i < convs.size(); ++i) {
            convs[i].visit(f);
            bns[i].visit(f);
        }
    }

    template <class F>
    void visit_buffers(F&& f) {
        for (auto& b : bns) b.visit_buffers(f);
    }
};

/// f_theta plus the projector g_theta.
template <class T>
struct Encoder {
    NetConfig cfg;
    Backbone<T> backbone;
    Neck<T> neck;
    Head<T> head;
    Mlp<T> projector;

    Encoder() = default;
    Encoder(const NetConfig& c, SeededRng& rng)
        : cfg(c),
          backbone(c, rng),
          neck(c, rng),
          head(c, rng),
          projector("projector", c.pyramid_channels, c.proj_hidden, c.embed_dim, true, rng) {}

    template <class F>
    void visit(F&& f) {
        backbone.visit(f);
        neck.visit(f);
        head.visit(f);
        projector.visit(f);
    }

    template <class F>
    void visit_buffers(F&& f) {
        backbone.visit_buffers(f);
        head.visit_buffers(f);
        projector.visit_buffers(f);
    }
};

/// Pyramid index for a level-s montage: ratio 2^s goes to the map whose
/// stride is 2^s times coarser than the finest one, i.e. position S-1-s
/// counting finest first. With S=3 this is the P_{5-s} rule.
inline std::size_t assign_level(int s, int S) {
    if (S < 1 || s < 0 || s >= S)
        throw std::out_of_range("assign_level: s=" + std::to_string(s) + " outside [0," + std::to_string(S) + ")");
    return static_cast<std::size_t>(S - 1 - s);
}

/// Feature-cell side length of every pooled subimage; independent of s.
inline std::size_t pooled_region_cells(std::size_t image_size, int s, const std::vector<std::size_t>& strides) {
    const int S = static_cast<int>(strides.size());
    return image_size / (std::size_t{1} << s) / strides[assign_level(s, S)];
}

/// Backbone and neck over montage images. `Net` is any model with `cfg`,
/// `backbone` and `neck` members.
template <class T, class Net>
FeaturePyramid<T> forward_pyramid(Graph<T>& g, Net& enc, Var<T> images, ForwardMode mode,
                                  std::size_t finest_needed = 0) {
    const Shape& s = images.shape();
    const auto strides = enc.cfg.pyramid_strides();
    if (s.size() != 4 || s[2] % strides.back() || s[3] % strides.back())
        throw std::invalid_argument("forward_pyramid: input " + shape_str(s) + " not divisible by coarsest stride " +
                                    std::to_string(strides.back()));
    auto stages = enc.backbone(g, images, mode);
    return enc.neck(g, stages, strides, s[2], s[3], finest_needed);
}

enum class RowOrder { BySource, ByTile };

/// Average-pools every subimage from the map assigned to the montage level.
/// BySource: row b is source image b. ByTile: row k is tile k.
template <class T>
Var<T> pool_subimage_latents(const FeaturePyramid<T>& pyr, const MontageBatch<T>& mb,
                             RowOrder order = RowOrder::BySource) {
    const std::size_t idx = assign_level(mb.level, static_cast<int>(pyr.levels()));
    const Var<T> fmap = pyr.maps[idx];
    if (!fmap.valid()) throw std::invalid_argument("pool_subimage_latents: pyramid level not computed");
    const std::size_t stride = pyr.strides[idx];
    auto to_feature = [&](const Roi& r) {
        const Box& b = r.box;
        if (b.x0 % stride || b.y0 % stride || b.x1 % stride || b.y1 % stride)
            throw std::invalid_argument("pool_subimage_latents: box not aligned to stride " + std::to_string(stride));
        return Roi{r.image, {b.x0 / stride, b.y0 / stride, b.x1 / stride, b.y1 / stride}};
    };
    std::vector<Roi> rois(mb.batch());
    if (order == RowOrder::BySource) {
        const auto tiles = mb.tile_of_source();
        for (std::size_t b = 0; b < mb.batch(); ++b) rois[b] = to_feature(mb.tile_roi(tiles[b]));
    } else {
        for (std::size_t k = 0; k < mb.batch(); ++k) rois[k] = to_feature(mb.tile_roi(k));
    }
    return roi_avg_pool(fmap, rois);
}

/// Backbone -> neck -> shared head on the assigned map -> per-subimage pooling.
template <class T, class Net>
Var<T> encode_subimages(Graph<T>& g, Net& enc, const MontageBatch<T>& mb, ForwardMode mode,
                        RowOrder order = RowOrder::BySource) {
    const int S = enc.cfg.pyramid_levels;
    const std::size_t idx = assign_level(mb.level, S);
    FeaturePyramid<T> pyr = forward_pyramid(g, enc, g.constant(mb.images), mode, idx);
    pyr.maps[idx] = enc.head(g, pyr.maps[idx], mode);
    return pool_subimage_latents(pyr, mb, order);
}

/// u = normalize(h(g(pooled)))
template <class T>
Var<T> project_online(Graph<T>& g, Encoder<T>& enc, Mlp<T>& predictor, Var<T> pooled, ForwardMode mode) {
    return l2_normalize(predictor(g, enc.projector(g, pooled, mode), mode));
}

/// v = normalize(g'(pooled))
template <class T>
Var<T> project_target(Graph<T>& g, Encoder<T>& enc, Var<T> pooled, ForwardMode mode) {
    return l2_normalize(enc.projector(g, pooled, mode));
}

/// Online encoder + predictor, and the EMA target encoder (never optimised).
template <class T>
struct NetworkPair {
    NetConfig cfg;
    Encoder<T> online;
    Mlp<T> predictor;
    Encoder<T> target;

    NetworkPair() = default;
    NetworkPair(const NetConfig& c, std::uint64_t seed) : cfg(c) {
        cfg.validate();
        SeededRng rng(seed, derive_stream(seed, {0x6e6574ULL}));
        online = Encoder<T>(cfg, rng);
        predictor = Mlp<T>("predictor", cfg.embed_dim, cfg.proj_hidden, cfg.embed_dim, cfg.predictor_final_bn, rng);
        target = online;
        target.visit([](Parameter<T>& p) { p.grad = Tensor<T>(); });
    }

    /// Every optimised parameter, in a fixed order.
    std::vector<Parameter<T>*> online_parameters() {
        std::vector<Parameter<T>*> ps;
        online.visit([&](Parameter<T>& p) { ps.push_back(&p); });
        predictor.visit([&](Parameter<T>& p) { ps.push_back(&p); });
        return ps;
    }

    std::vector<Parameter<T>*> target_parameters() {
        std::vector<Parameter<T>*> ps;
        target.visit([&](Parameter<T>& p) { ps.push_back(&p); });
        return ps;
    }

    void zero_grad() {
        for (auto* p : online_parameters()) p->zero_grad();
    }
};

/// theta' <- m theta' + (1 - m) theta over target parameters and running
/// statistics.
template <class T>
void ema_update(NetworkPair<T>& pair, double m) {
    if (!(m >= 0.0 && m <= 1.0)) throw std::invalid_argument("ema_update: momentum must be in [0,1]");
    const T mt = static_cast<T>(m), om = static_cast<T>(1.0 - m);
    std::vector<Tensor<T>*> src, dst;
    pair.online.visit([&](Parameter<T>& p) { src.push_back(&p.value); });
    pair.target.visit([&](Parameter<T>& p) { dst.push_back(&p.value); });
    pair.online.visit_buffers([&](const std::string&, Tensor<T>& t) { src.push_back(&t); });
    pair.target.visit_buffers([&](const std::string&, Tensor<T>& t) { dst.push_back(&t); });
    if (src.size() != dst.size()) throw std::logic_error("ema_update: online/target structure differs");
    for (std::size_t i = 0; i < src.size(); ++i) {
        if (src[i]->shape() != dst[i]->shape()) throw std::logic_error("ema_update: parameter shape mismatch");
        for (std::size_t k = 0; k < src[i]->size(); ++k) (*dst[i])[k] = mt * (*dst[i])[k] + om * (*src[i])[k];
    }
}

/// 1 - (1 - m0) (cos(pi step / total) + 1) / 2
inline double momentum_schedule(long step, long total, double m0) {
    if (total <= 0) return 1.0;
    if (step < 0 || step > total) throw std::out_of_range("momentum_schedule: step outside [0,total]");
    const double c = std::cos(std::numbers::pi * static_cast<double>(step) / static_cast<double>(total));
    return 1.0 - (1.0 - m0) * (c + 1.0) / 2.0;
}

}  // namespace mcl
