#pragma once

// One self-supervised objective evaluation: montages of both views at every
// level, online and target latents, and the multi-level contrastive loss.

#include <cstdint>
#include <optional>
#include <vector>

#include "mcl/loss.hpp"
#include "mcl/model.hpp"
#include "mcl/montage.hpp"

namespace mcl {

/// Number of leading montage levels a batch of B images supports (B must be
/// divisible by 4^s and the image by 2^s), capped at S.
inline int usable_levels(std::size_t B, std::size_t H, std::size_t W, int S) {
    int n = 0;
    for (int s = 0; s < S; ++s) {
        const std::size_t r = std::size_t{1} << s;
        if (B % (r * r) != 0 || H % r != 0 || W % r != 0) break;
        ++n;
    }
    return n;
}

struct ObjectiveOptions {
    LossConfig loss;
    std::uint64_t seed = 0;
    std::uint64_t step = 0;
    std::optional<double> boundary_k;
    ForwardMode online_mode = ForwardMode::train();
    ForwardMode target_mode = ForwardMode::train_frozen_stats();
};

template <class T>
struct ObjectiveResult {
    LossBreakdown<T> loss;
    int levels = 0;  // montage levels actually used
};

/// Builds the loss on `g`. Target latents are computed on a separate
/// gradient-free graph and enter `g` as constants.
template <class T>
ObjectiveResult<T> mcl_objective(Graph<T>& g, NetworkPair<T>& pair, const Tensor<T>& x1, const Tensor<T>& x2,
                                 const ObjectiveOptions& opt) {
    const int S = usable_levels(x1.dim(0), x1.dim(2), x1.dim(3), pair.cfg.pyramid_levels);
    if (S < 1) throw std::invalid_argument("mcl_objective: batch supports no montage level");
    std::vector<bool> target_needed(static_cast<std::size_t>(S), false);
    for (auto [q, t] : pair_levels(opt.loss.mode, S, opt.loss.adjacent_include_self))
        target_needed[static_cast<std::size_t>(t)] = true;
    LatentSet<T> U[2], V[2];
    const Tensor<T>* views[2] = {&x1, &x2};
    for (int v = 0; v < 2; ++v) {
        U[v].levels.resize(static_cast<std::size_t>(S));
        V[v].levels.resize(static_cast<std::size_t>(S));
        for (int s = 0; s < S; ++s) {
            SeededRng rng = montage_stream(opt.seed, opt.step, s, v);
            const MontageBatch<T> mb = assemble(*views[v], s, rng, opt.boundary_k);

            Var<T> pooled = encode_subimages(g, pair.online, mb, opt.online_mode);
            U[v].levels[static_cast<std::size_t>(s)] = project_online(g, pair.online, pair.predictor, pooled, opt.online_mode);

            if (!target_needed[static_cast<std::size_t>(s)]) continue;
            Graph<T> tg(GradMode::Disabled);
            Var<T> tpooled = encode_subimages(tg, pair.target, mb, opt.target_mode);
            V[v].levels[static_cast<std::size_t>(s)] = g.constant(project_target(tg, pair.target, tpooled, opt.target_mode).value());
        }
    }
    return {total_loss(U[0], V[0], U[1], V[1], opt.loss, S), S};
}

}  // namespace mcl
