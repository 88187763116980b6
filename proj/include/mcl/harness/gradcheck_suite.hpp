#pragma once

// Finite-difference check of the full contrastive loss on a tiny 64-bit
// network (S=2, B=4, 16x16 inputs).

#include "mcl/gradcheck.hpp"
#include "mcl/objective.hpp"

namespace mcl {

inline NetConfig gradcheck_net() {
    NetConfig cfg;
    cfg.stage_channels = {3, 4, 4};
    cfg.stem_channels = 3;
    cfg.pyramid_levels = 2;
    cfg.pyramid_channels = 4;
    cfg.head_convs = 1;
    cfg.proj_hidden = 6;
    cfg.embed_dim = 4;
    cfg.input_h = cfg.input_w = 16;
    return cfg;
}

/// Online BN runs in eval mode on running statistics warmed by three
/// train-mode passes; the target gets different weights so u and v differ.
inline GradCheckResult<double> full_loss_gradcheck(MatchMode mode, std::uint64_t seed = 3, double eps = 1e-6) {
    NetworkPair<double> pair(gradcheck_net(), seed);
    for (auto* p : pair.target_parameters())
        for (auto& v : p->value.values()) v *= 0.9;
    Tensor<double> x[2] = {Tensor<double>({4, 3, 16, 16}), Tensor<double>({4, 3, 16, 16})};
    SeededRng rng(seed, derive_stream(seed, {0x6763ULL}));
    for (auto& t : x)
        for (auto& v : t.values()) v = rng.uniform();
    ObjectiveOptions opt;
    opt.seed = seed;
    opt.loss.mode = mode;
    for (std::uint64_t step = 0; step < 3; ++step) {
        Graph<double> warm(GradMode::Disabled);
        opt.step = step;
        mcl_objective(warm, pair, x[0], x[1], opt);
    }
    opt.step = 0;
    opt.online_mode = ForwardMode::eval();
    return finite_diff_check<double>(
        [&](Graph<double>& g) { return mcl_objective(g, pair, x[0], x[1], opt).loss.total; },
        pair.online_parameters(), eps);
}

}  // namespace mcl
