#pragma once

// Supervised montage training: labels are reordered into tile order and a
// weighted cross-entropy is summed over montage levels.

#include <stdexcept>
#include <string>
#include <vector>

#include "mcl/model.hpp"

namespace mcl {

/// Backbone, neck and head shared with the self-supervised model, plus one
/// linear classifier applied to every level's pooled subimage features.
template <class T>
struct SupervisedNet {
    NetConfig cfg;
    Backbone<T> backbone;
    Neck<T> neck;
    Head<T> head;
    Linear<T> classifier;

    SupervisedNet() = default;
    SupervisedNet(const NetConfig& c, std::size_t classes, std::uint64_t seed) : cfg(c) {
        cfg.validate();
        SeededRng rng(seed, derive_stream(seed, {0x6e6574ULL}));
        backbone = Backbone<T>(cfg, rng);
        neck = Neck<T>(cfg, rng);
        head = Head<T>(cfg, rng);
        classifier = Linear<T>("classifier", cfg.pyramid_channels, classes, rng);
    }

    template <class F>
    void visit(F&& f) {
        backbone.visit(f);
        neck.visit(f);
        head.visit(f);
        classifier.visit(f);
    }

    template <class F>
    void visit_buffers(F&& f) {
        backbone.visit_buffers(f);
        head.visit_buffers(f);
    }

    std::vector<Parameter<T>*> parameters() {
        std::vector<Parameter<T>*> ps;
        visit([&](Parameter<T>& p) { ps.push_back(&p); });
        return ps;
    }
};

/// Row k of the result is the label of the source image in tile k.
inline std::vector<int> assemble_targets(const std::vector<int>& labels, const std::vector<std::size_t>& src_ids) {
    if (labels.size() != src_ids.size())
        throw std::invalid_argument("assemble_targets: " + std::to_string(labels.size()) + " labels for " +
                                    std::to_string(src_ids.size()) + " subimages");
    std::vector<int> out(src_ids.size());
    for (std::size_t k = 0; k < src_ids.size(); ++k) out[k] = labels.at(src_ids[k]);
    return out;
}

template <class T>
std::vector<int> assemble_targets(const std::vector<int>& labels, const MontageBatch<T>& mb) {
    return assemble_targets(labels, mb.src_ids);
}

/// Per-subimage logits in tile order: [B, classes].
template <class T>
Var<T> level_logits(Graph<T>& g, SupervisedNet<T>& net, const MontageBatch<T>& mb, ForwardMode mode) {
    return net.classifier(g, encode_subimages(g, net, mb, mode, RowOrder::ByTile));
}

/// sum_s weights[s] * mean cross-entropy of level s.
template <class T>
Var<T> multilevel_ce(const std::vector<Var<T>>& per_level_logits, const std::vector<std::vector<int>>& per_level_labels,
                     const std::vector<double>& level_weights) {
    if (per_level_logits.empty() || per_level_logits.size() != per_level_labels.size() ||
        per_level_logits.size() != level_weights.size())
        throw std::invalid_argument("multilevel_ce: logits, labels and weights must have one entry per level");
    std::vector<Var<T>> terms;
    std::vector<T> w;
    for (std::size_t s = 0; s < per_level_logits.size(); ++s) {
        terms.push_back(softmax_cross_entropy(per_level_logits[s], per_level_labels[s]));
        w.push_back(static_cast<T>(level_weights[s]));
    }
    return weighted_sum(terms, w);
}

/// 1/2^(s+1) per level, or 1 for every level when `uniform`.
inline std::vector<double> supervised_level_weights(int S, bool uniform) {
    std::vector<double> w;
    for (int s = 0; s < S; ++s) w.push_back(uniform ? 1.0 : 1.0 / static_cast<double>(std::size_t{1} << (s + 1)));
    return w;
}

}  // namespace mcl
