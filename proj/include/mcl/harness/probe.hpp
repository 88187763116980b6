#pragma once

// Linear probe: a linear classifier on globally pooled features of the
// frozen backbone's last stage. Neck and head are not used.

#include <cmath>
#include <stdexcept>
#include <vector>

#include "mcl/harness/config.hpp"
#include "mcl/harness/dataset.hpp"
#include "mcl/model.hpp"
#include "mcl/optim.hpp"

namespace mcl {

struct ProbeResult {
    double train_accuracy = 0;
    double eval_accuracy = 0;
    std::size_t feature_dim = 0;
};

/// [N, C_last] pooled features, eval-mode BN, no gradient and no state change.
template <class T>
Tensor<T> backbone_features(Backbone<T>& bb, const LabeledImages& data, std::size_t chunk = 100) {
    Tensor<T> out;
    for (std::size_t first = 0; first < data.size(); first += chunk) {
        const std::size_t n = std::min(chunk, data.size() - first);
        std::vector<std::size_t> ids(n);
        for (std::size_t i = 0; i < n; ++i) ids[i] = first + i;
        Graph<T> g(GradMode::Disabled);
        const auto stages = bb(g, g.constant(data.gather(ids).template cast<T>()), ForwardMode::eval());
        const Tensor<T> f = global_avg_pool(stages.back()).value();
        if (out.empty()) out = Tensor<T>({data.size(), f.dim(1)});
        std::copy(f.data(), f.data() + f.size(), out.data() + first * f.dim(1));
    }
    return out;
}

namespace probe_detail {

/// Standardises columns of both matrices with the statistics of `train`.
template <class T>
void standardize(Tensor<T>& train, Tensor<T>& eval) {
    const std::size_t N = train.dim(0), D = train.dim(1);
    for (std::size_t d = 0; d < D; ++d) {
        double m = 0, v = 0;
        for (std::size_t n = 0; n < N; ++n) m += static_cast<double>(train.at(n, d));
        m /= static_cast<double>(N);
        for (std::size_t n = 0; n < N; ++n) v += std::pow(static_cast<double>(train.at(n, d)) - m, 2);
        const double sd = std::sqrt(v / static_cast<double>(N)) + 1e-6;
        for (std::size_t n = 0; n < N; ++n) train.at(n, d) = static_cast<T>((train.at(n, d) - m) / sd);
        for (std::size_t n = 0; n < eval.dim(0); ++n) eval.at(n, d) = static_cast<T>((eval.at(n, d) - m) / sd);
    }
}

template <class T>
double accuracy(Linear<T>& clf, const Tensor<T>& x, const std::vector<int>& labels) {
    Graph<T> g(GradMode::Disabled);
    const Tensor<T> z = clf(g, g.constant(x)).value();
    std::size_t hit = 0;
    for (std::size_t n = 0; n < z.dim(0); ++n) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < z.dim(1); ++c)
            if (z.at(n, c) > z.at(n, best)) best = c;
        hit += static_cast<int>(best) == labels[n];
    }
    return static_cast<double>(hit) / static_cast<double>(z.dim(0));
}

}  // namespace probe_detail

/// SGD with momentum on a linear classifier over standardised features,
/// cosine-decayed learning rate. Reports top-1 on both splits.
template <class T>
ProbeResult probe_features(Tensor<T> train_x, const std::vector<int>& train_y, Tensor<T> eval_x,
                           const std::vector<int>& eval_y, std::size_t classes, const ProbeConfig& pc,
                           std::uint64_t seed) {
    if (train_x.dim(0) != train_y.size() || eval_x.dim(0) != eval_y.size())
        throw std::invalid_argument("linear_probe: feature and label counts differ");
    for (int y : train_y)
        if (y < 0 || static_cast<std::size_t>(y) >= classes) throw std::invalid_argument("linear_probe: class mismatch");
    for (int y : eval_y)
        if (y < 0 || static_cast<std::size_t>(y) >= classes) throw std::invalid_argument("linear_probe: class mismatch");
    probe_detail::standardize(train_x, eval_x);
    const std::size_t N = train_x.dim(0), D = train_x.dim(1);
    SeededRng init(seed, derive_stream(seed, {0x70726f6265ULL}));
    Linear<T> clf("probe", D, classes, init);
    Sgd<T> sgd(pc.momentum, pc.weight_decay);
    const std::size_t B = std::min(pc.batch_size, N);
    const long spe = static_cast<long>(N / B), total = spe * pc.epochs;
    long step = 0;
    for (long e = 0; e < pc.epochs; ++e) {
        SeededRng rng(seed, derive_stream(seed, {0x70726f6265ULL, static_cast<std::uint64_t>(e)}));
        const auto perm = rng.permutation(N);
        for (long k = 0; k < spe; ++k, ++step) {
            Tensor<T> xb({B, D});
            std::vector<int> yb(B);
            for (std::size_t i = 0; i < B; ++i) {
                const std::size_t src = perm[static_cast<std::size_t>(k) * B + i];
                std::copy(train_x.data() + src * D, train_x.data() + (src + 1) * D, xb.data() + i * D);
                yb[i] = train_y[src];
            }
            Graph<T> g;
            Var<T> loss = softmax_cross_entropy(clf(g, g.constant(xb)), yb);
            clf.weight.zero_grad();
            clf.bias.zero_grad();
            g.backward(loss);
            const double lr = pc.lr * 0.5 * (1 + std::cos(std::numbers::pi * static_cast<double>(step) / static_cast<double>(total)));
            sgd.step({&clf.weight, &clf.bias}, lr);
        }
    }
    return {probe_detail::accuracy(clf, train_x, train_y), probe_detail::accuracy(clf, eval_x, eval_y), D};
}

/// Probe of a frozen backbone; the backbone is only read.
template <class T>
ProbeResult linear_probe(Backbone<T>& bb, const DatasetSplits& data, const ProbeConfig& pc, std::uint64_t seed) {
    if (data.train.classes != data.eval.classes) throw std::invalid_argument("linear_probe: class mismatch");
    return probe_features(backbone_features(bb, data.train), data.train.labels, backbone_features(bb, data.eval),
                          data.eval.labels, data.train.classes, pc, seed);
}

}  // namespace mcl
