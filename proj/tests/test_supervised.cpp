#include <gtest/gtest.h>

#include <cmath>

#include "mcl/supervised.hpp"
#include "test_util.hpp"

using namespace mcl;
using mcl::testing::make_param;
using mcl::testing::random_tensor;

namespace {

NetConfig tiny_config(int S) {
    NetConfig c;
    c.stage_channels = {4, 6, 8};
    c.stem_channels = 4;
    c.pyramid_levels = S;
    c.pyramid_channels = 6;
    c.head_convs = 1;
    c.input_h = c.input_w = 16;
    return c;
}

double ce(const Tensor<double>& logits, const std::vector<int>& labels) {
    const std::size_t N = logits.dim(0), C = logits.dim(1);
    double total = 0;
    for (std::size_t n = 0; n < N; ++n) {
        double mx = -1e300, s = 0;
        for (std::size_t c = 0; c < C; ++c) mx = std::max(mx, logits.at(n, c));
        for (std::size_t c = 0; c < C; ++c) s += std::exp(logits.at(n, c) - mx);
        total += mx + std::log(s) - logits.at(n, static_cast<std::size_t>(labels[n]));
    }
    return total / static_cast<double>(N);
}

}  // namespace

TEST(AssembleTargets, Examples) {
    EXPECT_EQ(assemble_targets({7, 8, 9}, {0, 1, 2}), (std::vector<int>{7, 8, 9}));
    EXPECT_EQ(assemble_targets({0, 1, 2, 3}, {2, 0, 3, 1}), (std::vector<int>{2, 0, 3, 1}));
    const std::vector<std::size_t> perm{2, 0, 3, 1}, inv{1, 3, 0, 2};
    EXPECT_EQ(assemble_targets(assemble_targets({5, 6, 7, 8}, perm), inv), (std::vector<int>{5, 6, 7, 8}));
    EXPECT_THROW(assemble_targets({1, 2}, {0, 1, 2}), std::invalid_argument);
}

TEST(AssembleTargets, MatchesMontageTiles) {
    auto x = random_tensor<double>({16, 3, 16, 16}, 1);
    std::vector<int> labels(16);
    for (int i = 0; i < 16; ++i) labels[static_cast<std::size_t>(i)] = i % 5;
    SeededRng rng(4, 4);
    auto mb = assemble(x, 1, rng);
    auto t = assemble_targets(labels, mb);
    for (std::size_t k = 0; k < 16; ++k) EXPECT_EQ(t[k], labels[mb.src_ids[k]]);
}

TEST(MultilevelCe, UniformLogits) {
    Graph<double> g(GradMode::Disabled);
    auto z = g.constant(Tensor<double>({3, 7}, 0.3));
    auto l = multilevel_ce<double>({z}, {{0, 4, 6}}, {1.0}).value()[0];
    EXPECT_NEAR(l, std::log(7.0), 1e-12);
}

TEST(MultilevelCe, SaturatesToZero) {
    Graph<double> g(GradMode::Disabled);
    Tensor<double> z({2, 3}, 0.0);
    z.at(0, 1) = 200;
    z.at(1, 2) = 200;
    EXPECT_LT(multilevel_ce<double>({g.constant(z)}, {{1, 2}}, {1.0}).value()[0], 1e-80);
}

TEST(MultilevelCe, TwoLevelWeights) {
    Graph<double> g(GradMode::Disabled);
    auto z1 = g.constant(Tensor<double>({4, 4}, 1.0));
    auto z2 = g.constant(Tensor<double>({2, 4}, -2.0));
    const auto w = supervised_level_weights(2, false);
    EXPECT_EQ(w, (std::vector<double>{0.5, 0.25}));
    const double l = multilevel_ce<double>({z1, z2}, {{0, 1, 2, 3}, {3, 3}}, w).value()[0];
    EXPECT_NEAR(l, 0.75 * std::log(4.0), 1e-12);
    EXPECT_NEAR(l, 1.0397, 1e-4);
    EXPECT_EQ(supervised_level_weights(3, true), (std::vector<double>{1, 1, 1}));
}

TEST(MultilevelCe, ErrorsAndPermutation) {
    Graph<double> g(GradMode::Disabled);
    auto zt = random_tensor<double>({5, 3}, 2);
    EXPECT_THROW(multilevel_ce<double>({g.constant(zt)}, {{0, 1, 2, 3, 3}}, {1.0}), std::out_of_range);
    EXPECT_THROW(multilevel_ce<double>({g.constant(zt)}, {{0, 1, 2, 1, 0}}, {1.0, 0.5}), std::invalid_argument);
    const std::vector<int> labels{0, 1, 2, 1, 0};
    const std::vector<std::size_t> perm{3, 0, 4, 1, 2};
    Tensor<double> zp(zt.shape());
    std::vector<int> lp(5);
    for (std::size_t i = 0; i < 5; ++i) {
        for (std::size_t c = 0; c < 3; ++c) zp.at(i, c) = zt.at(perm[i], c);
        lp[i] = labels[perm[i]];
    }
    EXPECT_NEAR(multilevel_ce<double>({g.constant(zt)}, {labels}, {1.0}).value()[0],
                multilevel_ce<double>({g.constant(zp)}, {lp}, {1.0}).value()[0], 1e-12);
}

TEST(MultilevelCe, GradientMatchesFiniteDifferences) {
    auto W = make_param("W", random_tensor<double>({4, 6}, 3), ParamKind::LinearWeight);
    auto b = make_param("b", random_tensor<double>({4}, 4), ParamKind::Bias);
    auto f1 = random_tensor<double>({6, 6}, 5), f2 = random_tensor<double>({3, 6}, 6);
    auto r = finite_diff_check<double>(
        [&](Graph<double>& g) {
            auto z1 = linear(g.constant(f1), g.param(W), g.param(b));
            auto z2 = linear(g.constant(f2), g.param(W), g.param(b));
            return multilevel_ce<double>({z1, z2}, {{0, 1, 2, 3, 0, 1}, {3, 2, 1}}, {0.5, 0.25});
        },
        {&W, &b}, 1e-6);
    EXPECT_LT(r.max_rel_error, 1e-4) << r.worst_param;
}

TEST(SupervisedNetTest, LevelZeroIsPlainClassification) {
    auto cfg = tiny_config(1);
    SupervisedNet<double> net(cfg, 5, 9);
    auto x = random_tensor<double>({6, 3, 16, 16}, 7, 0, 1);
    const std::vector<int> labels{0, 4, 2, 1, 3, 2};
    SeededRng rng(1, 1);
    auto mb = assemble(x, 0, rng);
    Graph<double> g(GradMode::Disabled);
    auto z = level_logits(g, net, mb, ForwardMode::train_frozen_stats());
    const double l = multilevel_ce<double>({z}, {assemble_targets(labels, mb)}, {1.0}).value()[0];

    // Direct path on the unshuffled batch.
    auto stages = net.backbone(g, g.constant(x), ForwardMode::train_frozen_stats());
    auto pyr = net.neck(g, stages, cfg.pyramid_strides(), 16, 16);
    auto direct = net.classifier(g, global_avg_pool(net.head(g, pyr.maps[0], ForwardMode::train_frozen_stats())));
    EXPECT_NEAR(l, ce(direct.value(), labels), 1e-12);
}

TEST(SupervisedNetTest, LogitsInTileOrder) {
    auto cfg = tiny_config(2);
    SupervisedNet<double> net(cfg, 3, 10);
    auto x = random_tensor<double>({4, 3, 16, 16}, 8, 0, 1);
    SeededRng rng(2, 2);
    auto mb = assemble(x, 1, rng);
    Graph<double> g(GradMode::Disabled);
    auto z = level_logits(g, net, mb, ForwardMode::eval()).value();
    auto pooled = encode_subimages(g, net, mb, ForwardMode::eval(), RowOrder::BySource);
    auto zs = net.classifier(g, pooled).value();
    for (std::size_t k = 0; k < 4; ++k)
        for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(z.at(k, c), zs.at(mb.src_ids[k], c), 1e-12);
}
