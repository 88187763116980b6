#include <gtest/gtest.h>

#include <cmath>

#include "mcl/objective.hpp"
#include "test_util.hpp"

using namespace mcl;
using mcl::testing::random_tensor;

namespace {

NetConfig tiny_config(int S = 2) {
    NetConfig c;
    c.stage_channels = {4, 6, 8};
    c.stem_channels = 4;
    c.pyramid_levels = S;
    c.pyramid_channels = 6;
    c.head_convs = 1;
    c.proj_hidden = 12;
    c.embed_dim = 5;
    c.input_h = c.input_w = 16;
    return c;
}

double row_norm(const Tensor<double>& t, std::size_t r) {
    const std::size_t D = t.dim(1);
    return l2_norm(std::span<const double>(t.data() + r * D, D));
}

}  // namespace

TEST(Pyramid, StridesAndSizes) {
    NetConfig cfg;  // defaults: 64x64, S=3
    EXPECT_EQ(cfg.pyramid_strides(), (std::vector<std::size_t>{4, 8, 16}));
    SeededRng rng(1, 1);
    Encoder<float> enc(cfg, rng);
    Graph<float> g(GradMode::Disabled);
    auto pyr = forward_pyramid(g, enc, g.constant(random_tensor<float>({2, 3, 64, 64}, 2)), ForwardMode::train());
    ASSERT_EQ(pyr.levels(), 3u);
    const std::size_t sizes[] = {16, 8, 4};
    for (std::size_t l = 0; l < 3; ++l)
        EXPECT_EQ(pyr.maps[l].shape(), (Shape{2, cfg.pyramid_channels, sizes[l], sizes[l]}));
}

TEST(Pyramid, SingleLevelIsLastStage) {
    auto cfg = tiny_config(1);
    SeededRng rng(3, 1);
    Encoder<double> enc(cfg, rng);
    Graph<double> g(GradMode::Disabled);
    auto x = g.constant(random_tensor<double>({2, 3, 16, 16}, 4));
    auto pyr = forward_pyramid(g, enc, x, ForwardMode::train_frozen_stats());
    ASSERT_EQ(pyr.levels(), 1u);
    auto stages = enc.backbone(g, x, ForwardMode::train_frozen_stats());
    auto expect = enc.neck.smooth[0](g, enc.neck.lateral[0](g, stages.back()));
    EXPECT_EQ(pyr.maps[0].value(), expect.value());
}

TEST(Pyramid, NonFpnInterpolatesLastStage) {
    NetConfig cfg;
    cfg.fpn = false;
    SeededRng rng(5, 1);
    Encoder<double> enc(cfg, rng);
    Graph<double> g(GradMode::Disabled);
    auto x = g.constant(random_tensor<double>({1, 3, 64, 64}, 6));
    auto pyr = forward_pyramid(g, enc, x, ForwardMode::train_frozen_stats());
    auto stages = enc.backbone(g, x, ForwardMode::train_frozen_stats());
    auto base = enc.neck.lateral[0](g, stages.back()).value();
    const std::size_t sizes[] = {16, 8, 4};
    for (std::size_t l = 0; l < 3; ++l) EXPECT_EQ(pyr.maps[l].value(), resize_bilinear(base, sizes[l], sizes[l]));
}

TEST(Pyramid, RejectsIndivisibleInput) {
    NetConfig cfg;
    SeededRng rng(1, 1);
    Encoder<float> enc(cfg, rng);
    Graph<float> g(GradMode::Disabled);
    EXPECT_THROW(forward_pyramid(g, enc, g.constant(Tensor<float>({1, 3, 40, 40})), ForwardMode::train()),
                 std::invalid_argument);
    cfg.input_h = 60;
    EXPECT_THROW(cfg.validate(), std::invalid_argument);
    cfg = NetConfig{};
    cfg.pyramid_levels = 5;
    EXPECT_THROW(cfg.validate(), std::invalid_argument);
}

TEST(AssignLevel, Rule) {
    EXPECT_EQ(assign_level(0, 3), 2u);
    EXPECT_EQ(assign_level(2, 3), 0u);
    EXPECT_EQ(assign_level(1, 3), 1u);
    EXPECT_EQ(assign_level(0, 1), 0u);
    EXPECT_THROW(assign_level(3, 3), std::out_of_range);
    EXPECT_THROW(assign_level(-1, 3), std::out_of_range);
}

TEST(AssignLevel, EqualPooledRegionAcrossLevels) {
    for (int S = 1; S <= 4; ++S)
        for (int stem : {1, 2}) {
            NetConfig cfg;
            cfg.pyramid_levels = S;
            cfg.stem_stride = stem;
            cfg.input_h = cfg.input_w = 128;
            const auto strides = cfg.pyramid_strides();
            const std::size_t finest = strides.front();
            const std::size_t expect = 128 / (finest << (S - 1));
            for (int s = 0; s < S; ++s) {
                EXPECT_EQ(pooled_region_cells(128, s, strides), expect) << "S=" << S << " s=" << s;
                EXPECT_EQ(strides[assign_level(s, S)], finest << (S - 1 - s));
            }
        }
}

TEST(PoolLatents, ConstantMap) {
    FeaturePyramid<double> pyr;
    Graph<double> g(GradMode::Disabled);
    pyr.maps = {g.constant(Tensor<double>({1, 3, 4, 4}, 0.7)), g.constant(Tensor<double>({4, 3, 2, 2}, 0.7))};
    pyr.strides = {2, 4};
    MontageBatch<double> mb;
    mb.level = 1;
    mb.ratio = 2;
    mb.boxes = subimage_boxes(1, 8, 8);
    mb.src_ids = {3, 1, 0, 2};
    auto u = pool_subimage_latents(pyr, mb).value();
    for (double v : u.values()) EXPECT_DOUBLE_EQ(v, 0.7);
}

TEST(PoolLatents, QuadrantsFollowSourceOrder) {
    Tensor<double> f({1, 1, 4, 4});
    const double q[4] = {10, 20, 30, 40};  // top-left, top-right, bottom-left, bottom-right
    for (std::size_t y = 0; y < 4; ++y)
        for (std::size_t x = 0; x < 4; ++x) f.at(0, 0, y, x) = q[(y / 2) * 2 + x / 2];
    Graph<double> g(GradMode::Disabled);
    FeaturePyramid<double> pyr;
    pyr.maps = {g.constant(f), Var<double>{}};
    pyr.strides = {1, 2};
    MontageBatch<double> mb;
    mb.level = 1;
    mb.ratio = 2;
    mb.boxes = subimage_boxes(1, 4, 4);
    mb.src_ids = {2, 0, 3, 1};
    auto by_src = pool_subimage_latents(pyr, mb, RowOrder::BySource).value();
    // source 0 sits in tile 1, source 1 in tile 3, source 2 in tile 0, source 3 in tile 2
    EXPECT_EQ(by_src.storage(), (std::vector<double>{20, 40, 10, 30}));
    auto by_tile = pool_subimage_latents(pyr, mb, RowOrder::ByTile).value();
    EXPECT_EQ(by_tile.storage(), (std::vector<double>{10, 20, 30, 40}));
}

TEST(PoolLatents, FullBoxIsGlobalPool) {
    Graph<double> g(GradMode::Disabled);
    auto f = random_tensor<double>({2, 3, 4, 4}, 8);
    FeaturePyramid<double> pyr;
    pyr.maps = {g.constant(f)};
    pyr.strides = {4};
    MontageBatch<double> mb;
    mb.boxes = subimage_boxes(0, 16, 16);
    mb.src_ids = {1, 0};
    auto u = pool_subimage_latents(pyr, mb).value();
    auto gp = global_avg_pool(g.constant(f)).value();
    for (std::size_t c = 0; c < 3; ++c) {
        EXPECT_NEAR(u.at(0, c), gp.at(1, c), 1e-15);
        EXPECT_NEAR(u.at(1, c), gp.at(0, c), 1e-15);
    }
}

TEST(PoolLatents, RejectsUnalignedBox) {
    Graph<double> g(GradMode::Disabled);
    FeaturePyramid<double> pyr;
    pyr.maps = {g.constant(Tensor<double>({1, 1, 2, 2}, 1.0)), Var<double>{}};
    pyr.strides = {3, 6};
    MontageBatch<double> mb;
    mb.level = 1;
    mb.ratio = 2;
    mb.boxes = subimage_boxes(1, 4, 4);
    mb.src_ids = {0, 1, 2, 3};
    EXPECT_THROW(pool_subimage_latents(pyr, mb), std::invalid_argument);
}

TEST(Projection, UnitRowsAndPredictorAsymmetry) {
    auto cfg = tiny_config();
    NetworkPair<double> pair(cfg, 11);
    auto x = random_tensor<double>({4, 3, 16, 16}, 12, 0, 1);
    SeededRng rng(1, 1);
    auto mb = assemble(x, 1, rng);
    Graph<double> g;
    auto pooled = encode_subimages(g, pair.online, mb, ForwardMode::train());
    EXPECT_EQ(pooled.shape(), (Shape{4, cfg.pyramid_channels}));
    auto u = project_online(g, pair.online, pair.predictor, pooled, ForwardMode::train()).value();
    auto v = project_target(g, pair.online, pooled, ForwardMode::train()).value();
    for (std::size_t r = 0; r < 4; ++r) {
        EXPECT_NEAR(row_norm(u, r), 1.0, 1e-6);
        EXPECT_NEAR(row_norm(v, r), 1.0, 1e-6);
    }
    EXPECT_GT(max_abs_diff(u, v), 1e-3);
}

TEST(NetworkPairTest, TargetCongruentAndGradientFree) {
    auto cfg = tiny_config();
    NetworkPair<double> pair(cfg, 21);
    auto on = pair.online_parameters();
    auto tg = pair.target_parameters();
    ASSERT_EQ(tg.size() + 5, on.size());  // predictor fc1.weight, bn1, fc2
    for (std::size_t i = 0; i < tg.size(); ++i) {
        EXPECT_EQ(on[i]->name, tg[i]->name);
        EXPECT_EQ(on[i]->value.shape(), tg[i]->value.shape());
        EXPECT_EQ(on[i]->value, tg[i]->value);
    }

    std::vector<Tensor<double>> before;
    for (auto* p : tg) before.push_back(p->value);
    ObjectiveOptions opt;
    auto x1 = random_tensor<double>({4, 3, 16, 16}, 22, 0, 1);
    auto x2 = random_tensor<double>({4, 3, 16, 16}, 23, 0, 1);
    Graph<double> g;
    auto res = mcl_objective(g, pair, x1, x2, opt);
    EXPECT_EQ(res.levels, 2);
    g.backward(res.loss.total);
    for (std::size_t i = 0; i < tg.size(); ++i) {
        EXPECT_TRUE(tg[i]->grad.empty()) << tg[i]->name;
        EXPECT_EQ(tg[i]->value, before[i]) << tg[i]->name;
    }
    bool any_grad = false;
    for (auto* p : on)
        if (!p->grad.empty())
            for (double v : p->grad.values()) any_grad = any_grad || v != 0.0;
    EXPECT_TRUE(any_grad);
}

TEST(Ema, Endpoints) {
    auto cfg = tiny_config();
    NetworkPair<double> pair(cfg, 31);
    for (auto* p : pair.online_parameters())
        for (auto& v : p->value.values()) v += 0.5;
    auto snapshot = [&] {
        std::vector<Tensor<double>> s;
        for (auto* p : pair.target_parameters()) s.push_back(p->value);
        return s;
    };
    auto t0 = snapshot();
    ema_update(pair, 1.0);
    EXPECT_EQ(snapshot(), t0);
    ema_update(pair, 0.0);
    auto on = pair.online_parameters();
    auto tg = pair.target_parameters();
    for (std::size_t i = 0; i < tg.size(); ++i) EXPECT_EQ(tg[i]->value, on[i]->value);
    EXPECT_THROW(ema_update(pair, 1.5), std::invalid_argument);
}

TEST(Ema, ArithmeticAndRunningStats) {
    auto cfg = tiny_config();
    NetworkPair<double> pair(cfg, 41);
    for (auto* p : pair.target_parameters()) p->value.fill(0.0);
    for (auto* p : pair.online_parameters()) p->value.fill(1.0);
    pair.online.backbone.stem_bn.state.running_mean.fill(2.0);
    pair.target.backbone.stem_bn.state.running_mean.fill(0.0);
    ema_update(pair, 0.99);
    for (auto* p : pair.target_parameters())
        for (double v : p->value.values()) EXPECT_NEAR(v, 0.01, 1e-15);
    for (double v : pair.target.backbone.stem_bn.state.running_mean.values()) EXPECT_NEAR(v, 0.02, 1e-15);
}

TEST(Ema, ContractsTowardOnline) {
    auto cfg = tiny_config();
    NetworkPair<double> pair(cfg, 51);
    for (auto* p : pair.online_parameters())
        for (auto& v : p->value.values()) v *= 1.7;
    auto dist = [&] {
        double d = 0;
        auto on = pair.online_parameters();
        auto tg = pair.target_parameters();
        for (std::size_t i = 0; i < tg.size(); ++i)
            for (std::size_t k = 0; k < tg[i]->value.size(); ++k) d += std::pow(tg[i]->value[k] - on[i]->value[k], 2);
        return std::sqrt(d);
    };
    double prev = dist();
    ASSERT_GT(prev, 0);
    for (int i = 0; i < 20; ++i) {
        ema_update(pair, 0.9);
        const double d = dist();
        EXPECT_LT(d, prev);
        prev = d;
    }
}

TEST(MomentumSchedule, Values) {
    EXPECT_EQ(momentum_schedule(0, 100, 0.99), 0.99);
    EXPECT_EQ(momentum_schedule(100, 100, 0.99), 1.0);
    EXPECT_NEAR(momentum_schedule(50, 100, 0.99), 0.995, 1e-15);
    double prev = 0;
    for (long k = 0; k <= 100; ++k) {
        const double m = momentum_schedule(k, 100, 0.99);
        EXPECT_GE(m, prev);
        prev = m;
    }
    EXPECT_THROW(momentum_schedule(101, 100, 0.99), std::out_of_range);
}

TEST(Objective, UsableLevels) {
    EXPECT_EQ(usable_levels(64, 64, 64, 3), 3);
    EXPECT_EQ(usable_levels(8, 64, 64, 3), 2);
    EXPECT_EQ(usable_levels(2, 64, 64, 3), 1);
    EXPECT_EQ(usable_levels(64, 6, 6, 3), 2);
}
