#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "mcl/mcl.hpp"
#include "test_util.hpp"

using namespace mcl;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("mcl_harness_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

/// A run small enough for a unit test: 16x16 images, S=2, B=16.
TrainConfig micro_config(const fs::path& out) {
    TrainConfig c;
    std::istringstream in(R"(
        seed = 5
        batch_size = 16
        log_every = 2
        data.n_train = 64
        data.n_eval = 32
        data.classes = 4
        data.image_size = 16
        net.stem_channels = 4
        net.stage_channels = 4,8,8
        net.levels = 2
        net.pyramid_channels = 8
        net.head_convs = 1
        net.proj_hidden = 16
        net.embed_dim = 8
        optim.epochs = 3
        optim.warmup_epochs = 1
        optim.lr_scale = 8
        probe.epochs = 5
    )");
    c = parse_config(in);
    c.out_dir = out.string();
    c.validate();
    return c;
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

TEST(Config, SerializeRoundTrip) {
    TrainConfig c;
    set_config_value(c, "loss.mode", "c");
    set_config_value(c, "net.stage_channels", "8, 16,32");
    set_config_value(c, "loss.level_weights", "0.5,0.25,0.125");
    set_config_value(c, "optim.lr_scale", "0.1");
    set_config_value(c, "aug.asymmetric", "false");
    const std::string text = serialize_config(c);
    std::istringstream in(text);
    const TrainConfig back = parse_config(in);
    EXPECT_EQ(serialize_config(back), text);
    EXPECT_EQ(config_hash(back), config_hash(c));
    EXPECT_EQ(back.loss.mode, MatchMode::AdjacentLevels);
    EXPECT_EQ(back.net.stage_channels, (std::vector<std::size_t>{8, 16, 32}));
    EXPECT_EQ(back.optim.lr_scale, 0.1);
    EXPECT_FALSE(back.aug.asymmetric);
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
    std::istringstream unknown("seed = 1\n# comment\nnet.widht = 3\n");
    try {
        parse_config(unknown, "x.cfg");
        FAIL();
    } catch (const std::invalid_argument& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("x.cfg:3"), std::string::npos) << msg;
        EXPECT_NE(msg.find("net.widht"), std::string::npos) << msg;
    }
    std::istringstream bad_num("batch_size = 6four\n");
    EXPECT_THROW(parse_config(bad_num), std::invalid_argument);
    std::istringstream bad_bool("net.fpn = maybe\n");
    EXPECT_THROW(parse_config(bad_bool), std::invalid_argument);
    std::istringstream no_eq("seed 4\n");
    EXPECT_THROW(parse_config(no_eq), std::invalid_argument);
}

TEST(Config, ImageSizeDrivesNetworkAndAugmentation) {
    std::istringstream in("data.image_size = 32   # trailing comment\n");
    const TrainConfig c = parse_config(in);
    EXPECT_EQ(c.net.input_h, 32u);
    EXPECT_EQ(c.aug.out_w, 32u);
    EXPECT_NO_THROW(c.validate());
}

TEST(Config, HashTracksEveryKey) {
    const TrainConfig a;
    TrainConfig b = a;
    set_config_value(b, "probe.epochs", "31");
    EXPECT_NE(config_hash(a), config_hash(b));
}

TEST(Config, ShippedToyConfigLoads) {
    const TrainConfig c = load_config(MCL_SOURCE_DIR "/configs/toy.cfg");
    EXPECT_NO_THROW(c.validate());
    EXPECT_EQ(c.net.pyramid_levels, 3);
    EXPECT_EQ(c.batch_size, 64u);
    EXPECT_EQ(c.data.n_train, 2000u);
    EXPECT_EQ(c.loss.mode, MatchMode::ToLargest);
}

// ---------------------------------------------------------------------------
// Dataset

TEST(Dataset, DeterministicPerSeed) {
    const auto a = generate_shapes(40, 10, 32, 11, 0);
    const auto b = generate_shapes(40, 10, 32, 11, 0);
    EXPECT_EQ(a.images, b.images);
    EXPECT_EQ(a.labels, b.labels);
    const auto c = generate_shapes(40, 10, 32, 12, 0);
    EXPECT_NE(a.images, c.images);
    const auto eval = generate_shapes(40, 10, 32, 11, 1);
    EXPECT_NE(a.images, eval.images);
}

TEST(Dataset, ClassHistogramAndRange) {
    const auto d = generate_shapes(2000, 10, 16, 3, 0);
    std::vector<int> hist(10, 0);
    for (int y : d.labels) ++hist[static_cast<std::size_t>(y)];
    for (int h : hist) {
        EXPECT_GE(h, 180);
        EXPECT_LE(h, 220);
    }
    for (float v : d.images.values()) {
        ASSERT_GE(v, 0.0f);
        ASSERT_LE(v, 1.0f);
    }
}

TEST(Dataset, SizeDivisibleForFourLevels) {
    DatasetSpec s;
    s.image_size = 64;
    EXPECT_EQ(s.image_size % (std::size_t{1} << 3), 0u);
    EXPECT_EQ(usable_levels(64, 64, 64, 4), 4);
}

TEST(Dataset, DominantShapeDecidesClass) {
    // Images of one class share more structure with each other than with other
    // classes: nearest-class-mean on grayscale pixels beats chance.
    const auto tr = generate_shapes(400, 4, 32, 9, 0);
    const auto ev = generate_shapes(200, 4, 32, 9, 1);
    const std::size_t P = 32 * 32;
    auto gray = [&](const LabeledImages& d, std::size_t i, std::size_t p) {
        const float* x = d.images.data() + i * 3 * P;
        return (x[p] + x[P + p] + x[2 * P + p]) / 3.0f;
    };
    std::vector<std::vector<double>> mean(4, std::vector<double>(P, 0.0));
    std::vector<int> count(4, 0);
    for (std::size_t i = 0; i < tr.size(); ++i) {
        const auto y = static_cast<std::size_t>(tr.labels[i]);
        ++count[y];
        for (std::size_t p = 0; p < P; ++p) mean[y][p] += gray(tr, i, p);
    }
    for (std::size_t c = 0; c < 4; ++c)
        for (auto& v : mean[c]) v /= count[c];
    int hit = 0;
    for (std::size_t i = 0; i < ev.size(); ++i) {
        std::size_t best = 0;
        double best_d = 1e300;
        for (std::size_t c = 0; c < 4; ++c) {
            double dist = 0;
            for (std::size_t p = 0; p < P; ++p) dist += std::pow(gray(ev, i, p) - mean[c][p], 2);
            if (dist < best_d) best_d = dist, best = c;
        }
        hit += static_cast<int>(best) == ev.labels[i];
    }
    EXPECT_GT(hit, 60);  // chance is 50 of 200
}

TEST(Dataset, ImageDirectory) {
    const fs::path root = scratch_dir("imgdir");
    for (const char* split : {"train", "eval"})
        for (const char* cls : {"cat", "dog"}) {
            fs::create_directories(root / split / cls);
            for (int i = 0; i < 2; ++i) {
                Tensor<float> img({3, 8, 12}, cls[0] == 'c' ? 0.2f : 0.8f);
                write_ppm((root / split / cls / ("im" + std::to_string(i) + ".ppm")).string(), img);
            }
        }
    DatasetSpec s;
    s.kind = "images";
    s.path = root.string();
    s.image_size = 16;
    const auto d = load_dataset(s);
    EXPECT_EQ(d.train.classes, 2u);
    EXPECT_EQ(d.train.labels, (std::vector<int>{0, 0, 1, 1}));
    EXPECT_EQ(d.train.images.shape(), (Shape{4, 3, 16, 16}));
    EXPECT_NEAR(d.eval.images.at(3, 0, 5, 5), 204.0f / 255.0f, 1e-6f);
    s.path = (root / "missing").string();
    EXPECT_THROW(load_dataset(s), std::runtime_error);
}

// ---------------------------------------------------------------------------
// PPM

TEST(Ppm, RoundTripWithinQuantization) {
    const fs::path dir = scratch_dir("ppm");
    const auto img = mcl::testing::random_tensor<float>({3, 7, 9}, 4, 0.0, 1.0);
    const std::string path = (dir / "x.ppm").string();
    write_ppm(path, img);
    const auto back = read_ppm<float>(path);
    ASSERT_EQ(back.shape(), img.shape());
    EXPECT_LE(max_abs_diff(back, img), 0.5f / 255.0f + 1e-6f);
    const std::string bytes = read_file(path);
    EXPECT_EQ(bytes.substr(0, 11), "P6\n9 7\n255\n");
    EXPECT_EQ(bytes.size(), 11u + 3 * 7 * 9);
}

TEST(Ppm, RejectsOtherFormats) {
    const fs::path dir = scratch_dir("ppm_bad");
    std::ofstream((dir / "a.ppm").string()) << "P3\n1 1\n255\n0 0 0\n";
    EXPECT_THROW(read_ppm<float>((dir / "a.ppm").string()), std::runtime_error);
    std::ofstream((dir / "b.ppm").string(), std::ios::binary) << "P6\n4 4\n255\nabc";
    EXPECT_THROW(read_ppm<float>((dir / "b.ppm").string()), std::runtime_error);
    EXPECT_THROW(write_ppm((dir / "c.ppm").string(), Tensor<float>({1, 2, 2})), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// Checkpoint

TEST(Checkpoint, RoundTripIsBitExact) {
    const fs::path dir = scratch_dir("ckpt");
    CheckpointData d;
    d.config_hash = 0xdeadbeef01234567ULL;
    d.global_step = 42;
    d.tensors.emplace_back("a/w", mcl::testing::random_tensor<float>({2, 3, 4}, 1));
    d.tensors.emplace_back("b", Tensor<float>({5}, std::vector<float>{0.0f, -0.0f, 1e-38f, 3.4e38f, -1.5f}));
    d.tensors.emplace_back("empty", Tensor<float>({0}));
    const std::string path = (dir / "x.ckpt").string();
    save_checkpoint(path, d);
    const auto back = load_checkpoint(path);
    EXPECT_EQ(back.config_hash, d.config_hash);
    EXPECT_EQ(back.global_step, 42);
    ASSERT_EQ(back.tensors.size(), 3u);
    for (std::size_t i = 0; i < 3; ++i) {
        EXPECT_EQ(back.tensors[i].first, d.tensors[i].first);
        EXPECT_EQ(back.tensors[i].second.shape(), d.tensors[i].second.shape());
        EXPECT_EQ(std::memcmp(back.tensors[i].second.data(), d.tensors[i].second.data(), 4 * d.tensors[i].second.size()), 0);
    }
    const std::string text = read_file(path);
    EXPECT_EQ(text.rfind("MCLCKPT 1\nconfig_hash deadbeef01234567\nglobal_step 42\ndtype float32\n", 0), 0u);
    EXPECT_NE(text.find("tensor a/w 2,3,4 0 24\n"), std::string::npos);
    EXPECT_NE(text.find("payload 116\n"), std::string::npos);
    // Payload is little-endian float32: -1.5f = 0xbfc00000.
    const std::string tail = text.substr(text.size() - 4);
    EXPECT_EQ(static_cast<unsigned char>(tail[3]), 0xbf);
    EXPECT_EQ(static_cast<unsigned char>(tail[2]), 0xc0);
}

TEST(Checkpoint, RejectsDamage) {
    const fs::path dir = scratch_dir("ckpt_bad");
    CheckpointData d;
    d.tensors.emplace_back("w", Tensor<float>({4}, 1.0f));
    const std::string path = (dir / "x.ckpt").string();
    save_checkpoint(path, d);
    std::string text = read_file(path);
    std::ofstream((dir / "trunc.ckpt").string(), std::ios::binary) << text.substr(0, text.size() - 3);
    EXPECT_THROW(load_checkpoint((dir / "trunc.ckpt").string()), std::runtime_error);
    std::ofstream((dir / "magic.ckpt").string(), std::ios::binary) << "XX" << text;
    EXPECT_THROW(load_checkpoint((dir / "magic.ckpt").string()), std::runtime_error);
    EXPECT_THROW(load_checkpoint((dir / "none.ckpt").string()), std::runtime_error);
    EXPECT_THROW(d.get("missing"), std::runtime_error);
}

// ---------------------------------------------------------------------------
// Training loop

TEST(Pretrain, ZeroLrStepKeepsOnlineAndMovesTarget) {
    const fs::path dir = scratch_dir("lr0");
    TrainConfig c = micro_config(dir);
    c.optim.lr_scale = 0.0;
    const auto data = load_dataset(c.data);
    SslTrainer<float> tr(c, data.train);
    std::vector<Tensor<float>> init;
    for (auto* p : tr.pair().online_parameters()) init.push_back(p->value);
    std::vector<Tensor<float>> target_stats_before;
    tr.pair().target.visit_buffers([&](const std::string&, Tensor<float>& t) { target_stats_before.push_back(t); });
    tr.step();
    const auto ps = tr.pair().online_parameters();
    for (std::size_t i = 0; i < ps.size(); ++i) EXPECT_EQ(ps[i]->value, init[i]) << ps[i]->name;

    // Target running statistics move toward the online ones, which the
    // train-mode forward pass updated.
    std::vector<Tensor<float>> online_stats, target_stats;
    tr.pair().online.visit_buffers([&](const std::string&, Tensor<float>& t) { online_stats.push_back(t); });
    tr.pair().target.visit_buffers([&](const std::string&, Tensor<float>& t) { target_stats.push_back(t); });
    bool moved = false;
    for (std::size_t i = 0; i < target_stats.size(); ++i) {
        const double before = max_abs_diff(target_stats_before[i], online_stats[i]);
        const double after = max_abs_diff(target_stats[i], online_stats[i]);
        EXPECT_LE(after, before + 1e-7);
        moved = moved || after < before;
    }
    EXPECT_TRUE(moved);
}

TEST(Pretrain, MetricsRowsAreConsistent) {
    const fs::path dir = scratch_dir("metrics");
    const TrainConfig c = micro_config(dir);
    const auto data = load_dataset(c.data);
    SslTrainer<float> tr(c, data.train);
    RunOptions ro;
    ro.out_dir = dir.string();
    const auto sum = run_pretrain(tr, ro);
    EXPECT_EQ(sum.steps, 12);  // 4 steps per epoch, 3 epochs
    const auto rows = read_metrics((dir / "metrics.csv").string());
    ASSERT_EQ(rows.size(), 6u);  // every 2 steps
    std::ifstream in(dir / "metrics.csv");
    std::string header;
    std::getline(in, header);
    EXPECT_EQ(header, "step,epoch,lr,ema_m,total_loss,loss_l0,loss_l1,pos_cos,neg_cos,wall_time");
    double prev_step = 0;
    for (const auto& r : rows) {
        ASSERT_EQ(r.size(), 10u);
        EXPECT_GT(r[0], prev_step);
        prev_step = r[0];
        const double weighted = c.loss.weight(0) * r[5] + c.loss.weight(1) * r[6];
        EXPECT_NEAR(r[4], weighted, 1e-5);
        EXPECT_TRUE(std::isfinite(r[4]));
    }
    EXPECT_TRUE(fs::exists(dir / "final.ckpt"));
}

TEST(Pretrain, SeededRerunsMatch) {
    const fs::path a = scratch_dir("det_a"), b = scratch_dir("det_b");
    for (const auto& dir : {a, b}) {
        const TrainConfig c = micro_config(dir);
        const auto data = load_dataset(c.data);
        SslTrainer<float> tr(c, data.train);
        RunOptions ro;
        ro.out_dir = dir.string();
        run_pretrain(tr, ro);
    }
    EXPECT_EQ(read_metrics_without_wall_time((a / "metrics.csv").string()),
              read_metrics_without_wall_time((b / "metrics.csv").string()));
    // The checkpoint config hash covers out_dir, so compare payload tensors.
    const auto ca = load_checkpoint((a / "final.ckpt").string()), cb = load_checkpoint((b / "final.ckpt").string());
    ASSERT_EQ(ca.tensors.size(), cb.tensors.size());
    for (std::size_t i = 0; i < ca.tensors.size(); ++i) EXPECT_EQ(ca.tensors[i].second, cb.tensors[i].second);
}

TEST(Pretrain, ResumeReplaysTheUninterruptedRun) {
    const fs::path dir = scratch_dir("resume");
    const TrainConfig c = micro_config(dir);
    const auto data = load_dataset(c.data);
    SslTrainer<float> full(c, data.train);
    std::vector<double> ref;
    while (!full.done()) ref.push_back(full.step().row.total_loss);

    SslTrainer<float> first(c, data.train);
    for (int k = 0; k < 5; ++k) first.step();
    first.save((dir / "mid.ckpt").string());
    SslTrainer<float> second(c, data.train);
    second.load((dir / "mid.ckpt").string());
    EXPECT_EQ(second.global_step(), 5);
    for (std::size_t k = 5; k < ref.size(); ++k) EXPECT_EQ(second.step().row.total_loss, ref[k]) << "step " << k;
}

TEST(Pretrain, CheckpointFromOtherConfigRejected) {
    const fs::path dir = scratch_dir("hash");
    TrainConfig c = micro_config(dir);
    const auto data = load_dataset(c.data);
    SslTrainer<float> tr(c, data.train);
    tr.save((dir / "a.ckpt").string());
    c.loss.tau = 0.3;
    SslTrainer<float> other(c, data.train);
    try {
        other.load((dir / "a.ckpt").string());
        FAIL();
    } catch (const std::runtime_error& e) {
        EXPECT_NE(std::string(e.what()).find("config hash"), std::string::npos);
    }
}

TEST(Pretrain, NonFiniteLossAbortsAndKeepsLastCheckpoint) {
    const fs::path dir = scratch_dir("nan");
    TrainConfig c = micro_config(dir);
    c.checkpoint_every = 1;
    const auto data = load_dataset(c.data);
    SslTrainer<float> tr(c, data.train);
    RunOptions ro;
    ro.out_dir = dir.string();
    ro.stop_after = 4;  // one epoch, which writes checkpoint.ckpt
    run_pretrain(tr, ro);
    const std::string before = read_file(dir / "checkpoint.ckpt");
    const auto params = tr.pair().online_parameters();
    params[0]->value[0] = std::numeric_limits<float>::quiet_NaN();
    ro.stop_after = -1;
    EXPECT_THROW(run_pretrain(tr, ro), std::runtime_error);
    EXPECT_EQ(read_file(dir / "checkpoint.ckpt"), before);
    EXPECT_EQ(tr.global_step(), 4);
}

TEST(Pretrain, RejectsBatchWithoutEveryLevel) {
    TrainConfig c = micro_config(scratch_dir("badb"));
    c.batch_size = 6;  // level 1 needs a multiple of 4
    const auto data = load_dataset(c.data);
    EXPECT_THROW(SslTrainer<float>(c, data.train), std::invalid_argument);
}

TEST(Supervised, CheckpointResume) {
    const fs::path dir = scratch_dir("sup");
    TrainConfig c = micro_config(dir);
    c.objective = "supervised";
    const auto data = load_dataset(c.data);
    SupervisedTrainer<float> full(c, data.train);
    std::vector<double> ref;
    while (!full.done()) ref.push_back(full.step());
    SupervisedTrainer<float> a(c, data.train);
    for (int k = 0; k < 3; ++k) a.step();
    const auto state = a.state();
    SupervisedTrainer<float> b(c, data.train);
    b.restore(state);
    for (std::size_t k = 3; k < ref.size(); ++k) EXPECT_EQ(b.step(), ref[k]);
    for (double l : ref) EXPECT_TRUE(std::isfinite(l));
}

// ---------------------------------------------------------------------------
// Preview

TEST(Preview, OutlinedTilesAndReread) {
    const fs::path dir = scratch_dir("preview");
    TrainConfig c;
    set_config_value(c, "net.levels", "3");
    const auto data = generate_shapes(16, 10, 64, 2, 0);
    const auto imgs = montage_preview(c, data, dir.string());
    ASSERT_EQ(imgs.size(), 3u);
    ASSERT_EQ(imgs[0].boxes.size(), 1u);
    EXPECT_EQ(imgs[0].boxes[0], (Box{0, 0, 64, 64}));
    ASSERT_EQ(imgs[2].boxes.size(), 16u);
    for (const auto& b : imgs[2].boxes) {
        EXPECT_EQ(b.x1 - b.x0, 16u);
        EXPECT_EQ(b.y1 - b.y0, 16u);
        // outline is yellow
        EXPECT_EQ(imgs[2].image.at(0, b.y0, b.x0), 1.0f);
        EXPECT_EQ(imgs[2].image.at(2, b.y1 - 1, b.x1 - 1), 0.0f);
    }
    for (const auto& p : imgs) {
        const auto back = read_ppm<float>(p.path);
        EXPECT_LE(max_abs_diff(back, p.image), 0.5f / 255.0f + 1e-6f);
    }
    EXPECT_THROW(montage_preview(c, data, "/proc/none/x"), std::runtime_error);
}

// ---------------------------------------------------------------------------
// Probe

TEST(Probe, BackboneUntouched) {
    const fs::path dir = scratch_dir("probe");
    const TrainConfig c = micro_config(dir);
    const auto data = load_dataset(c.data);
    NetworkPair<float> pair(c.net, 3);
    std::vector<Tensor<float>> before;
    pair.online.backbone.visit([&](Parameter<float>& p) { before.push_back(p.value); });
    pair.online.backbone.visit_buffers([&](const std::string&, Tensor<float>& t) { before.push_back(t); });
    const auto r = linear_probe(pair.online.backbone, data, c.probe, 1);
    std::size_t i = 0;
    pair.online.backbone.visit([&](Parameter<float>& p) { EXPECT_EQ(p.value, before[i++]) << p.name; });
    pair.online.backbone.visit_buffers([&](const std::string& n, Tensor<float>& t) { EXPECT_EQ(t, before[i++]) << n; });
    EXPECT_EQ(r.feature_dim, 8u);
    EXPECT_GE(r.eval_accuracy, 0.0);
    EXPECT_LE(r.eval_accuracy, 1.0);
}

TEST(Probe, SeparableFeaturesAreLearned) {
    // Class means far apart relative to the noise: a linear probe must solve it.
    const std::size_t N = 300, D = 6, C = 3;
    SeededRng rng(1, 2);
    auto make = [&](std::size_t n, std::vector<int>& y) {
        Tensor<double> x({n, D});
        y.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            y[i] = static_cast<int>(i % C);
            for (std::size_t d = 0; d < D; ++d) x.at(i, d) = 0.3 * rng.normal() + (d == static_cast<std::size_t>(y[i]) ? 3.0 : 0.0);
        }
        return x;
    };
    std::vector<int> ytr, yev;
    auto xtr = make(N, ytr), xev = make(90, yev);
    ProbeConfig pc;
    pc.epochs = 10;
    const auto r = probe_features(xtr, ytr, xev, yev, C, pc, 4);
    EXPECT_GE(r.eval_accuracy, 0.98);
    std::vector<int> wrong = yev;
    wrong[0] = 7;
    EXPECT_THROW(probe_features(xtr, ytr, xev, wrong, C, pc, 4), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// Ablation

TEST(Ablation, PresetCells) {
    const TrainConfig base;
    auto names = [&](const std::string& p) {
        std::vector<std::string> n;
        for (const auto& c : ablation_cells(p, base)) n.push_back(c.name);
        return n;
    };
    EXPECT_EQ(names("modes"), (std::vector<std::string>{"a", "b", "c", "d"}));
    EXPECT_EQ(names("levels"), (std::vector<std::string>{"S1", "S2", "S3", "S4"}));
    EXPECT_EQ(names("boundary"), (std::vector<std::string>{"none", "k0.75", "k0.5"}));
    EXPECT_EQ(names("wd-sweep").size(), 3u);
    EXPECT_EQ(names("rescale-sweep").size(), 2u);
    const auto lv = ablation_cells("levels", base);
    for (int S = 1; S <= 4; ++S) {
        EXPECT_EQ(lv[static_cast<std::size_t>(S - 1)].cfg.net.pyramid_levels, S);
        EXPECT_EQ(lv[static_cast<std::size_t>(S - 1)].cfg.net.stage_channels, lv[0].cfg.net.stage_channels);
    }
    const auto b = ablation_cells("boundary", base);
    EXPECT_EQ(b[0].cfg.boundary_k, 0.0);
    EXPECT_EQ(b[1].cfg.boundary_k, 0.75);
    EXPECT_EQ(b[2].cfg.boundary_k, 0.5);
    const auto wd = ablation_cells("wd-sweep", base);
    EXPECT_EQ(wd[0].cfg.optim.weight_decay, 1.5e-6);
    EXPECT_EQ(wd[2].cfg.optim.weight_decay, 1e-5);
    EXPECT_EQ(ablation_cells("rescale-sweep", base)[1].cfg.weight_rescale, 2.0);
    EXPECT_THROW(ablation_cells("depth", base), std::invalid_argument);
}

TEST(Ablation, ModesRunProducesOneRowPerMode) {
    const fs::path dir = scratch_dir("ablate");
    TrainConfig c = micro_config(dir);
    c.optim.total_epochs = 4;
    const auto data = load_dataset(c.data);
    const auto rows = run_ablation("modes", c, data, (dir / "modes.csv").string());
    ASSERT_EQ(rows.size(), 4u);
    for (const auto& r : rows) {
        EXPECT_TRUE(std::isfinite(r.first_epoch_loss) && std::isfinite(r.last_epoch_loss)) << r.cell;
        EXPECT_LT(r.last_epoch_loss, r.first_epoch_loss) << r.cell;
    }
    std::ifstream in(dir / "modes.csv");
    std::string line;
    int n = 0;
    while (std::getline(in, line)) ++n;
    EXPECT_EQ(n, 5);
    EXPECT_NE(read_file(dir / "modes" / "a" / "metrics.csv"), read_file(dir / "modes" / "d" / "metrics.csv"));
}
