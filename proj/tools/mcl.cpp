// mcl: pre-training, probing, montage previews, ablations and gradient checks.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "mcl/mcl.hpp"

namespace fs = std::filesystem;
using namespace mcl;

namespace {

TrainConfig build_config(const std::string& path, const std::vector<std::string>& overrides) {
    TrainConfig cfg = path.empty() ? TrainConfig{} : load_config(path);
    for (const auto& kv : overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw std::invalid_argument("--set expects key=value, got '" + kv + "'");
        set_config_value(cfg, config_detail::trim(kv.substr(0, eq)), kv.substr(eq + 1));
    }
    cfg.validate();
    return cfg;
}

int run_supervised(const TrainConfig& cfg, const DatasetSplits& data, const std::optional<std::string>& resume) {
    SupervisedTrainer<float> tr(cfg, data.train);
    if (resume) tr.restore(load_checkpoint(*resume));
    fs::create_directories(cfg.out_dir);
    const std::string csv = (fs::path(cfg.out_dir) / "supervised_metrics.csv").string();
    std::ofstream out(csv, resume ? std::ios::app : std::ios::trunc);
    if (!resume) out << "step,epoch,lr,loss\n";
    double sum = 0;
    long n = 0;
    while (!tr.done()) {
        const long s = tr.global_step();
        const double lr = tr.lr(s);
        sum += tr.step();
        ++n;
        if (n == cfg.log_every || tr.global_step() % tr.steps_per_epoch() == 0 || tr.done()) {
            const long epoch = (tr.global_step() - 1) / tr.steps_per_epoch() + 1;
            out << tr.global_step() << "," << epoch << "," << lr << "," << sum / static_cast<double>(n) << "\n";
            std::cout << "step " << tr.global_step() << " epoch " << epoch << " loss " << sum / static_cast<double>(n)
                      << "\n";
            sum = 0;
            n = 0;
        }
    }
    const std::string ckpt = (fs::path(cfg.out_dir) / "final.ckpt").string();
    save_checkpoint(ckpt, tr.state());
    std::cout << "metrics: " << csv << "\ncheckpoint: " << ckpt << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Multi-level contrastive pre-training on montage views"};
    app.require_subcommand(1);

    std::string config_path, mode, objective, resume, out_dir, ckpt, preset, csv_out;
    int levels = 0;
    std::vector<std::string> overrides;

    auto* pre = app.add_subcommand("pretrain", "Pre-train from a config file");
    pre->add_option("--config", config_path, "Run config (key = value)")->required()->check(CLI::ExistingFile);
    pre->add_option("--mode", mode, "Level matching mode")->check(CLI::IsMember({"a", "b", "c", "d"}));
    pre->add_option("--levels", levels, "Montage levels S")->check(CLI::Range(1, 8));
    pre->add_option("--objective", objective, "ssl or supervised")->check(CLI::IsMember({"ssl", "supervised"}));
    pre->add_option("--resume", resume, "Checkpoint to continue from")->check(CLI::ExistingFile);
    pre->add_option("--out", out_dir, "Output directory (overrides out_dir)");
    pre->add_option("--set", overrides, "Extra key=value overrides");

    auto* probe = app.add_subcommand("probe", "Linear probe of a checkpoint's frozen backbone");
    probe->add_option("--ckpt", ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
    probe->add_option("--config", config_path, "Config the checkpoint was trained with")->required()->check(CLI::ExistingFile);
    probe->add_option("--set", overrides, "Extra key=value overrides");

    auto* preview = app.add_subcommand("preview", "Write one outlined montage PPM per level");
    preview->add_option("--config", config_path, "Run config")->required()->check(CLI::ExistingFile);
    preview->add_option("--out", out_dir, "Output directory")->required();
    preview->add_option("--set", overrides, "Extra key=value overrides");

    auto* ablate = app.add_subcommand("ablate", "Run a named ablation grid");
    ablate->add_option("--preset", preset, "levels | modes | boundary | wd-sweep | rescale-sweep")->required();
    ablate->add_option("--config", config_path, "Base config (defaults built in)")->check(CLI::ExistingFile);
    ablate->add_option("--out", csv_out, "Results CSV (default <out_dir>/ablate_<preset>.csv)");
    ablate->add_option("--set", overrides, "Extra key=value overrides");

    auto* grad = app.add_subcommand("gradcheck", "Finite-difference check of the full loss in every mode");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*pre) {
            if (!mode.empty()) overrides.push_back("loss.mode=" + mode);
            if (levels > 0) overrides.push_back("net.levels=" + std::to_string(levels));
            if (!objective.empty()) overrides.push_back("objective=" + objective);
            if (!out_dir.empty()) overrides.push_back("out_dir=" + out_dir);
            const TrainConfig cfg = build_config(config_path, overrides);
            const DatasetSplits data = load_dataset(cfg.data);
            std::optional<std::string> res;
            if (!resume.empty()) res = resume;
            if (cfg.objective == "supervised") return run_supervised(cfg, data, res);
            SslTrainer<float> tr(cfg, data.train);
            RunOptions ro;
            ro.out_dir = cfg.out_dir;
            ro.resume = res;
            const RunSummary sum = run_pretrain(tr, ro, &std::cout);
            std::cout << "metrics: " << (fs::path(cfg.out_dir) / "metrics.csv").string()
                      << "\ncheckpoint: " << sum.final_checkpoint << "\n";
        } else if (*probe) {
            const TrainConfig cfg = build_config(config_path, overrides);
            const DatasetSplits data = load_dataset(cfg.data);
            const CheckpointData d = load_checkpoint(ckpt);
            ProbeResult r;
            if (cfg.objective == "supervised") {
                SupervisedTrainer<float> tr(cfg, data.train);
                tr.restore(d);
                r = linear_probe(tr.net().backbone, data, cfg.probe, cfg.seed);
            } else {
                SslTrainer<float> tr(cfg, data.train);
                tr.restore(d);
                r = linear_probe(tr.pair().online.backbone, data, cfg.probe, cfg.seed);
            }
            std::cout << "features " << r.feature_dim << "\ntrain_top1 " << r.train_accuracy << "\neval_top1 "
                      << r.eval_accuracy << "\n";
        } else if (*preview) {
            const TrainConfig cfg = build_config(config_path, overrides);
            const DatasetSplits data = load_dataset(cfg.data);
            for (const auto& p : montage_preview(cfg, data.train, out_dir))
                std::cout << "level " << p.level << ": " << p.boxes.size() << " tiles -> " << p.path << "\n";
        } else if (*ablate) {
            const TrainConfig cfg = build_config(config_path, overrides);
            const DatasetSplits data = load_dataset(cfg.data);
            if (csv_out.empty()) csv_out = (fs::path(cfg.out_dir) / ("ablate_" + preset + ".csv")).string();
            const auto rows = run_ablation(preset, cfg, data, csv_out, &std::cout);
            std::cout << ablation_header() << "\n";
            for (const auto& r : rows) std::cout << format_ablation_row(r) << "\n";
            std::cout << "results: " << csv_out << "\n";
        } else if (*grad) {
            bool ok = true;
            for (MatchMode m : {MatchMode::ToLargest, MatchMode::SameLevel, MatchMode::AdjacentLevels, MatchMode::DenseAll}) {
                const auto r = full_loss_gradcheck(m);
                const bool pass = r.max_rel_error < 1e-4;
                ok = ok && pass;
                std::cout << "mode " << mode_letter(m) << ": " << r.checked << " entries, max relative error "
                          << r.max_rel_error << " (" << r.worst_param << "[" << r.worst_index << "]) "
                          << (pass ? "PASS" : "FAIL") << "\n";
            }
            return ok ? 0 : 1;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
