#pragma once

// Named ablation grids. Every cell runs pre-training and a linear probe from
// the same seed and epoch budget and yields one CSV row.

#include <filesystem>
#include <fstream>
#include <ostream>
#include <string>
#include <vector>

#include "mcl/harness/probe.hpp"
#include "mcl/harness/trainer.hpp"

namespace mcl {

struct AblationCell {
    std::string name;
    TrainConfig cfg;
};

inline const std::vector<std::string>& ablation_presets() {
    static const std::vector<std::string> p{"levels", "modes", "boundary", "wd-sweep", "rescale-sweep"};
    return p;
}

/// The cells of `preset` derived from `base`.
inline std::vector<AblationCell> ablation_cells(const std::string& preset, const TrainConfig& base) {
    std::vector<AblationCell> cells;
    auto cell = [&](const std::string& name) -> TrainConfig& {
        cells.push_back({name, base});
        cells.back().cfg.out_dir = (std::filesystem::path(base.out_dir) / preset / name).string();
        return cells.back().cfg;
    };
    if (preset == "levels") {
        // One backbone for every cell: deep enough for four pyramid levels.
        NetConfig net = base.net;
        while (net.stage_channels.size() < 4) net.stage_channels.push_back(net.stage_channels.back() * 2);
        for (int S = 1; S <= 4; ++S) {
            TrainConfig& c = cell("S" + std::to_string(S));
            c.net = net;
            c.net.pyramid_levels = S;
            c.loss.level_weights.clear();
        }
    } else if (preset == "modes") {
        for (char m : {'a', 'b', 'c', 'd'}) cell(std::string(1, m)).loss.mode = parse_mode(std::string(1, m));
    } else if (preset == "boundary") {
        cell("none").boundary_k = 0.0;
        cell("k0.75").boundary_k = 0.75;
        cell("k0.5").boundary_k = 0.5;
    } else if (preset == "wd-sweep") {
        for (double wd : wd_sweep_values()) cell("wd" + config_detail::fmt(wd)).optim.weight_decay = wd;
    } else if (preset == "rescale-sweep") {
        for (double a : rescale_sweep_values()) cell("rescale" + config_detail::fmt(a)).weight_rescale = a;
    } else {
        std::string known;
        for (const auto& p : ablation_presets()) known += (known.empty() ? "" : ", ") + p;
        throw std::invalid_argument("ablate: unknown preset '" + preset + "' (known: " + known + ")");
    }
    for (auto& c : cells) c.cfg.validate();
    return cells;
}

struct AblationRow {
    std::string preset, cell;
    long epochs = 0, steps = 0;
    double first_epoch_loss = 0, last_epoch_loss = 0;
    double pos_cos = 0, neg_cos = 0;  // means over the last epoch
    double probe_accuracy = 0;
};

inline std::string ablation_header() {
    return "preset,cell,epochs,steps,first_epoch_loss,last_epoch_loss,loss_drop,pos_cos,neg_cos,probe_accuracy";
}

inline std::string format_ablation_row(const AblationRow& r) {
    auto num = [](double v) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.6g", v);
        return std::string(buf);
    };
    const double drop = r.first_epoch_loss > 0 ? 1.0 - r.last_epoch_loss / r.first_epoch_loss : 0.0;
    return r.preset + "," + r.cell + "," + std::to_string(r.epochs) + "," + std::to_string(r.steps) + "," +
           num(r.first_epoch_loss) + "," + num(r.last_epoch_loss) + "," + num(drop) + "," + num(r.pos_cos) + "," +
           num(r.neg_cos) + "," + num(r.probe_accuracy);
}

/// Runs every cell and writes `csv_path` (one row per cell, flushed as it goes).
inline std::vector<AblationRow> run_ablation(const std::string& preset, const TrainConfig& base, const DatasetSplits& data,
                                             const std::string& csv_path, std::ostream* log = nullptr) {
    const auto cells = ablation_cells(preset, base);
    if (auto parent = std::filesystem::path(csv_path).parent_path(); !parent.empty())
        std::filesystem::create_directories(parent);
    std::ofstream csv(csv_path);
    if (!csv) throw std::runtime_error("ablate: cannot open " + csv_path);
    csv << ablation_header() << "\n";
    std::vector<AblationRow> rows;
    for (const auto& c : cells) {
        if (log) *log << "ablate " << preset << ": cell " << c.name << "\n";
        SslTrainer<float> tr(c.cfg, data.train);
        RunOptions ro;
        ro.out_dir = c.cfg.out_dir;
        ro.quiet = true;
        const RunSummary sum = run_pretrain(tr, ro, log);
        AblationRow r;
        r.preset = preset;
        r.cell = c.name;
        r.epochs = c.cfg.optim.total_epochs;
        r.steps = sum.steps;
        r.first_epoch_loss = epoch_mean_loss(sum.step_results, 1);
        r.last_epoch_loss = epoch_mean_loss(sum.step_results, r.epochs);
        long n = 0;
        for (const auto& s : sum.step_results)
            if (s.row.epoch == r.epochs) {
                r.pos_cos += s.row.pos_cos;
                r.neg_cos += s.row.neg_cos;
                ++n;
            }
        r.pos_cos /= static_cast<double>(n);
        r.neg_cos /= static_cast<double>(n);
        r.probe_accuracy = linear_probe(tr.pair().online.backbone, data, c.cfg.probe, c.cfg.seed).eval_accuracy;
        csv << format_ablation_row(r) << "\n";
        csv.flush();
        rows.push_back(r);
    }
    return rows;
}

}  // namespace mcl
