#pragma once

// Training loops. Every random draw is keyed by (seed, global step), so a
// run resumed from a checkpoint replays the uninterrupted run exactly.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mcl/augment.hpp"
#include "mcl/harness/checkpoint.hpp"
#include "mcl/harness/config.hpp"
#include "mcl/harness/dataset.hpp"
#include "mcl/harness/metrics.hpp"
#include "mcl/objective.hpp"
#include "mcl/optim.hpp"
#include "mcl/supervised.hpp"

namespace mcl {

/// Image ids of step `step`: a fresh permutation per epoch, consecutive
/// slices of B per step, the tail that does not fill a batch dropped.
inline std::vector<std::size_t> batch_ids(std::uint64_t seed, long step, long steps_per_epoch, std::size_t N,
                                          std::size_t B) {
    const long epoch = step / steps_per_epoch, k = step % steps_per_epoch;
    SeededRng rng(seed, derive_stream(seed, {0x65706f6368ULL, static_cast<std::uint64_t>(epoch)}));
    const auto perm = rng.permutation(N);
    const std::size_t first = static_cast<std::size_t>(k) * B;
    return {perm.begin() + static_cast<std::ptrdiff_t>(first), perm.begin() + static_cast<std::ptrdiff_t>(first + B)};
}

inline std::uint64_t aug_seed(std::uint64_t seed, long step) {
    return derive_stream(seed, {0x617567ULL, static_cast<std::uint64_t>(step)});
}

namespace state_detail {

template <class T, class Model>
void collect(Model& m, const std::string& prefix, const std::string& buf_prefix,
             std::vector<std::pair<std::string, Tensor<T>*>>& out) {
    m.visit([&](Parameter<T>& p) { out.emplace_back(prefix + p.name, &p.value); });
    m.visit_buffers([&](const std::string& n, Tensor<T>& t) { out.emplace_back(buf_prefix + n, &t); });
}

template <class T>
void to_checkpoint(const std::vector<std::pair<std::string, Tensor<T>*>>& state, CheckpointData& d) {
    for (const auto& [name, t] : state) d.tensors.emplace_back(name, t->template cast<float>());
}

template <class T>
void from_checkpoint(const std::vector<std::pair<std::string, Tensor<T>*>>& state, const CheckpointData& d) {
    for (const auto& [name, t] : state) {
        const Tensor<float>& src = d.get(name);
        if (src.shape() != t->shape())
            throw std::runtime_error("checkpoint: " + name + " has shape " + shape_str(src.shape()) + ", model expects " +
                                     shape_str(t->shape()));
        *t = src.template cast<T>();
    }
}

template <class T>
void optim_to_checkpoint(const std::vector<Parameter<T>*>& params, std::vector<Tensor<T>>& buffers, CheckpointData& d) {
    for (std::size_t i = 0; i < buffers.size(); ++i)
        d.tensors.emplace_back("optim/" + params[i]->name, buffers[i].template cast<float>());
}

template <class T>
void optim_from_checkpoint(const std::vector<Parameter<T>*>& params, std::vector<Tensor<T>>& buffers,
                           const CheckpointData& d) {
    buffers.clear();
    bool any = false;
    for (const auto& [n, t] : d.tensors) any = any || n.rfind("optim/", 0) == 0;
    if (!any) return;
    for (auto* p : params) buffers.push_back(d.get("optim/" + p->name).template cast<T>());
}

inline void check_hash(const CheckpointData& d, std::uint64_t expected, const std::string& what) {
    if (d.config_hash != expected)
        throw std::runtime_error(what + ": checkpoint config hash " + hex64(d.config_hash) + " does not match config " +
                                 hex64(expected));
}

}  // namespace state_detail

/// Per-step values from one training step.
struct StepResult {
    MetricsRow row;
    std::vector<double> level_weights;
    int levels = 0;
};

/// Self-supervised montage pre-training.
template <class T>
class SslTrainer {
public:
    SslTrainer(const TrainConfig& cfg, const LabeledImages& train)
        : cfg_(cfg), data_(&train), pair_(make_net(cfg)), lars_(cfg.optim) {
        cfg_.validate();
        if (train.size() < cfg_.batch_size)
            throw std::invalid_argument("pretrain: dataset has " + std::to_string(train.size()) +
                                        " images, fewer than one batch of " + std::to_string(cfg_.batch_size));
        spe_ = static_cast<long>(train.size() / cfg_.batch_size);
        if (cfg_.weight_rescale != 1.0) {
            // Applied once, at initialisation; the target starts as a copy.
            weight_rescale(pair_.online_parameters(), cfg_.weight_rescale);
            pair_.target = pair_.online;
        }
        levels_ = usable_levels(cfg_.batch_size, cfg_.net.input_h, cfg_.net.input_w, cfg_.net.pyramid_levels);
        if (levels_ < cfg_.net.pyramid_levels)
            throw std::invalid_argument("pretrain: batch_size " + std::to_string(cfg_.batch_size) + " supports " +
                                        std::to_string(levels_) + " montage levels, config asks for " +
                                        std::to_string(cfg_.net.pyramid_levels));
    }

    long steps_per_epoch() const { return spe_; }
    long total_steps() const { return spe_ * cfg_.optim.total_epochs; }
    long global_step() const { return step_; }
    bool done() const { return step_ >= total_steps(); }
    int levels() const { return levels_; }
    const TrainConfig& config() const { return cfg_; }
    NetworkPair<T>& pair() { return pair_; }

    /// One optimisation step.
    StepResult step() {
        if (done()) throw std::logic_error("pretrain: no steps left");
        const auto ids = batch_ids(cfg_.seed, step_, spe_, data_->size(), cfg_.batch_size);
        const Tensor<T> batch = data_->gather(ids).template cast<T>();
        const auto [x1, x2] = two_views(batch, cfg_.aug, aug_seed(cfg_.seed, step_));

        const double lr = lr_schedule(step_, spe_, cfg_.optim, cfg_.batch_size);
        const double m = momentum_schedule(step_, total_steps(), cfg_.ema_m0);

        Graph<T> g;
        ObjectiveOptions opt;
        opt.loss = cfg_.loss;
        opt.seed = cfg_.seed;
        opt.step = static_cast<std::uint64_t>(step_);
        if (cfg_.boundary_k > 0) opt.boundary_k = cfg_.boundary_k;
        auto res = mcl_objective(g, pair_, x1, x2, opt);
        const double loss = static_cast<double>(res.loss.total.value()[0]);
        if (!std::isfinite(loss))
            throw std::runtime_error("pretrain: non-finite loss at step " + std::to_string(step_) +
                                     "; parameters left at the last good step");

        pair_.zero_grad();
        g.backward(res.loss.total);
        lars_.step(pair_.online_parameters(), lr);
        ema_update(pair_, m);
        ++step_;

        StepResult r;
        r.levels = res.levels;
        r.row.step = step_;
        r.row.epoch = (step_ - 1) / spe_ + 1;
        r.row.lr = lr;
        r.row.ema_m = m;
        r.row.total_loss = loss;
        r.row.level_loss = res.loss.per_level;
        r.row.pos_cos = res.loss.pos_cos;
        r.row.neg_cos = res.loss.neg_cos;
        for (int s = 0; s < res.levels; ++s) r.level_weights.push_back(cfg_.loss.weight(s));
        return r;
    }

    CheckpointData state() {
        CheckpointData d;
        d.config_hash = config_hash(cfg_);
        d.global_step = step_;
        state_detail::to_checkpoint(named_state(), d);
        state_detail::optim_to_checkpoint(pair_.online_parameters(), lars_.buffers(), d);
        return d;
    }

    void restore(const CheckpointData& d) {
        state_detail::check_hash(d, config_hash(cfg_), "pretrain");
        if (d.global_step < 0 || d.global_step > total_steps())
            throw std::runtime_error("pretrain: checkpoint step " + std::to_string(d.global_step) + " outside the run");
        state_detail::from_checkpoint(named_state(), d);
        state_detail::optim_from_checkpoint(pair_.online_parameters(), lars_.buffers(), d);
        step_ = d.global_step;
    }

    void save(const std::string& path) { save_checkpoint(path, state()); }
    void load(const std::string& path) { restore(load_checkpoint(path)); }

private:
    static NetworkPair<T> make_net(const TrainConfig& c) {
        c.validate();
        return NetworkPair<T>(c.net, c.seed);
    }

    std::vector<std::pair<std::string, Tensor<T>*>> named_state() {
        std::vector<std::pair<std::string, Tensor<T>*>> s;
        state_detail::collect<T>(pair_.online, "online/", "online_buf/", s);
        state_detail::collect<T>(pair_.predictor, "predictor/", "predictor_buf/", s);
        state_detail::collect<T>(pair_.target, "target/", "target_buf/", s);
        return s;
    }

    TrainConfig cfg_;
    const LabeledImages* data_;
    NetworkPair<T> pair_;
    Lars<T> lars_;
    long spe_ = 0;
    long step_ = 0;
    int levels_ = 0;
};

/// Supervised montage training (one network, shared classifier, SGD).
template <class T>
class SupervisedTrainer {
public:
    SupervisedTrainer(const TrainConfig& cfg, const LabeledImages& train)
        : cfg_(cfg),
          data_(&train),
          net_(checked(cfg).net, train.classes, cfg.seed),
          sgd_(cfg.supervised_momentum, cfg.supervised_weight_decay) {
        if (train.size() < cfg_.batch_size) throw std::invalid_argument("supervised: dataset smaller than one batch");
        spe_ = static_cast<long>(train.size() / cfg_.batch_size);
        levels_ = usable_levels(cfg_.batch_size, cfg_.net.input_h, cfg_.net.input_w, cfg_.net.pyramid_levels);
        if (levels_ < cfg_.net.pyramid_levels)
            throw std::invalid_argument("supervised: batch_size does not support every montage level");
        sched_ = cfg_.optim;
        sched_.lr_scale = cfg_.supervised_lr * 256.0 / static_cast<double>(cfg_.batch_size);
    }

    long steps_per_epoch() const { return spe_; }
    long total_steps() const { return spe_ * cfg_.optim.total_epochs; }
    long global_step() const { return step_; }
    bool done() const { return step_ >= total_steps(); }
    int levels() const { return levels_; }
    SupervisedNet<T>& net() { return net_; }
    double lr(long step) const { return lr_schedule(step, spe_, sched_, cfg_.batch_size); }

    /// Augmented batch (view-0 policy) and labels for `step`.
    std::pair<Tensor<T>, std::vector<int>> batch(long step) const {
        const auto ids = batch_ids(cfg_.seed, step, spe_, data_->size(), cfg_.batch_size);
        const Tensor<T> raw = data_->gather(ids).template cast<T>();
        const std::size_t B = raw.dim(0), C = raw.dim(1);
        Tensor<T> x({B, C, cfg_.aug.out_h, cfg_.aug.out_w});
        const std::size_t per = C * cfg_.aug.out_h * cfg_.aug.out_w;
        for (std::size_t b = 0; b < B; ++b) {
            SeededRng rng = view_stream(aug_seed(cfg_.seed, step), b, 0);
            const Tensor<T> v =
                apply_pipeline(raw.slice(b, 1).reshaped({C, raw.dim(2), raw.dim(3)}), cfg_.aug, rng, 0);
            std::copy(v.data(), v.data() + per, x.data() + b * per);
        }
        return {std::move(x), data_->gather_labels(ids)};
    }

    /// One SGD step; returns the loss before the update.
    double step() {
        if (done()) throw std::logic_error("supervised: no steps left");
        auto [x, labels] = batch(step_);
        Graph<T> g;
        std::vector<Var<T>> logits;
        std::vector<std::vector<int>> targets;
        for (int s = 0; s < levels_; ++s) {
            SeededRng rng = montage_stream(cfg_.seed, static_cast<std::uint64_t>(step_), s, 0);
            const auto mb = assemble(x, s, rng);
            logits.push_back(level_logits(g, net_, mb, ForwardMode::train()));
            targets.push_back(assemble_targets(labels, mb));
        }
        Var<T> loss = multilevel_ce(logits, targets, supervised_level_weights(levels_, cfg_.supervised_uniform_weights));
        const double l = static_cast<double>(loss.value()[0]);
        if (!std::isfinite(l)) throw std::runtime_error("supervised: non-finite loss at step " + std::to_string(step_));
        for (auto* p : net_.parameters()) p->zero_grad();
        g.backward(loss);
        sgd_.step(net_.parameters(), lr(step_));
        ++step_;
        return l;
    }

    CheckpointData state() {
        CheckpointData d;
        d.config_hash = config_hash(cfg_);
        d.global_step = step_;
        state_detail::to_checkpoint(named_state(), d);
        state_detail::optim_to_checkpoint(net_.parameters(), sgd_.buffers(), d);
        return d;
    }

    void restore(const CheckpointData& d) {
        state_detail::check_hash(d, config_hash(cfg_), "supervised");
        state_detail::from_checkpoint(named_state(), d);
        state_detail::optim_from_checkpoint(net_.parameters(), sgd_.buffers(), d);
        step_ = d.global_step;
    }

private:
    static const TrainConfig& checked(const TrainConfig& c) {
        c.validate();
        return c;
    }

    std::vector<std::pair<std::string, Tensor<T>*>> named_state() {
        std::vector<std::pair<std::string, Tensor<T>*>> s;
        state_detail::collect<T>(net_, "supervised/", "supervised_buf/", s);
        return s;
    }

    TrainConfig cfg_;
    const LabeledImages* data_;
    SupervisedNet<T> net_;
    Sgd<T> sgd_;
    OptimConfig sched_;
    long spe_ = 0;
    long step_ = 0;
    int levels_ = 0;
};

struct RunOptions {
    std::string out_dir;                // metrics.csv and checkpoints go here
    std::optional<std::string> resume;  // checkpoint to continue from
    long stop_after = -1;               // stop at this global step (testing); -1 runs to the end
    bool quiet = false;
};

struct RunSummary {
    std::vector<MetricsRow> rows;
    std::vector<StepResult> step_results;  // every step of this invocation
    std::string final_checkpoint;
    long steps = 0;
};

/// Full pre-training run: metrics CSV, periodic and final checkpoints.
/// The latest checkpoint is only replaced after a step finishes cleanly, so a
/// non-finite loss leaves the last good one on disk.
template <class T>
RunSummary run_pretrain(SslTrainer<T>& tr, const RunOptions& ro, std::ostream* log = nullptr) {
    namespace fs = std::filesystem;
    fs::create_directories(ro.out_dir);
    const std::string csv = (fs::path(ro.out_dir) / "metrics.csv").string();
    const std::string latest = (fs::path(ro.out_dir) / "checkpoint.ckpt").string();
    if (ro.resume) tr.load(*ro.resume);
    MetricsWriter writer(csv, tr.levels(), ro.resume.has_value());
    MetricsAccumulator acc(tr.config().log_every);
    RunSummary sum;
    const auto t0 = std::chrono::steady_clock::now();
    const long k = tr.config().checkpoint_every;
    const long end = ro.stop_after >= 0 ? std::min(ro.stop_after, tr.total_steps()) : tr.total_steps();
    while (tr.global_step() < end) {
        StepResult r = tr.step();
        r.row.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        MetricsRow out;
        const bool epoch_end = tr.global_step() % tr.steps_per_epoch() == 0;
        if (acc.add(r.row, out) || (epoch_end && acc.flush(out))) {
            writer.write(out);
            sum.rows.push_back(out);
            if (log && !ro.quiet)
                *log << "step " << out.step << " epoch " << out.epoch << " loss " << out.total_loss << " pos "
                     << out.pos_cos << " neg " << out.neg_cos << "\n";
        }
        if (epoch_end && k > 0 && (tr.global_step() / tr.steps_per_epoch()) % k == 0) tr.save(latest);
        sum.step_results.push_back(std::move(r));
        ++sum.steps;
    }
    MetricsRow out;
    if (acc.flush(out)) {
        writer.write(out);
        sum.rows.push_back(out);
    }
    sum.final_checkpoint = (fs::path(ro.out_dir) / (tr.done() ? "final.ckpt" : "checkpoint.ckpt")).string();
    tr.save(sum.final_checkpoint);
    return sum;
}

/// Mean step loss of 1-based `epoch` among `results`.
inline double epoch_mean_loss(const std::vector<StepResult>& results, long epoch) {
    double s = 0;
    long n = 0;
    for (const auto& r : results)
        if (r.row.epoch == epoch) {
            s += r.row.total_loss;
            ++n;
        }
    if (n == 0) throw std::invalid_argument("epoch_mean_loss: no steps in epoch " + std::to_string(epoch));
    return s / static_cast<double>(n);
}

}  // namespace mcl
