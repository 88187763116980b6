#pragma once

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "mcl/autodiff.hpp"

namespace mcl {

struct OptimConfig {
    double lr_scale = 1.0;  // base_lr = lr_scale * batch_size / 256
    long warmup_epochs = 10;
    long total_epochs = 100;
    double weight_decay = 1e-5;
    double trust_coefficient = 1e-3;
    double momentum = 0.9;
    bool exclude_norm_and_bias = true;

    double base_lr(std::size_t batch_size) const { return lr_scale * static_cast<double>(batch_size) / 256.0; }

    void validate() const {
        if (warmup_epochs < 0 || warmup_epochs > total_epochs)
            throw std::invalid_argument("OptimConfig: need 0 <= warmup_epochs <= total_epochs");
        if (weight_decay < 0) throw std::invalid_argument("OptimConfig: weight_decay must be >= 0");
    }

    /// Biases and normalisation affine parameters skip decay and trust scaling.
    bool excluded(ParamKind k) const {
        return exclude_norm_and_bias && (k == ParamKind::Bias || is_normalization(k));
    }
};

/// Linear warmup to base_lr, then half-cosine to zero at the final step.
inline double lr_schedule(long step, long steps_per_epoch, const OptimConfig& cfg, std::size_t batch_size) {
    const double base = cfg.base_lr(batch_size);
    const long warmup = cfg.warmup_epochs * steps_per_epoch;
    const long total = cfg.total_epochs * steps_per_epoch;
    if (step < 0 || step > total) throw std::out_of_range("lr_schedule: step outside [0, total]");
    if (step < warmup) return base * static_cast<double>(step + 1) / static_cast<double>(warmup);
    if (total == warmup) return 0.0;
    const double progress = static_cast<double>(step - warmup) / static_cast<double>(total - warmup);
    return base * (std::cos(std::numbers::pi * progress) + 1.0) / 2.0;
}

/// cfg.trust_coefficient * |w| / |g| when both norms are positive, else 1.
template <class T>
double trust_ratio(const Tensor<T>& w, const Tensor<T>& g, double trust_coefficient) {
    double wn = 0, gn = 0;
    for (std::size_t i = 0; i < w.size(); ++i) {
        wn += static_cast<double>(w[i]) * static_cast<double>(w[i]);
        gn += static_cast<double>(g[i]) * static_cast<double>(g[i]);
    }
    wn = std::sqrt(wn);
    gn = std::sqrt(gn);
    return (wn > 0 && gn > 0) ? trust_coefficient * wn / gn : 1.0;
}

/// LARS with per-tensor trust ratios and heavy-ball momentum:
///   g <- grad + wd w;  v <- mu v + trust lr g;  w <- w - v
template <class T>
class Lars {
public:
    explicit Lars(OptimConfig cfg) : cfg_(std::move(cfg)) {}

    const OptimConfig& config() const { return cfg_; }
    std::vector<Tensor<T>>& buffers() { return buffers_; }

    void step(const std::vector<Parameter<T>*>& params, double lr) {
        for (const auto* p : params) {
            if (p->grad.empty()) throw std::runtime_error("lars_step: no gradient for " + p->name);
            if (!p->grad.all_finite()) throw std::runtime_error("lars_step: non-finite gradient in " + p->name);
        }
        if (buffers_.empty())
            for (const auto* p : params) buffers_.emplace_back(p->value.shape(), T(0));
        if (buffers_.size() != params.size()) throw std::logic_error("lars_step: parameter list changed");
        const T mu = static_cast<T>(cfg_.momentum);
        for (std::size_t i = 0; i < params.size(); ++i) {
            Parameter<T>& p = *params[i];
            const bool excluded = cfg_.excluded(p.kind);
            Tensor<T> g = p.grad;
            if (!excluded && cfg_.weight_decay > 0)
                for (std::size_t k = 0; k < g.size(); ++k) g[k] += static_cast<T>(cfg_.weight_decay) * p.value[k];
            const double trust = excluded ? 1.0 : trust_ratio(p.value, g, cfg_.trust_coefficient);
            const T scale = static_cast<T>(trust * lr);
            Tensor<T>& v = buffers_[i];
            for (std::size_t k = 0; k < g.size(); ++k) {
                v[k] = mu * v[k] + scale * g[k];
                p.value[k] -= v[k];
            }
        }
    }

private:
    OptimConfig cfg_;
    std::vector<Tensor<T>> buffers_;
};

/// Momentum SGD (v <- mu v + g + wd w; w <- w - lr v).
template <class T>
class Sgd {
public:
    Sgd(double momentum, double weight_decay) : momentum_(momentum), weight_decay_(weight_decay) {}

    std::vector<Tensor<T>>& buffers() { return buffers_; }

    void step(const std::vector<Parameter<T>*>& params, double lr) {
        for (const auto* p : params)
            if (p->grad.empty() || !p->grad.all_finite())
                throw std::runtime_error("sgd_step: missing or non-finite gradient in " + p->name);
        if (buffers_.empty())
            for (const auto* p : params) buffers_.emplace_back(p->value.shape(), T(0));
        const T mu = static_cast<T>(momentum_), wd = static_cast<T>(weight_decay_), l = static_cast<T>(lr);
        for (std::size_t i = 0; i < params.size(); ++i) {
            Parameter<T>& p = *params[i];
            Tensor<T>& v = buffers_[i];
            for (std::size_t k = 0; k < v.size(); ++k) {
                v[k] = mu * v[k] + p.grad[k] + wd * p.value[k];
                p.value[k] -= l * v[k];
            }
        }
    }

private:
    double momentum_;
    double weight_decay_;
    std::vector<Tensor<T>> buffers_;
};

/// Divides every conv/linear weight and bias by alpha; normalisation
/// parameters are left alone.
template <class T>
void weight_rescale(const std::vector<Parameter<T>*>& params, double alpha) {
    if (!(alpha > 0)) throw std::invalid_argument("weight_rescale: alpha must be > 0");
    if (alpha == 1.0) return;
    for (auto* p : params) {
        if (is_normalization(p->kind)) continue;
        for (T& v : p->value.values()) v = static_cast<T>(static_cast<double>(v) / alpha);
    }
}

/// Named ablation grids.
inline std::vector<double> wd_sweep_values() { return {1.5e-6, 5e-6, 1e-5}; }
inline std::vector<double> rescale_sweep_values() { return {1.5, 2.0}; }

}  // namespace mcl
