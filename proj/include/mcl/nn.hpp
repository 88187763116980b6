#pragma once

#include <cmath>
#include <string>

#include "mcl/autodiff.hpp"
#include "mcl/ops.hpp"
#include "mcl/rng.hpp"

namespace mcl {

/// How normalisation layers behave during one forward pass.
struct ForwardMode {
    BnMode bn = BnMode::Train;
    bool update_running = true;

    static ForwardMode train() { return {BnMode::Train, true}; }
    /// Batch statistics without touching running statistics (target branch).
    static ForwardMode train_frozen_stats() { return {BnMode::Train, false}; }
    static ForwardMode eval() { return {BnMode::Eval, false}; }
};

namespace init {

template <class T>
Tensor<T> kaiming_normal(Shape shape, std::size_t fan_in, SeededRng& rng) {
    Tensor<T> t(std::move(shape));
    const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (T& v : t.values()) v = static_cast<T>(rng.normal() * stddev);
    return t;
}

template <class T>
Tensor<T> uniform_fan_in(Shape shape, std::size_t fan_in, SeededRng& rng) {
    Tensor<T> t(std::move(shape));
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (T& v : t.values()) v = static_cast<T>(rng.uniform(-bound, bound));
    return t;
}

}  // namespace init

template <class T>
struct Conv2d {
    Parameter<T> weight;
    Parameter<T> bias;
    bool has_bias = false;
    int stride = 1;
    int pad = 0;

    Conv2d() = default;
    Conv2d(const std::string& name, std::size_t in, std::size_t out, std::size_t k, int stride_, int pad_,
           bool with_bias, SeededRng& rng)
        : has_bias(with_bias), stride(stride_), pad(pad_) {
        weight = {name + ".weight", ParamKind::ConvWeight, init::kaiming_normal<T>({out, in, k, k}, in * k * k, rng), {}};
        if (has_bias) bias = {name + ".bias", ParamKind::Bias, Tensor<T>({out}, T(0)), {}};
    }

    Var<T> operator()(Graph<T>& g, Var<T> x) {
        return conv2d(x, g.param(weight), has_bias ? g.param(bias) : Var<T>{}, stride, pad);
    }

    template <class F>
    void visit(F&& f) {
        f(weight);
        if (has_bias) f(bias);
    }
};

template <class T>
struct BatchNorm {
    Parameter<T> gamma;
    Parameter<T> beta;
    BatchNormState<T> state;
    std::string name;
    T eps = T(1e-5);

    BatchNorm() = default;
    BatchNorm(const std::string& name_, std::size_t channels) : name(name_) {
        gamma = {name + ".gamma", ParamKind::NormScale, Tensor<T>({channels}, T(1)), {}};
        beta = {name + ".beta", ParamKind::NormShift, Tensor<T>({channels}, T(0)), {}};
        state.running_mean = Tensor<T>({channels}, T(0));
        state.running_var = Tensor<T>({channels}, T(1));
    }

    Var<T> operator()(Graph<T>& g, Var<T> x, ForwardMode mode) {
        return batch_norm(x, g.param(gamma), g.param(beta), &state, mode.bn, eps, mode.update_running);
    }

    template <class F>
    void visit(F&& f) {
        f(gamma);
        f(beta);
    }

    /// f(name, tensor) over running statistics.
    template <class F>
    void visit_buffers(F&& f) {
        f(name + ".running_mean", state.running_mean);
        f(name + ".running_var", state.running_var);
    }
};

template <class T>
struct Linear {
    Parameter<T> weight;
    Parameter<T> bias;

    bool has_bias = true;

    Linear() = default;
    Linear(const std::string& name, std::size_t in, std::size_t out, SeededRng& rng, bool with_bias = true)
        : has_bias(with_bias) {
        weight = {name + ".weight", ParamKind::LinearWeight, init::uniform_fan_in<T>({out, in}, in, rng), {}};
        if (has_bias) bias = {name + ".bias", ParamKind::Bias, Tensor<T>({out}, T(0)), {}};
    }

    Var<T> operator()(Graph<T>& g, Var<T> x) { return linear(x, g.param(weight), has_bias ? g.param(bias) : Var<T>{}); }

    template <class F>
    void visit(F&& f) {
        f(weight);
        if (has_bias) f(bias);
    }
};

/// linear -> BN -> relu -> linear [-> BN]. A linear feeding BN has no bias
/// (BN removes it anyway).
template <class T>
struct Mlp {
    Linear<T> fc1;
    BatchNorm<T> bn1;
    Linear<T> fc2;
    BatchNorm<T> bn_out;
    bool final_bn = false;

    Mlp() = default;
    Mlp(const std::string& name, std::size_t in, std::size_t hidden, std::size_t out, bool with_final_bn, SeededRng& rng)
        : fc1(name + ".fc1", in, hidden, rng, false),
          bn1(name + ".bn1", hidden),
          fc2(name + ".fc2", hidden, out, rng, !with_final_bn),
          final_bn(with_final_bn) {
        if (final_bn) bn_out = BatchNorm<T>(name + ".bn_out", out);
    }

    Var<T> operator()(Graph<T>& g, Var<T> x, ForwardMode mode) {
        Var<T> h = relu(bn1(g, fc1(g, x), mode));
        Var<T> y = fc2(g, h);
        return final_bn ? bn_out(g, y, mode) : y;
    }

    template <class F>
    void visit(F&& f) {
        fc1.visit(f);
        bn1.visit(f);
        fc2.visit(f);
        if (final_bn) bn_out.visit(f);
    }

    template <class F>
    void visit_buffers(F&& f) {
        bn1.visit_buffers(f);
        if (final_bn) bn_out.visit_buffers(f);
    }
};

}  // namespace mcl
