#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "mcl/autodiff.hpp"

namespace mcl {

template <class T>
struct GradCheckResult {
    T max_rel_error = 0;
    std::string worst_param;
    std::size_t worst_index = 0;
    T analytic = 0;
    T numeric = 0;
    std::size_t checked = 0;
};

template <class T>
T relative_error(T a, T b) {
    const T denom = std::max({std::abs(a), std::abs(b), T(1e-8)});
    return std::abs(a - b) / denom;
}

/// Central-difference check of reverse-mode gradients. `build` must rebuild
/// the same scalar from the current parameter values on the graph it is
/// given; it may be called with grad mode disabled.
template <class T>
GradCheckResult<T> finite_diff_check(const std::function<Var<T>(Graph<T>&)>& build,
                                     const std::vector<Parameter<T>*>& params, T eps) {
    for (auto* p : params) p->grad = Tensor<T>(p->value.shape(), T(0));
    {
        Graph<T> g;
        g.backward(build(g));
    }
    auto eval = [&]() {
        Graph<T> g(GradMode::Disabled);
        return build(g).value()[0];
    };
    GradCheckResult<T> r;
    for (auto* p : params) {
        for (std::size_t i = 0; i < p->value.size(); ++i) {
            const T orig = p->value[i];
            p->value[i] = orig + eps;
            const T fp = eval();
            p->value[i] = orig - eps;
            const T fm = eval();
            p->value[i] = orig;
            const T numeric = (fp - fm) / (T(2) * eps);
            const T analytic = p->grad[i];
            const T err = relative_error(analytic, numeric);
            if (r.checked++ == 0 || err > r.max_rel_error) {
                r.max_rel_error = err;
                r.worst_param = p->name;
                r.worst_index = i;
                r.analytic = analytic;
                r.numeric = numeric;
            }
        }
    }
    return r;
}

/// Plain-function form: compares `grad` (analytic, at `point`) with central
/// differences of `f`.
template <class T>
T finite_diff_check(const std::function<T(const std::vector<T>&)>& f, const std::vector<T>& grad,
                    std::vector<T> point, T eps) {
    T worst = 0;
    for (std::size_t i = 0; i < point.size(); ++i) {
        const T orig = point[i];
        point[i] = orig + eps;
        const T fp = f(point);
        point[i] = orig - eps;
        const T fm = f(point);
        point[i] = orig;
        worst = std::max(worst, relative_error(grad[i], (fp - fm) / (T(2) * eps)));
    }
    return worst;
}

}  // namespace mcl
