#pragma once

#include <functional>
#include <string>
#include <vector>

#include "mcl/autodiff.hpp"
#include "mcl/gradcheck.hpp"
#include "mcl/rng.hpp"

namespace mcl::testing {

template <class T = double>
Tensor<T> random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    SeededRng rng(seed, 17);
    Tensor<T> t(std::move(shape));
    for (T& v : t.values()) v = static_cast<T>(rng.uniform(lo, hi));
    return t;
}

template <class T = double>
Parameter<T> make_param(const std::string& name, Tensor<T> value, ParamKind kind = ParamKind::ConvWeight) {
    return Parameter<T>{name, kind, std::move(value), {}};
}

/// sum(out * R) for a fixed random R, so every output element carries a
/// distinct upstream gradient.
template <class T>
Var<T> random_projection(Var<T> out, std::uint64_t seed) {
    Graph<T>& g = *out.graph;
    return sum(mul(out, g.constant(random_tensor<T>(out.shape(), seed))));
}

}  // namespace mcl::testing
