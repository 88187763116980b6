#pragma once

// Differentiable primitives over Graph/Var. Plain-tensor kernels (im2col,
// resize, ...) are exposed too so data-side code shares the same conventions.

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "mcl/autodiff.hpp"
#include "mcl/tensor.hpp"

namespace mcl {

namespace detail {

template <class T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapR = Eigen::Map<MatR<T>>;
template <class T>
using CMapR = Eigen::Map<const MatR<T>>;

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

inline std::ptrdiff_t sz(std::size_t v) { return static_cast<std::ptrdiff_t>(v); }

}  // namespace detail

// ---------------------------------------------------------------------------
// Convolution

struct ConvGeometry {
    std::size_t batch, in_channels, height, width;
    std::size_t out_channels, kernel_h, kernel_w;
    std::size_t out_h, out_w;
    int stride, pad;

    std::size_t patch() const { return in_channels * kernel_h * kernel_w; }
    std::size_t columns() const { return batch * out_h * out_w; }
};

inline ConvGeometry conv_geometry(const Shape& x, const Shape& w, int stride, int pad) {
    using detail::require;
    require(x.size() == 4, "conv2d: input must be [B,Cin,H,W], got " + shape_str(x));
    require(w.size() == 4, "conv2d: weight must be [Cout,Cin,kh,kw], got " + shape_str(w));
    require(x[1] == w[1], "conv2d: input has Cin=" + std::to_string(x[1]) + " but weight expects Cin=" +
                              std::to_string(w[1]));
    require(stride >= 1, "conv2d: stride must be >= 1");
    require(pad >= 0, "conv2d: pad must be >= 0");
    const std::size_t ph = x[2] + 2 * static_cast<std::size_t>(pad);
    const std::size_t pw = x[3] + 2 * static_cast<std::size_t>(pad);
    require(w[2] <= ph && w[3] <= pw, "conv2d: kernel " + shape_str(w) + " larger than padded input " +
                                          shape_str(x));
    ConvGeometry g{x[0], x[1], x[2], x[3], w[0], w[2], w[3], 0, 0, stride, pad};
    g.out_h = (ph - g.kernel_h) / static_cast<std::size_t>(stride) + 1;
    g.out_w = (pw - g.kernel_w) / static_cast<std::size_t>(stride) + 1;
    return g;
}

/// col[(c*kh + i)*kw + j][n*Ho*Wo + oy*Wo + ox] = x[n, c, oy*s - p + i, ox*s - p + j]
template <class T>
void im2col(const T* x, const ConvGeometry& g, T* col) {
    const std::size_t P = g.columns();
    const std::size_t hw_out = g.out_h * g.out_w;
    for (std::size_t c = 0; c < g.in_channels; ++c) {
        for (std::size_t i = 0; i < g.kernel_h; ++i) {
            for (std::size_t j = 0; j < g.kernel_w; ++j) {
                T* dst = col + ((c * g.kernel_h + i) * g.kernel_w + j) * P;
                for (std::size_t n = 0; n < g.batch; ++n) {
                    const T* src = x + (n * g.in_channels + c) * g.height * g.width;
                    for (std::size_t oy = 0; oy < g.out_h; ++oy) {
                        T* d = dst + n * hw_out + oy * g.out_w;
                        const std::ptrdiff_t iy = detail::sz(oy) * g.stride - g.pad + detail::sz(i);
                        if (iy < 0 || iy >= detail::sz(g.height)) {
                            std::fill(d, d + g.out_w, T(0));
                            continue;
                        }
                        const T* row = src + iy * detail::sz(g.width);
                        for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                            const std::ptrdiff_t ix = detail::sz(ox) * g.stride - g.pad + detail::sz(j);
                            d[ox] = (ix >= 0 && ix < detail::sz(g.width)) ? row[ix] : T(0);
                        }
                    }
                }
            }
        }
    }
}

template <class T>
void col2im_add(const T* col, const ConvGeometry& g, T* dx) {
    const std::size_t P = g.columns();
    const std::size_t hw_out = g.out_h * g.out_w;
    for (std::size_t c = 0; c < g.in_channels; ++c) {
        for (std::size_t i = 0; i < g.kernel_h; ++i) {
            for (std::size_t j = 0; j < g.kernel_w; ++j) {
                const T* src = col + ((c * g.kernel_h + i) * g.kernel_w + j) * P;
                for (std::size_t n = 0; n < g.batch; ++n) {
                    T* dst = dx + (n * g.in_channels + c) * g.height * g.width;
                    for (std::size_t oy = 0; oy < g.out_h; ++oy) {
                        const std::ptrdiff_t iy = detail::sz(oy) * g.stride - g.pad + detail::sz(i);
                        if (iy < 0 || iy >= detail::sz(g.height)) continue;
                        const T* s = src + n * hw_out + oy * g.out_w;
                        T* row = dst + iy * detail::sz(g.width);
                        for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                            const std::ptrdiff_t ix = detail::sz(ox) * g.stride - g.pad + detail::sz(j);
                            if (ix >= 0 && ix < detail::sz(g.width)) row[ix] += s[ox];
                        }
                    }
                }
            }
        }
    }
}

/// 2-D cross-correlation, output [B, Cout, H', W'] with H' = (H + 2*pad - kh)/stride + 1.
/// `b` may be an invalid Var for a bias-free convolution.
template <class T>
Var<T> conv2d(Var<T> x, Var<T> w, Var<T> b, int stride, int pad) {
    using namespace detail;
    Graph<T>& graph = *x.graph;
    const Tensor<T>& xv = x.value();
    const Tensor<T>& wv = w.value();
    const ConvGeometry g = conv_geometry(xv.shape(), wv.shape(), stride, pad);
    if (b.valid()) require(b.value().shape() == Shape{g.out_channels}, "conv2d: bias must be [Cout]");

    const std::size_t K = g.patch(), P = g.columns(), hw = g.out_h * g.out_w;
    auto col = std::make_shared<std::vector<T>>(K * P);
    im2col(xv.data(), g, col->data());
    MatR<T> out_mat(sz(g.out_channels), sz(P));
    out_mat.noalias() = CMapR<T>(wv.data(), sz(g.out_channels), sz(K)) * CMapR<T>(col->data(), sz(K), sz(P));

    Tensor<T> out({g.batch, g.out_channels, g.out_h, g.out_w});
    for (std::size_t n = 0; n < g.batch; ++n) {
        for (std::size_t co = 0; co < g.out_channels; ++co) {
            const T bias = b.valid() ? b.value()[co] : T(0);
            const T* src = out_mat.data() + co * P + n * hw;
            T* dst = out.data() + (n * g.out_channels + co) * hw;
            for (std::size_t k = 0; k < hw; ++k) dst[k] = src[k] + bias;
        }
    }

    std::vector<int> inputs{x.id, w.id};
    if (b.valid()) inputs.push_back(b.id);
    const int xid = x.id, wid = w.id, bid = b.valid() ? b.id : -1;
    return graph.record("conv2d", std::move(out), std::move(inputs),
                        [g, col, xid, wid, bid](Graph<T>& gr, const Tensor<T>& go) {
                            const std::size_t K = g.patch(), P = g.columns(), hw = g.out_h * g.out_w;
                            MatR<T> gm(sz(g.out_channels), sz(P));
                            for (std::size_t n = 0; n < g.batch; ++n)
                                for (std::size_t co = 0; co < g.out_channels; ++co) {
                                    const T* src = go.data() + (n * g.out_channels + co) * hw;
                                    std::copy(src, src + hw, gm.data() + co * P + n * hw);
                                }
                            if (T* dw = gr.grad_buffer(wid)) {
                                MapR<T>(dw, sz(g.out_channels), sz(K)).noalias() +=
                                    gm * CMapR<T>(col->data(), sz(K), sz(P)).transpose();
                            }
                            if (bid >= 0) {
                                if (T* db = gr.grad_buffer(bid)) {
                                    for (std::size_t co = 0; co < g.out_channels; ++co) {
                                        T s = 0;
                                        const T* r = gm.data() + co * P;
                                        for (std::size_t k = 0; k < P; ++k) s += r[k];
                                        db[co] += s;
                                    }
                                }
                            }
                            if (T* dx = gr.grad_buffer(xid)) {
                                const Tensor<T>& wv = gr.value(wid);
                                MatR<T> dcol(sz(K), sz(P));
                                dcol.noalias() = CMapR<T>(wv.data(), sz(g.out_channels), sz(K)).transpose() * gm;
                                col2im_add(dcol.data(), g, dx);
                            }
                        });
}

// ---------------------------------------------------------------------------
// Batch normalisation

enum class BnMode { Train, Eval };

/// Running statistics. Empty tensors mean "never initialised".
template <class T>
struct BatchNormState {
    Tensor<T> running_mean;
    Tensor<T> running_var;
    T momentum = T(0.1);

    bool initialized() const { return !running_mean.empty() && !running_var.empty(); }
};

/// Per-channel normalisation of x [N, C, ...] over every axis but C.
/// Train mode uses the biased batch variance and, when `update_running` is
/// set, folds the batch statistics into `state` (unbiased variance, EMA).
template <class T>
Var<T> batch_norm(Var<T> x, Var<T> gamma, Var<T> beta, BatchNormState<T>* state, BnMode mode, T eps,
                  bool update_running = true) {
    using detail::require;
    const Tensor<T>& xv = x.value();
    require(xv.rank() >= 2, "batch_norm: input must be [N,C,...]");
    const std::size_t N = xv.dim(0), C = xv.dim(1), L = xv.size() / (N * C);
    const std::size_t M = N * L;
    require(gamma.value().size() == C && beta.value().size() == C, "batch_norm: gamma/beta must be [C]");

    auto xhat = std::make_shared<std::vector<T>>(xv.size());
    auto inv_std = std::make_shared<std::vector<T>>(C);
    if (mode == BnMode::Train) {
        require(M >= 2, "batch_norm: train mode needs at least 2 values per channel, got " + std::to_string(M));
        std::vector<T> mean(C), var(C);
        for (std::size_t c = 0; c < C; ++c) {
            T s = 0;
            for (std::size_t n = 0; n < N; ++n) {
                const T* p = xv.data() + (n * C + c) * L;
                for (std::size_t k = 0; k < L; ++k) s += p[k];
            }
            mean[c] = s / static_cast<T>(M);
            T v = 0;
            for (std::size_t n = 0; n < N; ++n) {
                const T* p = xv.data() + (n * C + c) * L;
                for (std::size_t k = 0; k < L; ++k) v += (p[k] - mean[c]) * (p[k] - mean[c]);
            }
            var[c] = v / static_cast<T>(M);
            (*inv_std)[c] = T(1) / std::sqrt(var[c] + eps);
        }
        if (state && update_running) {
            if (!state->initialized()) {
                state->running_mean = Tensor<T>({C}, T(0));
                state->running_var = Tensor<T>({C}, T(1));
            }
            const T m = state->momentum;
            const T unbias = static_cast<T>(M) / static_cast<T>(M - 1);
            for (std::size_t c = 0; c < C; ++c) {
                state->running_mean[c] = (T(1) - m) * state->running_mean[c] + m * mean[c];
                state->running_var[c] = (T(1) - m) * state->running_var[c] + m * var[c] * unbias;
            }
        }
        for (std::size_t n = 0; n < N; ++n)
            for (std::size_t c = 0; c < C; ++c) {
                const std::size_t off = (n * C + c) * L;
                for (std::size_t k = 0; k < L; ++k) (*xhat)[off + k] = (xv[off + k] - mean[c]) * (*inv_std)[c];
            }
    } else {
        if (!state || !state->initialized()) {
            throw std::invalid_argument("batch_norm: eval mode requires initialised running statistics");
        }
        require(state->running_mean.size() == C, "batch_norm: running stats channel mismatch");
        for (std::size_t c = 0; c < C; ++c) (*inv_std)[c] = T(1) / std::sqrt(state->running_var[c] + eps);
        for (std::size_t n = 0; n < N; ++n)
            for (std::size_t c = 0; c < C; ++c) {
                const std::size_t off = (n * C + c) * L;
                for (std::size_t k = 0; k < L; ++k)
                    (*xhat)[off + k] = (xv[off + k] - state->running_mean[c]) * (*inv_std)[c];
            }
    }

    Tensor<T> out(xv.shape());
    const Tensor<T>& gv = gamma.value();
    const Tensor<T>& bv = beta.value();
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c) {
            const std::size_t off = (n * C + c) * L;
            for (std::size_t k = 0; k < L; ++k) out[off + k] = gv[c] * (*xhat)[off + k] + bv[c];
        }

    const int xid = x.id, gid = gamma.id, bid = beta.id;
    const bool train = mode == BnMode::Train;
    return x.graph->record(
        "batch_norm", std::move(out), {xid, gid, bid},
        [=](Graph<T>& gr, const Tensor<T>& go) {
            const Tensor<T>& gv = gr.value(gid);
            std::vector<T> sum_g(C, T(0)), sum_gx(C, T(0));
            for (std::size_t n = 0; n < N; ++n)
                for (std::size_t c = 0; c < C; ++c) {
                    const std::size_t off = (n * C + c) * L;
                    for (std::size_t k = 0; k < L; ++k) {
                        sum_g[c] += go[off + k];
                        sum_gx[c] += go[off + k] * (*xhat)[off + k];
                    }
                }
            if (T* dg = gr.grad_buffer(gid))
                for (std::size_t c = 0; c < C; ++c) dg[c] += sum_gx[c];
            if (T* db = gr.grad_buffer(bid))
                for (std::size_t c = 0; c < C; ++c) db[c] += sum_g[c];
            if (T* dx = gr.grad_buffer(xid)) {
                const T Mf = static_cast<T>(M);
                for (std::size_t n = 0; n < N; ++n)
                    for (std::size_t c = 0; c < C; ++c) {
                        const std::size_t off = (n * C + c) * L;
                        const T k1 = gv[c] * (*inv_std)[c];
                        for (std::size_t k = 0; k < L; ++k) {
                            if (train) {
                                dx[off + k] +=
                                    k1 * (go[off + k] - sum_g[c] / Mf - (*xhat)[off + k] * sum_gx[c] / Mf);
                            } else {
                                dx[off + k] += k1 * go[off + k];
                            }
                        }
                    }
            }
        });
}

// ---------------------------------------------------------------------------
// Elementwise and reductions

template <class T>
Var<T> relu(Var<T> x) {
    Tensor<T> out(x.value().shape());
    const Tensor<T>& xv = x.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] > T(0) ? xv[i] : T(0);
    const int xid = x.id;
    return x.graph->record("relu", std::move(out), {xid}, [xid](Graph<T>& g, const Tensor<T>& go) {
        T* dx = g.grad_buffer(xid);
        const Tensor<T>& xv = g.value(xid);
        for (std::size_t i = 0; i < go.size(); ++i)
            if (xv[i] > T(0)) dx[i] += go[i];
    });
}

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
    detail::require(a.shape() == b.shape(), "add: shape mismatch " + shape_str(a.shape()) + " vs " +
                                                shape_str(b.shape()));
    Tensor<T> out(a.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
    const int aid = a.id, bid = b.id;
    return a.graph->record("add", std::move(out), {aid, bid}, [aid, bid](Graph<T>& g, const Tensor<T>& go) {
        g.accumulate(aid, go);
        g.accumulate(bid, go);
    });
}

template <class T>
Var<T> mul(Var<T> a, Var<T> b) {
    detail::require(a.shape() == b.shape(), "mul: shape mismatch");
    Tensor<T> out(a.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
    const int aid = a.id, bid = b.id;
    return a.graph->record("mul", std::move(out), {aid, bid}, [aid, bid](Graph<T>& g, const Tensor<T>& go) {
        const Tensor<T>& av = g.value(aid);
        const Tensor<T>& bv = g.value(bid);
        if (T* da = g.grad_buffer(aid))
            for (std::size_t i = 0; i < go.size(); ++i) da[i] += go[i] * bv[i];
        if (T* db = g.grad_buffer(bid))
            for (std::size_t i = 0; i < go.size(); ++i) db[i] += go[i] * av[i];
    });
}

template <class T>
Var<T> scale(Var<T> x, T factor) {
    Tensor<T> out(x.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.value()[i] * factor;
    const int xid = x.id;
    return x.graph->record("scale", std::move(out), {xid}, [xid, factor](Graph<T>& g, const Tensor<T>& go) {
        T* dx = g.grad_buffer(xid);
        for (std::size_t i = 0; i < go.size(); ++i) dx[i] += go[i] * factor;
    });
}

template <class T>
Var<T> exp(Var<T> x) {
    Tensor<T> out(x.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(x.value()[i]);
    const int xid = x.id;
    auto saved = std::make_shared<Tensor<T>>(out);
    return x.graph->record("exp", std::move(out), {xid}, [xid, saved](Graph<T>& g, const Tensor<T>& go) {
        T* dx = g.grad_buffer(xid);
        for (std::size_t i = 0; i < go.size(); ++i) dx[i] += go[i] * (*saved)[i];
    });
}

template <class T>
Var<T> log(Var<T> x) {
    Tensor<T> out(x.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(x.value()[i]);
    const int xid = x.id;
    return x.graph->record("log", std::move(out), {xid}, [xid](Graph<T>& g, const Tensor<T>& go) {
        T* dx = g.grad_buffer(xid);
        const Tensor<T>& xv = g.value(xid);
        for (std::size_t i = 0; i < go.size(); ++i) dx[i] += go[i] / xv[i];
    });
}

template <class T>
Var<T> sum(Var<T> x) {
    Tensor<T> out({1}, sum_of(x.value()));
    const int xid = x.id;
    return x.graph->record("sum", std::move(out), {xid}, [xid](Graph<T>& g, const Tensor<T>& go) {
        T* dx = g.grad_buffer(xid);
        const std::size_t n = g.value(xid).size();
        for (std::size_t i = 0; i < n; ++i) dx[i] += go[0];
    });
}

template <class T>
Var<T> mean(Var<T> x) {
    const std::size_t n = x.value().size();
    detail::require(n > 0, "mean: empty tensor");
    return scale(sum(x), T(1) / static_cast<T>(n));
}

template <class T>
Var<T> reshape(Var<T> x, Shape shape) {
    Tensor<T> out = x.value().reshaped(std::move(shape));
    const int xid = x.id;
    return x.graph->record("reshape", std::move(out), {xid}, [xid](Graph<T>& g, const Tensor<T>& go) {
        T* dx = g.grad_buffer(xid);
        for (std::size_t i = 0; i < go.size(); ++i) dx[i] += go[i];
    });
}

/// sum_i weights[i] * terms[i] over scalar terms.
template <class T>
Var<T> weighted_sum(const std::vector<Var<T>>& terms, const std::vector<T>& weights) {
    detail::require(!terms.empty() && terms.size() == weights.size(), "weighted_sum: size mismatch");
    T total = 0;
    std::vector<int> ids;
    for (std::size_t i = 0; i < terms.size(); ++i) {
        detail::require(terms[i].value().size() == 1, "weighted_sum: terms must be scalar");
        total += weights[i] * terms[i].value()[0];
        ids.push_back(terms[i].id);
    }
    return terms[0].graph->record("weighted_sum", Tensor<T>({1}, total), ids,
                                  [ids, weights](Graph<T>& g, const Tensor<T>& go) {
                                      for (std::size_t i = 0; i < ids.size(); ++i)
                                          if (T* d = g.grad_buffer(ids[i])) d[0] += weights[i] * go[0];
                                  });
}

// ---------------------------------------------------------------------------
// Dense layers

/// [M,K] x [K,N], or [M,K] x [N,K]^T when transpose_b.
template <class T>
Var<T> matmul(Var<T> a, Var<T> b, bool transpose_b = false) {
    using namespace detail;
    const Shape& as = a.shape();
    const Shape& bs = b.shape();
    require(as.size() == 2 && bs.size() == 2, "matmul: operands must be 2-D");
    const std::size_t M = as[0], K = as[1];
    const std::size_t N = transpose_b ? bs[0] : bs[1];
    require((transpose_b ? bs[1] : bs[0]) == K, "matmul: inner dimension mismatch " + shape_str(as) + " x " +
                                                    shape_str(bs));
    Tensor<T> out({M, N});
    CMapR<T> A(a.value().data(), sz(M), sz(K));
    MapR<T> O(out.data(), sz(M), sz(N));
    if (transpose_b)
        O.noalias() = A * CMapR<T>(b.value().data(), sz(N), sz(K)).transpose();
    else
        O.noalias() = A * CMapR<T>(b.value().data(), sz(K), sz(N));
    const int aid = a.id, bid = b.id;
    return a.graph->record("matmul", std::move(out), {aid, bid},
                           [=](Graph<T>& g, const Tensor<T>& go) {
                               CMapR<T> G(go.data(), sz(M), sz(N));
                               if (T* da = g.grad_buffer(aid)) {
                                   if (transpose_b)
                                       MapR<T>(da, sz(M), sz(K)).noalias() +=
                                           G * CMapR<T>(g.value(bid).data(), sz(N), sz(K));
                                   else
                                       MapR<T>(da, sz(M), sz(K)).noalias() +=
                                           G * CMapR<T>(g.value(bid).data(), sz(K), sz(N)).transpose();
                               }
                               if (T* db = g.grad_buffer(bid)) {
                                   CMapR<T> A(g.value(aid).data(), sz(M), sz(K));
                                   if (transpose_b)
                                       MapR<T>(db, sz(N), sz(K)).noalias() += G.transpose() * A;
                                   else
                                       MapR<T>(db, sz(K), sz(N)).noalias() += A.transpose() * G;
                               }
                           });
}

/// x [N,in] -> x W^T + b with W [out,in], b [out] (b optional).
template <class T>
Var<T> linear(Var<T> x, Var<T> w, Var<T> b) {
    using namespace detail;
    require(x.shape().size() == 2 && w.shape().size() == 2, "linear: x and W must be 2-D");
    const std::size_t N = x.shape()[0], In = x.shape()[1], Out = w.shape()[0];
    require(w.shape()[1] == In, "linear: weight expects " + std::to_string(w.shape()[1]) + " inputs, got " +
                                    std::to_string(In));
    if (b.valid()) require(b.value().size() == Out, "linear: bias must be [out]");
    Tensor<T> out({N, Out});
    MapR<T> O(out.data(), sz(N), sz(Out));
    O.noalias() = CMapR<T>(x.value().data(), sz(N), sz(In)) * CMapR<T>(w.value().data(), sz(Out), sz(In)).transpose();
    if (b.valid())
        for (std::size_t n = 0; n < N; ++n)
            for (std::size_t o = 0; o < Out; ++o) out.at(n, o) += b.value()[o];
    std::vector<int> inputs{x.id, w.id};
    if (b.valid()) inputs.push_back(b.id);
    const int xid = x.id, wid = w.id, bid = b.valid() ? b.id : -1;
    return x.graph->record("linear", std::move(out), std::move(inputs), [=](Graph<T>& g, const Tensor<T>& go) {
        CMapR<T> G(go.data(), sz(N), sz(Out));
        if (T* dx = g.grad_buffer(xid))
            MapR<T>(dx, sz(N), sz(In)).noalias() += G * CMapR<T>(g.value(wid).data(), sz(Out), sz(In));
        if (T* dw = g.grad_buffer(wid))
            MapR<T>(dw, sz(Out), sz(In)).noalias() += G.transpose() * CMapR<T>(g.value(xid).data(), sz(N), sz(In));
        if (bid >= 0)
            if (T* db = g.grad_buffer(bid))
                for (std::size_t n = 0; n < N; ++n)
                    for (std::size_t o = 0; o < Out; ++o) db[o] += go[n * Out + o];
    });
}

/// Mean over rows of -log softmax(logits)[label]; log-sum-exp stabilised.
template <class T>
Var<T> softmax_cross_entropy(Var<T> logits, const std::vector<int>& labels) {
    const Shape& s = logits.shape();
    detail::require(s.size() == 2, "softmax_cross_entropy: logits must be [N,C]");
    const std::size_t N = s[0], C = s[1];
    detail::require(labels.size() == N, "softmax_cross_entropy: " + std::to_string(labels.size()) +
                                            " labels for " + std::to_string(N) + " rows");
    detail::require(N > 0, "softmax_cross_entropy: empty batch");
    for (int l : labels)
        if (l < 0 || static_cast<std::size_t>(l) >= C)
            throw std::out_of_range("softmax_cross_entropy: label " + std::to_string(l) + " out of range [0," +
                                    std::to_string(C) + ")");
    const Tensor<T>& z = logits.value();
    auto probs = std::make_shared<Tensor<T>>(Shape{N, C});
    T total = 0;
    for (std::size_t n = 0; n < N; ++n) {
        const T* row = z.data() + n * C;
        const T m = *std::max_element(row, row + C);
        T se = 0;
        for (std::size_t c = 0; c < C; ++c) se += std::exp(row[c] - m);
        const T lse = m + std::log(se);
        for (std::size_t c = 0; c < C; ++c) probs->at(n, c) = std::exp(row[c] - lse);
        total += lse - row[static_cast<std::size_t>(labels[n])];
    }
    const int zid = logits.id;
    return logits.graph->record("softmax_ce", Tensor<T>({1}, total / static_cast<T>(N)), {zid},
                                [=](Graph<T>& g, const Tensor<T>& go) {
                                    T* dz = g.grad_buffer(zid);
                                    const T k = go[0] / static_cast<T>(N);
                                    for (std::size_t n = 0; n < N; ++n)
                                        for (std::size_t c = 0; c < C; ++c) {
                                            T p = probs->at(n, c);
                                            if (static_cast<int>(c) == labels[n]) p -= T(1);
                                            dz[n * C + c] += k * p;
                                        }
                                });
}

/// Row-wise unit normalisation over the last axis with a 1e-12 norm floor.
/// `zero_rows`, when given, receives the number of rows that hit the floor.
template <class T>
Var<T> l2_normalize(Var<T> v, std::size_t* zero_rows = nullptr) {
    const Tensor<T>& vv = v.value();
    detail::require(vv.rank() >= 1 && vv.size() > 0, "l2_normalize: empty input");
    const std::size_t D = vv.shape().back(), R = vv.size() / D;
    constexpr T floor_eps = T(1e-12);
    auto norms = std::make_shared<std::vector<T>>(R);
    Tensor<T> out(vv.shape());
    std::size_t floored = 0;
    for (std::size_t r = 0; r < R; ++r) {
        const T n = l2_norm<T>(vv.values().subspan(r * D, D));
        (*norms)[r] = std::max(n, floor_eps);
        if (n <= floor_eps) ++floored;
        for (std::size_t d = 0; d < D; ++d) out[r * D + d] = vv[r * D + d] / (*norms)[r];
    }
    if (zero_rows) *zero_rows = floored;
    auto saved = std::make_shared<Tensor<T>>(out);
    const int vid = v.id;
    return v.graph->record("l2_normalize", std::move(out), {vid}, [=](Graph<T>& g, const Tensor<T>& go) {
        T* dv = g.grad_buffer(vid);
        const Tensor<T>& raw = g.value(vid);
        for (std::size_t r = 0; r < R; ++r) {
            const T n = (*norms)[r];
            if (l2_norm<T>(raw.values().subspan(r * D, D)) <= floor_eps) {
                for (std::size_t d = 0; d < D; ++d) dv[r * D + d] += go[r * D + d] / n;
                continue;
            }
            T dot = 0;
            for (std::size_t d = 0; d < D; ++d) dot += (*saved)[r * D + d] * go[r * D + d];
            for (std::size_t d = 0; d < D; ++d) dv[r * D + d] += (go[r * D + d] - (*saved)[r * D + d] * dot) / n;
        }
    });
}

/// Stacks tensors along the leading axis; trailing shapes must agree.
template <class T>
Var<T> concat_rows(const std::vector<Var<T>>& parts) {
    detail::require(!parts.empty(), "concat_rows: nothing to concatenate");
    Shape s = parts[0].shape();
    const Shape tail(s.begin() + 1, s.end());
    std::size_t rows = 0;
    std::vector<int> ids;
    std::vector<std::size_t> sizes;
    for (const auto& p : parts) {
        const Shape& ps = p.shape();
        detail::require(Shape(ps.begin() + 1, ps.end()) == tail, "concat_rows: trailing shape mismatch");
        rows += ps[0];
        ids.push_back(p.id);
        sizes.push_back(p.value().size());
    }
    s[0] = rows;
    Tensor<T> out(s);
    std::size_t off = 0;
    for (const auto& p : parts) {
        std::copy(p.value().data(), p.value().data() + p.value().size(), out.data() + off);
        off += p.value().size();
    }
    return parts[0].graph->record("concat_rows", std::move(out), ids, [ids, sizes](Graph<T>& g, const Tensor<T>& go) {
        std::size_t off = 0;
        for (std::size_t i = 0; i < ids.size(); ++i) {
            if (T* d = g.grad_buffer(ids[i]))
                for (std::size_t k = 0; k < sizes[i]; ++k) d[k] += go[off + k];
            off += sizes[i];
        }
    });
}

// ---------------------------------------------------------------------------
// Resampling

namespace detail {

struct AxisTap {
    std::size_t i0, i1;
    double w1;  // weight of i1; i0 gets 1 - w1
};

/// Half-pixel-centre taps (align_corners = false), negative source clamped to 0.
inline std::vector<AxisTap> bilinear_taps(std::size_t in, std::size_t out) {
    std::vector<AxisTap> taps(out);
    const double scale = static_cast<double>(in) / static_cast<double>(out);
    for (std::size_t d = 0; d < out; ++d) {
        double src = (static_cast<double>(d) + 0.5) * scale - 0.5;
        if (src < 0) src = 0;
        std::size_t i0 = static_cast<std::size_t>(src);
        if (i0 > in - 1) i0 = in - 1;
        const std::size_t i1 = std::min(i0 + 1, in - 1);
        taps[d] = {i0, i1, src - static_cast<double>(i0)};
    }
    return taps;
}

}  // namespace detail

/// Bilinear resize of the trailing two axes of a [..., H, W] tensor. Same
/// size returns an exact copy.
template <class T>
Tensor<T> resize_bilinear(const Tensor<T>& x, std::size_t out_h, std::size_t out_w) {
    detail::require(x.rank() >= 2, "bilinear_resize: input needs at least 2 axes");
    detail::require(out_h >= 1 && out_w >= 1, "bilinear_resize: output size must be >= 1");
    const std::size_t H = x.shape()[x.rank() - 2], W = x.shape()[x.rank() - 1];
    if (out_h == H && out_w == W) return x;
    const std::size_t planes = x.size() / (H * W);
    Shape s = x.shape();
    s[s.size() - 2] = out_h;
    s[s.size() - 1] = out_w;
    Tensor<T> out(s);
    const auto ty = detail::bilinear_taps(H, out_h);
    const auto tx = detail::bilinear_taps(W, out_w);
    for (std::size_t p = 0; p < planes; ++p) {
        const T* src = x.data() + p * H * W;
        T* dst = out.data() + p * out_h * out_w;
        for (std::size_t oy = 0; oy < out_h; ++oy) {
            const T wy1 = static_cast<T>(ty[oy].w1), wy0 = T(1) - wy1;
            const T* r0 = src + ty[oy].i0 * W;
            const T* r1 = src + ty[oy].i1 * W;
            for (std::size_t ox = 0; ox < out_w; ++ox) {
                const T wx1 = static_cast<T>(tx[ox].w1), wx0 = T(1) - wx1;
                dst[oy * out_w + ox] = wy0 * (wx0 * r0[tx[ox].i0] + wx1 * r0[tx[ox].i1]) +
                                       wy1 * (wx0 * r1[tx[ox].i0] + wx1 * r1[tx[ox].i1]);
            }
        }
    }
    return out;
}

template <class T>
Var<T> bilinear_resize(Var<T> x, std::size_t out_h, std::size_t out_w) {
    const Tensor<T>& xv = x.value();
    Tensor<T> out = resize_bilinear(xv, out_h, out_w);
    const std::size_t H = xv.shape()[xv.rank() - 2], W = xv.shape()[xv.rank() - 1];
    const std::size_t planes = xv.size() / (H * W);
    const int xid = x.id;
    return x.graph->record("bilinear_resize", std::move(out), {xid}, [=](Graph<T>& g, const Tensor<T>& go) {
        T* dx = g.grad_buffer(xid);
        if (out_h == H && out_w == W) {
            for (std::size_t i = 0; i < go.size(); ++i) dx[i] += go[i];
            return;
        }
        const auto ty = detail::bilinear_taps(H, out_h);
        const auto tx = detail::bilinear_taps(W, out_w);
        for (std::size_t p = 0; p < planes; ++p) {
            T* d = dx + p * H * W;
            const T* s = go.data() + p * out_h * out_w;
            for (std::size_t oy = 0; oy < out_h; ++oy) {
                const T wy1 = static_cast<T>(ty[oy].w1), wy0 = T(1) - wy1;
                for (std::size_t ox = 0; ox < out_w; ++ox) {
                    const T wx1 = static_cast<T>(tx[ox].w1), wx0 = T(1) - wx1;
                    const T v = s[oy * out_w + ox];
                    d[ty[oy].i0 * W + tx[ox].i0] += wy0 * wx0 * v;
                    d[ty[oy].i0 * W + tx[ox].i1] += wy0 * wx1 * v;
                    d[ty[oy].i1 * W + tx[ox].i0] += wy1 * wx0 * v;
                    d[ty[oy].i1 * W + tx[ox].i1] += wy1 * wx1 * v;
                }
            }
        }
    });
}

/// Nearest-neighbour integer upsampling of [N,C,H,W].
template <class T>
Var<T> upsample_nearest(Var<T> x, std::size_t factor) {
    const Tensor<T>& xv = x.value();
    detail::require(xv.rank() == 4 && factor >= 1, "upsample_nearest: expects [N,C,H,W] and factor >= 1");
    const std::size_t H = xv.dim(2), W = xv.dim(3), planes = xv.dim(0) * xv.dim(1);
    const std::size_t OH = H * factor, OW = W * factor;
    Tensor<T> out({xv.dim(0), xv.dim(1), OH, OW});
    for (std::size_t p = 0; p < planes; ++p)
        for (std::size_t y = 0; y < OH; ++y)
            for (std::size_t x2 = 0; x2 < OW; ++x2)
                out[(p * OH + y) * OW + x2] = xv[(p * H + y / factor) * W + x2 / factor];
    const int xid = x.id;
    return x.graph->record("upsample_nearest", std::move(out), {xid}, [=](Graph<T>& g, const Tensor<T>& go) {
        T* dx = g.grad_buffer(xid);
        for (std::size_t p = 0; p < planes; ++p)
            for (std::size_t y = 0; y < OH; ++y)
                for (std::size_t x2 = 0; x2 < OW; ++x2)
                    dx[(p * H + y / factor) * W + x2 / factor] += go[(p * OH + y) * OW + x2];
    });
}

// ---------------------------------------------------------------------------
// Pooling

/// Integer box [x0,x1) x [y0,y1).
struct Box {
    std::size_t x0, y0, x1, y1;

    std::size_t width() const { return x1 - x0; }
    std::size_t height() const { return y1 - y0; }
    std::size_t area() const { return width() * height(); }
    friend bool operator==(const Box&, const Box&) = default;
};

struct Roi {
    std::size_t image;
    Box box;
};

/// Channelwise mean of fmap [N,C,h,w] over each RoI; output [R, C].
template <class T>
Var<T> roi_avg_pool(Var<T> fmap, const std::vector<Roi>& rois) {
    const Tensor<T>& f = fmap.value();
    detail::require(f.rank() == 4, "roi_avg_pool: feature map must be [N,C,h,w]");
    const std::size_t N = f.dim(0), C = f.dim(1), h = f.dim(2), w = f.dim(3);
    detail::require(!rois.empty(), "roi_avg_pool: no regions");
    for (const Roi& r : rois) {
        const Box& b = r.box;
        if (r.image >= N || b.x0 >= b.x1 || b.y0 >= b.y1 || b.x1 > w || b.y1 > h) {
            throw std::invalid_argument("roi_avg_pool: box (" + std::to_string(b.x0) + "," + std::to_string(b.y0) +
                                        "," + std::to_string(b.x1) + "," + std::to_string(b.y1) +
                                        ") on image " + std::to_string(r.image) + " is empty or outside " +
                                        std::to_string(w) + "x" + std::to_string(h));
        }
    }
    Tensor<T> out({rois.size(), C});
    for (std::size_t k = 0; k < rois.size(); ++k) {
        const Box& b = rois[k].box;
        const T inv = T(1) / static_cast<T>(b.area());
        for (std::size_t c = 0; c < C; ++c) {
            const T* plane = f.data() + (rois[k].image * C + c) * h * w;
            T s = 0;
            for (std::size_t y = b.y0; y < b.y1; ++y)
                for (std::size_t x = b.x0; x < b.x1; ++x) s += plane[y * w + x];
            out.at(k, c) = s * inv;
        }
    }
    const int fid = fmap.id;
    return fmap.graph->record("roi_avg_pool", std::move(out), {fid}, [=](Graph<T>& g, const Tensor<T>& go) {
        T* df = g.grad_buffer(fid);
        for (std::size_t k = 0; k < rois.size(); ++k) {
            const Box& b = rois[k].box;
            const T inv = T(1) / static_cast<T>(b.area());
            for (std::size_t c = 0; c < C; ++c) {
                T* plane = df + (rois[k].image * C + c) * h * w;
                const T v = go[k * C + c] * inv;
                for (std::size_t y = b.y0; y < b.y1; ++y)
                    for (std::size_t x = b.x0; x < b.x1; ++x) plane[y * w + x] += v;
            }
        }
    });
}

/// Single-map form: fmap [C,h,w] -> [C].
template <class T>
Var<T> region_avg_pool(Var<T> fmap, const Box& box) {
    const Shape s = fmap.shape();
    detail::require(s.size() == 3, "region_avg_pool: feature map must be [C,h,w]");
    Var<T> pooled = roi_avg_pool(reshape(fmap, {1, s[0], s[1], s[2]}), {Roi{0, box}});
    return reshape(pooled, {s[0]});
}

template <class T>
Var<T> global_avg_pool(Var<T> x) {
    const Shape& s = x.shape();
    detail::require(s.size() == 4, "global_avg_pool: expects [N,C,H,W]");
    std::vector<Roi> rois;
    for (std::size_t n = 0; n < s[0]; ++n) rois.push_back({n, {0, 0, s[3], s[2]}});
    return roi_avg_pool(x, rois);
}

}  // namespace mcl
