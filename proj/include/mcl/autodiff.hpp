#pragma once

#include <deque>
#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mcl/tensor.hpp"

namespace mcl {

/// What a parameter is. Drives the optimizer exclusion rule and weight rescaling.
enum class ParamKind { ConvWeight, LinearWeight, Bias, NormScale, NormShift };

inline bool is_normalization(ParamKind k) { return k == ParamKind::NormScale || k == ParamKind::NormShift; }

template <class T>
struct Parameter {
    std::string name;
    ParamKind kind = ParamKind::ConvWeight;
    Tensor<T> value;
    Tensor<T> grad;  // empty until the first backward that reaches this parameter

    void zero_grad() {
        if (!grad.empty()) grad.fill(T(0));
    }
};

enum class GradMode { Enabled, Disabled };

template <class T>
class Graph;

/// Handle to a node of a Graph.
template <class T>
struct Var {
    Graph<T>* graph = nullptr;
    int id = -1;

    bool valid() const noexcept { return graph != nullptr && id >= 0; }
    const Tensor<T>& value() const { return graph->value(id); }
    const Shape& shape() const { return graph->value(id).shape(); }
};

/// Append-only computation record. Node i only references nodes < i, so a
/// reverse sweep over append order is a valid topological order.
template <class T>
class Graph {
public:
    using BackwardFn = std::function<void(Graph&, const Tensor<T>& out_grad)>;

    explicit Graph(GradMode mode = GradMode::Enabled) : mode_(mode) {}

    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    bool grad_enabled() const noexcept { return mode_ == GradMode::Enabled; }

    Var<T> constant(Tensor<T> value) { return push("const", std::move(value), {}, false, nullptr); }

    /// A leaf that collects a gradient (when grad mode is on).
    Var<T> leaf(Tensor<T> value) { return push("leaf", std::move(value), {}, grad_enabled(), nullptr); }

    /// Leaf bound to a parameter. One node per parameter per graph; its
    /// gradient is added into `p.grad` at the end of backward().
    Var<T> param(Parameter<T>& p) {
        if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return {this, it->second};
        Var<T> v = push("param", p.value, {}, grad_enabled(), nullptr);
        nodes_[static_cast<std::size_t>(v.id)].param = &p;
        param_nodes_.emplace(&p, v.id);
        return v;
    }

    /// Records an operation result. The backward function is dropped when
    /// no input needs a gradient.
    Var<T> record(std::string_view tag, Tensor<T> value, std::vector<int> inputs, BackwardFn fn) {
        bool needs = false;
        if (grad_enabled()) {
            for (int i : inputs) needs = needs || requires_grad(i);
        }
        return push(tag, std::move(value), std::move(inputs), needs, needs ? std::move(fn) : nullptr);
    }

    bool requires_grad(int id) const { return node(id).requires_grad; }
    bool requires_grad(Var<T> v) const { return v.valid() && requires_grad(v.id); }
    const Tensor<T>& value(int id) const { return node(id).value; }
    const Tensor<T>& grad(int id) const { return node(id).grad; }
    const Tensor<T>& grad(Var<T> v) const { return grad(v.id); }
    std::string_view tag(int id) const { return node(id).tag; }
    std::size_t size() const noexcept { return nodes_.size(); }
    const std::vector<int>& inputs(int id) const { return node(id).inputs; }

    /// Gradient buffer of a node, zero-initialised on first use; nullptr when
    /// the node does not take a gradient.
    T* grad_buffer(int id) {
        Node& n = node(id);
        if (!n.requires_grad) return nullptr;
        if (n.grad.empty()) n.grad = Tensor<T>(n.value.shape(), T(0));
        return n.grad.data();
    }

    void accumulate(int id, const Tensor<T>& g) {
        T* dst = grad_buffer(id);
        if (!dst) return;
        for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
    }

    /// Reverse-mode sweep from a scalar loss. Parameter gradients accumulate
    /// into Parameter::grad.
    void backward(Var<T> loss) {
        if (!loss.valid() || loss.graph != this) throw std::invalid_argument("backward: foreign or empty loss");
        const Tensor<T>& lv = value(loss.id);
        if (lv.size() != 1) {
            throw std::invalid_argument("backward: loss must be scalar, got shape " + shape_str(lv.shape()));
        }
        if (backward_done_) throw std::logic_error("backward: record already consumed");
        backward_done_ = true;
        if (!requires_grad(loss.id)) return;
        grad_buffer(loss.id)[0] += T(1);
        for (int i = loss.id; i >= 0; --i) {
            Node& n = nodes_[static_cast<std::size_t>(i)];
            if (n.grad.empty()) continue;
            if (n.backward) {
                // out_grad stays valid: backward functions only touch input nodes.
                n.backward(*this, n.grad);
            }
            if (n.param) {
                if (n.param->grad.empty()) n.param->grad = Tensor<T>(n.param->value.shape(), T(0));
                for (std::size_t k = 0; k < n.grad.size(); ++k) n.param->grad[k] += n.grad[k];
            }
        }
    }

private:
    struct Node {
        std::string tag;
        Tensor<T> value;
        Tensor<T> grad;
        std::vector<int> inputs;
        bool requires_grad = false;
        BackwardFn backward;
        Parameter<T>* param = nullptr;
    };

    Node& node(int id) { return nodes_.at(static_cast<std::size_t>(id)); }
    const Node& node(int id) const { return nodes_.at(static_cast<std::size_t>(id)); }

    Var<T> push(std::string_view tag, Tensor<T> value, std::vector<int> inputs, bool needs, BackwardFn fn) {
        const int id = static_cast<int>(nodes_.size());
        for (int i : inputs) {
            if (i < 0 || i >= id) throw std::logic_error("graph: input must precede its consumer");
        }
        nodes_.push_back(Node{std::string(tag), std::move(value), {}, std::move(inputs), needs, std::move(fn), nullptr});
        return {this, id};
    }

    GradMode mode_;
    bool backward_done_ = false;
    std::deque<Node> nodes_;  // deque: references to values survive later pushes
    std::unordered_map<const Parameter<T>*, int> param_nodes_;
};

}  // namespace mcl
