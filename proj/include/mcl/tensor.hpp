#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace mcl {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

/// Dense row-major array. Gradients are not stored here; they live on the
/// computation record (see autodiff.hpp) or on a Parameter.
template <class T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;

    explicit Tensor(Shape shape, T fill = T(0))
        : shape_(std::move(shape)), values_(numel(shape_), fill) {}

    Tensor(Shape shape, std::vector<T> values) : shape_(std::move(shape)), values_(std::move(values)) {
        if (numel(shape_) != values_.size()) {
            throw std::invalid_argument("Tensor: shape " + shape_str(shape_) + " needs " +
                                        std::to_string(numel(shape_)) + " values, got " +
                                        std::to_string(values_.size()));
        }
    }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t size() const noexcept { return values_.size(); }
    bool empty() const noexcept { return values_.empty(); }

    T* data() noexcept { return values_.data(); }
    const T* data() const noexcept { return values_.data(); }
    std::span<T> values() noexcept { return values_; }
    std::span<const T> values() const noexcept { return values_; }
    std::vector<T>& storage() noexcept { return values_; }
    const std::vector<T>& storage() const noexcept { return values_; }

    T& operator[](std::size_t i) noexcept { return values_[i]; }
    const T& operator[](std::size_t i) const noexcept { return values_[i]; }

    T& at(std::size_t r, std::size_t c) { return values_[r * shape_[1] + c]; }
    const T& at(std::size_t r, std::size_t c) const { return values_[r * shape_[1] + c]; }

    T& at(std::size_t c, std::size_t h, std::size_t w) {
        return values_[(c * shape_[1] + h) * shape_[2] + w];
    }
    const T& at(std::size_t c, std::size_t h, std::size_t w) const {
        return values_[(c * shape_[1] + h) * shape_[2] + w];
    }

    T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
        return values_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
    }
    const T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
        return values_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
    }

    void fill(T v) { std::fill(values_.begin(), values_.end(), v); }

    Tensor reshaped(Shape shape) const {
        if (numel(shape) != size()) {
            throw std::invalid_argument("reshape: " + shape_str(shape_) + " -> " + shape_str(shape));
        }
        return Tensor(std::move(shape), values_);
    }

    template <class U>
    Tensor<U> cast() const {
        std::vector<U> out(values_.begin(), values_.end());
        return Tensor<U>(shape_, std::move(out));
    }

    bool all_finite() const {
        return std::all_of(values_.begin(), values_.end(), [](T v) { return std::isfinite(v); });
    }

    /// Slice of the leading dimension, [first, first + count).
    Tensor slice(std::size_t first, std::size_t count) const {
        if (shape_.empty() || first + count > shape_[0]) throw std::out_of_range("Tensor::slice");
        Shape s = shape_;
        s[0] = count;
        const std::size_t inner = shape_[0] ? size() / shape_[0] : 0;
        std::vector<T> out(values_.begin() + static_cast<std::ptrdiff_t>(first * inner),
                           values_.begin() + static_cast<std::ptrdiff_t>((first + count) * inner));
        return Tensor(std::move(s), std::move(out));
    }

    friend bool operator==(const Tensor& a, const Tensor& b) {
        return a.shape_ == b.shape_ && a.values_ == b.values_;
    }

private:
    Shape shape_;
    std::vector<T> values_;
};

template <class T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape()) throw std::invalid_argument("max_abs_diff: shape mismatch");
    T m = 0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

template <class T>
T sum_of(const Tensor<T>& a) {
    T s = 0;
    for (T v : a.values()) s += v;
    return s;
}

template <class T>
T l2_norm(std::span<const T> v) {
    T s = 0;
    for (T x : v) s += x * x;
    return std::sqrt(s);
}

}  // namespace mcl
