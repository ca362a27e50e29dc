#pragma once

#include "ttp/error.hpp"

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

namespace ttp {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);

inline std::size_t shape_size(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

// Dense row-major tensor. Image batches are N x C x H x W, feature batches N x n.
template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;
    explicit Tensor(Shape shape, T fill = T{0})
        : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}
    Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
        if (data_.size() != shape_size(shape_)) {
            throw ShapeMismatch("tensor data length " + std::to_string(data_.size()) +
                                " does not match shape " + shape_string(shape_));
        }
    }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    T* data() noexcept { return data_.data(); }
    const T* data() const noexcept { return data_.data(); }
    std::span<T> values() noexcept { return data_; }
    std::span<const T> values() const noexcept { return data_; }
    const std::vector<T>& storage() const noexcept { return data_; }

    T& operator[](std::size_t i) noexcept { return data_[i]; }
    const T& operator[](std::size_t i) const noexcept { return data_[i]; }

    // Elements per leading-dimension slice (one sample).
    std::size_t row_size() const { return shape_.empty() ? 0 : data_.size() / shape_[0]; }

    T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) noexcept {
        return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
    }
    const T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const noexcept {
        return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
    }
    T& at(std::size_t i, std::size_t j) noexcept { return data_[i * shape_[1] + j]; }
    const T& at(std::size_t i, std::size_t j) const noexcept { return data_[i * shape_[1] + j]; }

    std::span<T> row(std::size_t n) noexcept { return {data_.data() + n * row_size(), row_size()}; }
    std::span<const T> row(std::size_t n) const noexcept {
        return {data_.data() + n * row_size(), row_size()};
    }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    Tensor reshaped(Shape shape) const {
        if (shape_size(shape) != data_.size()) {
            throw ShapeMismatch("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
        }
        return Tensor(std::move(shape), data_);
    }

    // Rows [begin, end) along the leading dimension.
    Tensor slice_rows(std::size_t begin, std::size_t end) const {
        Shape s = shape_;
        s[0] = end - begin;
        const std::size_t r = row_size();
        return Tensor(std::move(s), std::vector<T>(data_.begin() + begin * r, data_.begin() + end * r));
    }

    template <typename U>
    Tensor<U> cast() const {
        std::vector<U> out(data_.size());
        std::transform(data_.begin(), data_.end(), out.begin(), [](T v) { return static_cast<U>(v); });
        return Tensor<U>(shape_, std::move(out));
    }

    bool operator==(const Tensor& other) const = default;

private:
    Shape shape_;
    std::vector<T> data_;
};

// Stacks tensors along the leading dimension; trailing dimensions must agree.
template <typename T>
Tensor<T> concat_rows(std::span<const Tensor<T>* const> parts) {
    if (parts.empty()) return {};
    Shape shape = parts.front()->shape();
    shape[0] = 0;
    for (const Tensor<T>* p : parts) {
        if (p->rank() != shape.size() || !std::equal(shape.begin() + 1, shape.end(), p->shape().begin() + 1)) {
            throw ShapeMismatch("concat_rows: " + shape_string(p->shape()) + " vs " + shape_string(shape));
        }
        shape[0] += p->dim(0);
    }
    std::vector<T> data;
    data.reserve(shape_size(shape));
    for (const Tensor<T>* p : parts) data.insert(data.end(), p->values().begin(), p->values().end());
    return Tensor<T>(std::move(shape), std::move(data));
}

template <typename T>
Tensor<T> concat_rows(const Tensor<T>& a, const Tensor<T>& b) {
    const Tensor<T>* parts[] = {&a, &b};
    return concat_rows<T>(std::span<const Tensor<T>* const>(parts));
}

inline void require_same_shape(const Shape& a, const Shape& b, const char* what) {
    if (a != b) throw ShapeMismatch(std::string(what) + ": " + shape_string(a) + " vs " + shape_string(b));
}

// Largest absolute elementwise difference.
template <typename T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape(a.shape(), b.shape(), "max_abs_diff");
    T m = T{0};
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, a[i] > b[i] ? a[i] - b[i] : b[i] - a[i]);
    return m;
}

using ImageBatch = Tensor<float>;
using FeatureBatch = Tensor<float>;

}  // namespace ttp
