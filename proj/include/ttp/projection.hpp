#pragma once

#include "ttp/tensor.hpp"

#include <array>
#include <cstddef>

namespace ttp {

// Fixed depthwise 3x3 smoothing applied per channel with reflect padding.
struct SmoothingKernel {
    std::array<double, 9> weights{1.0 / 16, 2.0 / 16, 1.0 / 16, 2.0 / 16, 4.0 / 16, 2.0 / 16, 1.0 / 16, 2.0 / 16, 1.0 / 16};
    bool enabled = true;

    static SmoothingKernel binomial() { return {}; }
    static SmoothingKernel disabled() {
        SmoothingKernel k;
        k.enabled = false;
        return k;
    }
};

// l-inf radius on the [0, 1] pixel scale.
struct Budget {
    double epsilon = 16.0 / 255.0;

    static Budget from_255(double eps255);
    double eps255() const { return epsilon * 255.0; }
};

// Reflect padding without edge repeat: index -1 maps to 1, n maps to n - 2.
std::size_t reflect_index(long i, std::size_t n);

template <typename T>
Tensor<T> smooth(const Tensor<T>& batch, const SmoothingKernel& kernel = SmoothingKernel::binomial());

// Adjoint of smooth(): gradient w.r.t. its input.
template <typename T>
Tensor<T> smooth_backward(const Tensor<T>& grad_out, const SmoothingKernel& kernel = SmoothingKernel::binomial());

// clip_[0,1]( min(anchor + eps, max(W * raw, anchor - eps)) ).
template <typename T>
Tensor<T> project(const Tensor<T>& raw, const Tensor<T>& anchor, const Budget& budget,
                  const SmoothingKernel& kernel = SmoothingKernel::binomial());

// project() with a backward pass. The gradient flows through pixels whose
// smoothed value lies strictly inside both the l-inf ball and (0, 1); clamped
// pixels receive zero (the subgradient chosen at the bounds).
template <typename T>
class SmoothProjection {
public:
    SmoothProjection(Budget budget, SmoothingKernel kernel) : budget_(budget), kernel_(kernel) {}

    Tensor<T> forward(const Tensor<T>& raw, const Tensor<T>& anchor);
    Tensor<T> backward(const Tensor<T>& grad_out) const;

    const Budget& budget() const { return budget_; }
    const SmoothingKernel& kernel() const { return kernel_; }
    // 1 where the last forward() passed the smoothed value through unclamped.
    const std::vector<unsigned char>& pass_mask() const { return pass_; }

private:
    Budget budget_;
    SmoothingKernel kernel_;
    std::vector<unsigned char> pass_;
    Shape shape_;
};

// Largest |a - b| over all pixels; used to assert the budget invariant.
template <typename T>
double linf_distance(const Tensor<T>& a, const Tensor<T>& b) {
    return static_cast<double>(max_abs_diff(a, b));
}

}  // namespace ttp
