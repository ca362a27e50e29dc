#include "ttp/projection.hpp"

#include <algorithm>

namespace ttp {

Budget Budget::from_255(double eps255) {
    if (!(eps255 >= 0.0)) throw InvalidArgument("epsilon must be >= 0");
    return Budget{eps255 / 255.0};
}

std::size_t reflect_index(long i, std::size_t n) {
    if (n == 1) return 0;
    const long period = 2 * static_cast<long>(n - 1);
    i %= period;
    if (i < 0) i += period;
    return static_cast<std::size_t>(i < static_cast<long>(n) ? i : period - i);
}

namespace {

void require_images(const Shape& s, const char* what) {
    if (s.size() != 4) throw ShapeMismatch(std::string(what) + " expects N x C x H x W, got " + shape_string(s));
}

// Applies the kernel (forward) or its transpose (adjoint) plane by plane.
template <typename T>
Tensor<T> convolve(const Tensor<T>& in, const SmoothingKernel& kernel, bool adjoint) {
    require_images(in.shape(), "smooth");
    const std::size_t planes = in.dim(0) * in.dim(1), h = in.dim(2), w = in.dim(3);
    Tensor<T> out(in.shape());
    std::vector<double> acc(h * w);
    for (std::size_t p = 0; p < planes; ++p) {
        const T* src = in.data() + p * h * w;
        std::fill(acc.begin(), acc.end(), 0.0);
        for (std::size_t y = 0; y < h; ++y) {
            for (std::size_t x = 0; x < w; ++x) {
                for (int dy = -1; dy <= 1; ++dy) {
                    const std::size_t sy = reflect_index(static_cast<long>(y) + dy, h);
                    for (int dx = -1; dx <= 1; ++dx) {
                        const std::size_t sx = reflect_index(static_cast<long>(x) + dx, w);
                        const double k = kernel.weights[static_cast<std::size_t>((dy + 1) * 3 + dx + 1)];
                        if (adjoint) {
                            acc[sy * w + sx] += k * static_cast<double>(src[y * w + x]);
                        } else {
                            acc[y * w + x] += k * static_cast<double>(src[sy * w + sx]);
                        }
                    }
                }
            }
        }
        T* dst = out.data() + p * h * w;
        for (std::size_t i = 0; i < h * w; ++i) dst[i] = static_cast<T>(acc[i]);
    }
    return out;
}

}  // namespace

template <typename T>
Tensor<T> smooth(const Tensor<T>& batch, const SmoothingKernel& kernel) {
    if (!kernel.enabled) return batch;
    return convolve(batch, kernel, false);
}

template <typename T>
Tensor<T> smooth_backward(const Tensor<T>& grad_out, const SmoothingKernel& kernel) {
    if (!kernel.enabled) return grad_out;
    return convolve(grad_out, kernel, true);
}

template <typename T>
Tensor<T> project(const Tensor<T>& raw, const Tensor<T>& anchor, const Budget& budget, const SmoothingKernel& kernel) {
    SmoothProjection<T> proj(budget, kernel);
    return proj.forward(raw, anchor);
}

template <typename T>
Tensor<T> SmoothProjection<T>::forward(const Tensor<T>& raw, const Tensor<T>& anchor) {
    require_images(raw.shape(), "project");
    require_same_shape(raw.shape(), anchor.shape(), "project raw/anchor");
    if (!(budget_.epsilon >= 0.0)) throw InvalidArgument("epsilon must be >= 0");
    const Tensor<T> s = smooth(raw, kernel_);
    const T eps = static_cast<T>(budget_.epsilon);
    Tensor<T> out(raw.shape());
    pass_.assign(raw.size(), 0);
    shape_ = raw.shape();
    for (std::size_t i = 0; i < raw.size(); ++i) {
        const T lo = anchor[i] - eps, hi = anchor[i] + eps;
        const T v = std::min(hi, std::max(s[i], lo));
        out[i] = std::clamp(v, T{0}, T{1});
        pass_[i] = s[i] > lo && s[i] < hi && s[i] > T{0} && s[i] < T{1};
    }
    return out;
}

template <typename T>
Tensor<T> SmoothProjection<T>::backward(const Tensor<T>& grad_out) const {
    require_same_shape(grad_out.shape(), shape_, "projection backward");
    Tensor<T> g(grad_out.shape());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = pass_[i] ? grad_out[i] : T{0};
    return smooth_backward(g, kernel_);
}

template Tensor<float> smooth(const Tensor<float>&, const SmoothingKernel&);
template Tensor<double> smooth(const Tensor<double>&, const SmoothingKernel&);
template Tensor<float> smooth_backward(const Tensor<float>&, const SmoothingKernel&);
template Tensor<double> smooth_backward(const Tensor<double>&, const SmoothingKernel&);
template Tensor<float> project(const Tensor<float>&, const Tensor<float>&, const Budget&, const SmoothingKernel&);
template Tensor<double> project(const Tensor<double>&, const Tensor<double>&, const Budget&, const SmoothingKernel&);
template class SmoothProjection<float>;
template class SmoothProjection<double>;

}  // namespace ttp
