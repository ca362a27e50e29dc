#include "ttp/nn.hpp"
#include "ttp/parallel.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>

namespace ttp::nn {
namespace {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMatrix<T>>;

void require_rank(const Shape& s, std::size_t rank, const char* layer) {
    if (s.size() != rank) {
        throw ShapeMismatch(std::string(layer) + " expects rank " + std::to_string(rank) + " input, got " +
                            shape_string(s));
    }
}

template <typename T>
Tensor<T> he_normal(Shape shape, std::size_t fan_in, Rng& rng) {
    Tensor<T> t(std::move(shape));
    const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (auto& v : t.values()) v = static_cast<T>(normal(rng) * stddev);
    return t;
}

// Geometry of one convolution, shared by forward and backward.
struct ConvGeometry {
    std::size_t c, h, w, k, stride, pad, oh, ow;
    std::size_t patch() const { return c * k * k; }
    std::size_t pixels() const { return oh * ow; }
};

// Writes the im2col matrix of one sample into columns [col0, col0 + pixels)
// of a (patch x ld) row-major buffer.
template <typename T>
void im2col(const T* img, const ConvGeometry& g, T* cols, std::size_t ld, std::size_t col0) {
    for (std::size_t ci = 0; ci < g.c; ++ci) {
        for (std::size_t ky = 0; ky < g.k; ++ky) {
            for (std::size_t kx = 0; kx < g.k; ++kx) {
                T* row = cols + ((ci * g.k + ky) * g.k + kx) * ld + col0;
                for (std::size_t oy = 0; oy < g.oh; ++oy) {
                    const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
                    for (std::size_t ox = 0; ox < g.ow; ++ox) {
                        const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
                        const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<long>(g.h) && ix < static_cast<long>(g.w);
                        row[oy * g.ow + ox] = inside ? img[(ci * g.h + static_cast<std::size_t>(iy)) * g.w + static_cast<std::size_t>(ix)] : T{0};
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im(const T* cols, const ConvGeometry& g, std::size_t ld, std::size_t col0, T* img) {
    for (std::size_t ci = 0; ci < g.c; ++ci) {
        for (std::size_t ky = 0; ky < g.k; ++ky) {
            for (std::size_t kx = 0; kx < g.k; ++kx) {
                const T* row = cols + ((ci * g.k + ky) * g.k + kx) * ld + col0;
                for (std::size_t oy = 0; oy < g.oh; ++oy) {
                    const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
                    if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
                    for (std::size_t ox = 0; ox < g.ow; ++ox) {
                        const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
                        if (ix < 0 || ix >= static_cast<long>(g.w)) continue;
                        img[(ci * g.h + static_cast<std::size_t>(iy)) * g.w + static_cast<std::size_t>(ix)] += row[oy * g.ow + ox];
                    }
                }
            }
        }
    }
}

// Samples per im2col chunk, bounded so the column buffer stays near 8M values.
std::size_t conv_chunk(const ConvGeometry& g, std::size_t n) {
    const std::size_t per = std::max<std::size_t>(1, g.patch() * g.pixels());
    return std::clamp<std::size_t>((std::size_t{8} << 20) / per, 1, n);
}

}  // namespace

// ---------------------------------------------------------------------------
// Conv2d
// ---------------------------------------------------------------------------

template <typename T>
Conv2d<T>::Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel, std::size_t stride,
                  std::size_t padding, bool bias, Rng& rng)
    : in_(in_channels),
      out_(out_channels),
      k_(kernel),
      stride_(stride),
      pad_(padding),
      has_bias_(bias),
      weight_(he_normal<T>({out_channels, in_channels, kernel, kernel}, in_channels * kernel * kernel, rng)),
      bias_(Tensor<T>({bias ? out_channels : 0})) {}

template <typename T>
Tensor<T> Conv2d<T>::forward(const Tensor<T>& x) {
    require_rank(x.shape(), 4, "Conv2d");
    if (x.dim(1) != in_) {
        throw ShapeMismatch("Conv2d expects " + std::to_string(in_) + " channels, got " + shape_string(x.shape()));
    }
    input_ = x;
    const std::size_t n = x.dim(0);
    const ConvGeometry g{in_, x.dim(2), x.dim(3), k_, stride_, pad_,
                         (x.dim(2) + 2 * pad_ - k_) / stride_ + 1, (x.dim(3) + 2 * pad_ - k_) / stride_ + 1};
    Tensor<T> y({n, out_, g.oh, g.ow});
    const std::size_t chunk = conv_chunk(g, n), p = g.pixels(), in_size = in_ * g.h * g.w;
    std::vector<T> cols(g.patch() * chunk * p);
    RowMatrix<T> out_block;
    const ConstMatMap<T> w(weight_.value.data(), static_cast<Eigen::Index>(out_), static_cast<Eigen::Index>(g.patch()));

    for (std::size_t n0 = 0; n0 < n; n0 += chunk) {
        const std::size_t cn = std::min(chunk, n - n0), ld = cn * p;
        parallel_for(cn, [&](std::size_t i) { im2col(x.data() + (n0 + i) * in_size, g, cols.data(), ld, i * p); });
        const ConstMatMap<T> c(cols.data(), static_cast<Eigen::Index>(g.patch()), static_cast<Eigen::Index>(ld));
        out_block.noalias() = w * c;
        for (std::size_t i = 0; i < cn; ++i) {
            for (std::size_t o = 0; o < out_; ++o) {
                T* dst = y.data() + ((n0 + i) * out_ + o) * p;
                const T* src = out_block.data() + o * ld + i * p;
                const T b = has_bias_ ? bias_.value[o] : T{0};
                for (std::size_t q = 0; q < p; ++q) dst[q] = src[q] + b;
            }
        }
    }
    return y;
}

template <typename T>
Tensor<T> Conv2d<T>::backward(const Tensor<T>& grad_out) {
    const Tensor<T>& x = input_;
    const std::size_t n = x.dim(0);
    const ConvGeometry g{in_, x.dim(2), x.dim(3), k_, stride_, pad_, grad_out.dim(2), grad_out.dim(3)};
    Tensor<T> dx(x.shape());
    const std::size_t chunk = conv_chunk(g, n), p = g.pixels(), in_size = in_ * g.h * g.w;
    std::vector<T> cols(g.patch() * chunk * p);
    RowMatrix<T> dy_block;
    RowMatrix<T> dcols;
    const ConstMatMap<T> w(weight_.value.data(), static_cast<Eigen::Index>(out_), static_cast<Eigen::Index>(g.patch()));
    MatMap<T> dw(weight_.grad.data(), static_cast<Eigen::Index>(out_), static_cast<Eigen::Index>(g.patch()));

    for (std::size_t n0 = 0; n0 < n; n0 += chunk) {
        const std::size_t cn = std::min(chunk, n - n0), ld = cn * p;
        dy_block.resize(static_cast<Eigen::Index>(out_), static_cast<Eigen::Index>(ld));
        for (std::size_t i = 0; i < cn; ++i) {
            for (std::size_t o = 0; o < out_; ++o) {
                const T* src = grad_out.data() + ((n0 + i) * out_ + o) * p;
                std::copy(src, src + p, dy_block.data() + o * ld + i * p);
            }
        }
        if (this->param_grads_) {
            parallel_for(cn, [&](std::size_t i) { im2col(x.data() + (n0 + i) * in_size, g, cols.data(), ld, i * p); });
            const ConstMatMap<T> c(cols.data(), static_cast<Eigen::Index>(g.patch()), static_cast<Eigen::Index>(ld));
            dw.noalias() += dy_block * c.transpose();
            if (has_bias_) {
                for (std::size_t o = 0; o < out_; ++o) bias_.grad[o] += dy_block.row(static_cast<Eigen::Index>(o)).sum();
            }
        }
        dcols.noalias() = w.transpose() * dy_block;
        parallel_for(cn, [&](std::size_t i) { col2im(dcols.data(), g, ld, i * p, dx.data() + (n0 + i) * in_size); });
    }
    return dx;
}

template <typename T>
void Conv2d<T>::collect(const std::string& prefix, std::vector<NamedParameter<T>>& out) {
    out.push_back({this->join(prefix, "weight"), &weight_});
    if (has_bias_) out.push_back({this->join(prefix, "bias"), &bias_});
}

// ---------------------------------------------------------------------------
// Linear
// ---------------------------------------------------------------------------

template <typename T>
Linear<T>::Linear(std::size_t in_features, std::size_t out_features, Rng& rng)
    : in_(in_features),
      out_(out_features),
      weight_(he_normal<T>({out_features, in_features}, in_features, rng)),
      bias_(Tensor<T>({out_features})) {}

template <typename T>
Tensor<T> Linear<T>::forward(const Tensor<T>& x) {
    require_rank(x.shape(), 2, "Linear");
    if (x.dim(1) != in_) throw ShapeMismatch("Linear expects " + std::to_string(in_) + " features, got " + shape_string(x.shape()));
    input_ = x;
    const auto n = static_cast<Eigen::Index>(x.dim(0));
    Tensor<T> y({x.dim(0), out_});
    const ConstMatMap<T> xm(x.data(), n, static_cast<Eigen::Index>(in_));
    const ConstMatMap<T> w(weight_.value.data(), static_cast<Eigen::Index>(out_), static_cast<Eigen::Index>(in_));
    MatMap<T> ym(y.data(), n, static_cast<Eigen::Index>(out_));
    ym.noalias() = xm * w.transpose();
    for (Eigen::Index i = 0; i < n; ++i) {
        for (std::size_t o = 0; o < out_; ++o) ym(i, static_cast<Eigen::Index>(o)) += bias_.value[o];
    }
    return y;
}

template <typename T>
Tensor<T> Linear<T>::backward(const Tensor<T>& grad_out) {
    const auto n = static_cast<Eigen::Index>(input_.dim(0));
    const ConstMatMap<T> dy(grad_out.data(), n, static_cast<Eigen::Index>(out_));
    const ConstMatMap<T> xm(input_.data(), n, static_cast<Eigen::Index>(in_));
    const ConstMatMap<T> w(weight_.value.data(), static_cast<Eigen::Index>(out_), static_cast<Eigen::Index>(in_));
    if (this->param_grads_) {
        MatMap<T> dw(weight_.grad.data(), static_cast<Eigen::Index>(out_), static_cast<Eigen::Index>(in_));
        dw.noalias() += dy.transpose() * xm;
        for (Eigen::Index i = 0; i < n; ++i) {
            for (std::size_t o = 0; o < out_; ++o) bias_.grad[o] += dy(i, static_cast<Eigen::Index>(o));
        }
    }
    Tensor<T> dx(input_.shape());
    MatMap<T> dxm(dx.data(), n, static_cast<Eigen::Index>(in_));
    dxm.noalias() = dy * w;
    return dx;
}

template <typename T>
void Linear<T>::collect(const std::string& prefix, std::vector<NamedParameter<T>>& out) {
    out.push_back({this->join(prefix, "weight"), &weight_});
    out.push_back({this->join(prefix, "bias"), &bias_});
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

namespace {

// Input gradient of normalization with batch statistics. per_sample: statistics
// were taken per (n, c) plane (instance norm); otherwise per channel over the batch.
template <typename T>
void normalize_backward(const Tensor<T>& xhat, const Tensor<T>& dy, const std::vector<T>& inv_std,
                        const Parameter<T>& gamma, std::size_t group_len, bool per_sample, Tensor<T>& dx) {
    const std::size_t n = xhat.dim(0), c = xhat.dim(1), hw = xhat.dim(2) * xhat.dim(3);
    auto process = [&](std::size_t ch, auto&& for_each_plane, std::size_t stat_index) {
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for_each_plane([&](std::size_t base) {
            for (std::size_t q = 0; q < hw; ++q) {
                sum_dy += dy[base + q];
                sum_dy_xhat += static_cast<double>(dy[base + q]) * xhat[base + q];
            }
        });
        const double m = static_cast<double>(group_len);
        const double g = static_cast<double>(gamma.value[ch]) * inv_std[stat_index];
        for_each_plane([&](std::size_t base) {
            for (std::size_t q = 0; q < hw; ++q) {
                dx[base + q] = static_cast<T>(g * (dy[base + q] - sum_dy / m - xhat[base + q] * sum_dy_xhat / m));
            }
        });
    };
    if (per_sample) {
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t ch = 0; ch < c; ++ch) {
                process(ch, [&](auto&& f) { f((i * c + ch) * hw); }, i * c + ch);
            }
        }
    } else {
        for (std::size_t ch = 0; ch < c; ++ch) {
            process(ch, [&](auto&& f) { for (std::size_t i = 0; i < n; ++i) f((i * c + ch) * hw); }, ch);
        }
    }
}

template <typename T>
void accumulate_affine_grads(const Tensor<T>& xhat, const Tensor<T>& dy, Parameter<T>& gamma, Parameter<T>& beta) {
    const std::size_t n = xhat.dim(0), c = xhat.dim(1), hw = xhat.dim(2) * xhat.dim(3);
    for (std::size_t ch = 0; ch < c; ++ch) {
        double dg = 0.0, db = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t base = (i * c + ch) * hw;
            for (std::size_t q = 0; q < hw; ++q) {
                dg += static_cast<double>(dy[base + q]) * xhat[base + q];
                db += dy[base + q];
            }
        }
        gamma.grad[ch] += static_cast<T>(dg);
        beta.grad[ch] += static_cast<T>(db);
    }
}

}  // namespace

template <typename T>
BatchNorm2d<T>::BatchNorm2d(std::size_t channels, T momentum, T eps)
    : channels_(channels),
      momentum_(momentum),
      eps_(eps),
      gamma_(Tensor<T>({channels}, T{1})),
      beta_(Tensor<T>({channels})),
      running_mean_(Tensor<T>({channels}), false),
      running_var_(Tensor<T>({channels}, T{1}), false) {}

template <typename T>
Tensor<T> BatchNorm2d<T>::forward(const Tensor<T>& x) {
    require_rank(x.shape(), 4, "BatchNorm2d");
    if (x.dim(1) != channels_) throw ShapeMismatch("BatchNorm2d channel mismatch: " + shape_string(x.shape()));
    const std::size_t n = x.dim(0), c = channels_, hw = x.dim(2) * x.dim(3);
    xhat_ = Tensor<T>(x.shape());
    inv_std_.assign(c, T{0});
    cached_training_ = this->training_;
    Tensor<T> y(x.shape());
    for (std::size_t ch = 0; ch < c; ++ch) {
        double mean, var;
        if (this->training_) {
            double s = 0.0, s2 = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                const T* p = x.data() + (i * c + ch) * hw;
                for (std::size_t q = 0; q < hw; ++q) s += p[q];
            }
            const double m = static_cast<double>(n * hw);
            mean = s / m;
            for (std::size_t i = 0; i < n; ++i) {
                const T* p = x.data() + (i * c + ch) * hw;
                for (std::size_t q = 0; q < hw; ++q) s2 += (p[q] - mean) * (p[q] - mean);
            }
            var = s2 / m;
            const double unbiased = m > 1 ? s2 / (m - 1) : var;
            running_mean_.value[ch] = static_cast<T>((1 - momentum_) * running_mean_.value[ch] + momentum_ * mean);
            running_var_.value[ch] = static_cast<T>((1 - momentum_) * running_var_.value[ch] + momentum_ * unbiased);
        } else {
            mean = running_mean_.value[ch];
            var = running_var_.value[ch];
        }
        const double inv = 1.0 / std::sqrt(var + eps_);
        inv_std_[ch] = static_cast<T>(inv);
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t base = (i * c + ch) * hw;
            for (std::size_t q = 0; q < hw; ++q) {
                const T xh = static_cast<T>((x[base + q] - mean) * inv);
                xhat_[base + q] = xh;
                y[base + q] = gamma_.value[ch] * xh + beta_.value[ch];
            }
        }
    }
    return y;
}

template <typename T>
Tensor<T> BatchNorm2d<T>::backward(const Tensor<T>& grad_out) {
    if (this->param_grads_) accumulate_affine_grads(xhat_, grad_out, gamma_, beta_);
    Tensor<T> dx(grad_out.shape());
    if (cached_training_) {
        const std::size_t m = grad_out.dim(0) * grad_out.dim(2) * grad_out.dim(3);
        normalize_backward(xhat_, grad_out, inv_std_, gamma_, m, false, dx);
    } else {
        const std::size_t n = grad_out.dim(0), c = channels_, hw = grad_out.dim(2) * grad_out.dim(3);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t ch = 0; ch < c; ++ch) {
                const T g = gamma_.value[ch] * inv_std_[ch];
                const std::size_t base = (i * c + ch) * hw;
                for (std::size_t q = 0; q < hw; ++q) dx[base + q] = grad_out[base + q] * g;
            }
        }
    }
    return dx;
}

template <typename T>
void BatchNorm2d<T>::collect(const std::string& prefix, std::vector<NamedParameter<T>>& out) {
    out.push_back({this->join(prefix, "weight"), &gamma_});
    out.push_back({this->join(prefix, "bias"), &beta_});
    out.push_back({this->join(prefix, "running_mean"), &running_mean_});
    out.push_back({this->join(prefix, "running_var"), &running_var_});
}

template <typename T>
InstanceNorm2d<T>::InstanceNorm2d(std::size_t channels, T eps)
    : channels_(channels), eps_(eps), gamma_(Tensor<T>({channels}, T{1})), beta_(Tensor<T>({channels})) {}

template <typename T>
Tensor<T> InstanceNorm2d<T>::forward(const Tensor<T>& x) {
    require_rank(x.shape(), 4, "InstanceNorm2d");
    if (x.dim(1) != channels_) throw ShapeMismatch("InstanceNorm2d channel mismatch: " + shape_string(x.shape()));
    const std::size_t n = x.dim(0), c = channels_, hw = x.dim(2) * x.dim(3);
    xhat_ = Tensor<T>(x.shape());
    inv_std_.assign(n * c, T{0});
    Tensor<T> y(x.shape());
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t ch = 0; ch < c; ++ch) {
            const std::size_t base = (i * c + ch) * hw;
            double s = 0.0, s2 = 0.0;
            for (std::size_t q = 0; q < hw; ++q) s += x[base + q];
            const double mean = s / static_cast<double>(hw);
            for (std::size_t q = 0; q < hw; ++q) s2 += (x[base + q] - mean) * (x[base + q] - mean);
            const double inv = 1.0 / std::sqrt(s2 / static_cast<double>(hw) + eps_);
            inv_std_[i * c + ch] = static_cast<T>(inv);
            for (std::size_t q = 0; q < hw; ++q) {
                const T xh = static_cast<T>((x[base + q] - mean) * inv);
                xhat_[base + q] = xh;
                y[base + q] = gamma_.value[ch] * xh + beta_.value[ch];
            }
        }
    }
    return y;
}

template <typename T>
Tensor<T> InstanceNorm2d<T>::backward(const Tensor<T>& grad_out) {
    if (this->param_grads_) accumulate_affine_grads(xhat_, grad_out, gamma_, beta_);
    Tensor<T> dx(grad_out.shape());
    normalize_backward(xhat_, grad_out, inv_std_, gamma_, grad_out.dim(2) * grad_out.dim(3), true, dx);
    return dx;
}

template <typename T>
void InstanceNorm2d<T>::collect(const std::string& prefix, std::vector<NamedParameter<T>>& out) {
    out.push_back({this->join(prefix, "weight"), &gamma_});
    out.push_back({this->join(prefix, "bias"), &beta_});
}

// ---------------------------------------------------------------------------
// Activations, pooling, reshaping
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> ReLU<T>::forward(const Tensor<T>& x) {
    output_ = x;
    for (auto& v : output_.values()) v = v > T{0} ? v : T{0};
    return output_;
}

template <typename T>
Tensor<T> ReLU<T>::backward(const Tensor<T>& grad_out) {
    Tensor<T> dx = grad_out;
    for (std::size_t i = 0; i < dx.size(); ++i) {
        if (!(output_[i] > T{0})) dx[i] = T{0};
    }
    return dx;
}

template <typename T>
Tensor<T> Tanh<T>::forward(const Tensor<T>& x) {
    output_ = Tensor<T>(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) output_[i] = std::tanh(x[i]);
    return output_;
}

template <typename T>
Tensor<T> Tanh<T>::backward(const Tensor<T>& grad_out) {
    Tensor<T> dx(grad_out.shape());
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = grad_out[i] * (T{1} - output_[i] * output_[i]);
    return dx;
}

template <typename T>
Tensor<T> Tanh01<T>::forward(const Tensor<T>& x) {
    tanh_ = x;
    Tensor<T> y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        tanh_[i] = std::tanh(x[i]);
        y[i] = (tanh_[i] + T{1}) / T{2};
    }
    return y;
}

template <typename T>
Tensor<T> Tanh01<T>::backward(const Tensor<T>& grad_out) {
    Tensor<T> dx(grad_out.shape());
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = grad_out[i] * (T{1} - tanh_[i] * tanh_[i]) / T{2};
    return dx;
}

template <typename T>
Tensor<T> MaxPool2d<T>::forward(const Tensor<T>& x) {
    require_rank(x.shape(), 4, "MaxPool2d");
    input_shape_ = x.shape();
    const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::size_t oh = h / window_, ow = w / window_;
    Tensor<T> y({n, c, oh, ow});
    argmax_.assign(y.size(), 0);
    for (std::size_t plane = 0; plane < n * c; ++plane) {
        const T* src = x.data() + plane * h * w;
        for (std::size_t oy = 0; oy < oh; ++oy) {
            for (std::size_t ox = 0; ox < ow; ++ox) {
                std::size_t best = (oy * window_) * w + ox * window_;
                for (std::size_t dy = 0; dy < window_; ++dy) {
                    for (std::size_t dx = 0; dx < window_; ++dx) {
                        const std::size_t idx = (oy * window_ + dy) * w + ox * window_ + dx;
                        if (src[idx] > src[best]) best = idx;
                    }
                }
                const std::size_t o = (plane * oh + oy) * ow + ox;
                y[o] = src[best];
                argmax_[o] = plane * h * w + best;
            }
        }
    }
    return y;
}

template <typename T>
Tensor<T> MaxPool2d<T>::backward(const Tensor<T>& grad_out) {
    Tensor<T> dx(input_shape_);
    for (std::size_t o = 0; o < grad_out.size(); ++o) dx[argmax_[o]] += grad_out[o];
    return dx;
}

template <typename T>
Tensor<T> AvgPool2d<T>::forward(const Tensor<T>& x) {
    require_rank(x.shape(), 4, "AvgPool2d");
    input_shape_ = x.shape();
    const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::size_t oh = h / window_, ow = w / window_;
    const T scale = T{1} / static_cast<T>(window_ * window_);
    Tensor<T> y({n, c, oh, ow});
    for (std::size_t plane = 0; plane < n * c; ++plane) {
        const T* src = x.data() + plane * h * w;
        for (std::size_t oy = 0; oy < oh; ++oy) {
            for (std::size_t ox = 0; ox < ow; ++ox) {
                T s{0};
                for (std::size_t dy = 0; dy < window_; ++dy) {
                    for (std::size_t dx = 0; dx < window_; ++dx) s += src[(oy * window_ + dy) * w + ox * window_ + dx];
                }
                y[(plane * oh + oy) * ow + ox] = s * scale;
            }
        }
    }
    return y;
}

template <typename T>
Tensor<T> AvgPool2d<T>::backward(const Tensor<T>& grad_out) {
    Tensor<T> dx(input_shape_);
    const std::size_t h = input_shape_[2], w = input_shape_[3];
    const std::size_t oh = h / window_, ow = w / window_;
    const T scale = T{1} / static_cast<T>(window_ * window_);
    for (std::size_t plane = 0; plane < input_shape_[0] * input_shape_[1]; ++plane) {
        T* dst = dx.data() + plane * h * w;
        for (std::size_t oy = 0; oy < oh; ++oy) {
            for (std::size_t ox = 0; ox < ow; ++ox) {
                const T g = grad_out[(plane * oh + oy) * ow + ox] * scale;
                for (std::size_t dy = 0; dy < window_; ++dy) {
                    for (std::size_t ddx = 0; ddx < window_; ++ddx) dst[(oy * window_ + dy) * w + ox * window_ + ddx] = g;
                }
            }
        }
    }
    return dx;
}

template <typename T>
Tensor<T> GlobalAvgPool<T>::forward(const Tensor<T>& x) {
    require_rank(x.shape(), 4, "GlobalAvgPool");
    input_shape_ = x.shape();
    const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    Tensor<T> y({n, c});
    for (std::size_t p = 0; p < n * c; ++p) {
        double s = 0.0;
        for (std::size_t q = 0; q < hw; ++q) s += x[p * hw + q];
        y[p] = static_cast<T>(s / static_cast<double>(hw));
    }
    return y;
}

template <typename T>
Tensor<T> GlobalAvgPool<T>::backward(const Tensor<T>& grad_out) {
    Tensor<T> dx(input_shape_);
    const std::size_t hw = input_shape_[2] * input_shape_[3];
    for (std::size_t p = 0; p < grad_out.size(); ++p) {
        const T g = grad_out[p] / static_cast<T>(hw);
        for (std::size_t q = 0; q < hw; ++q) dx[p * hw + q] = g;
    }
    return dx;
}

template <typename T>
Tensor<T> Flatten<T>::forward(const Tensor<T>& x) {
    input_shape_ = x.shape();
    return x.reshaped({x.dim(0), x.row_size()});
}

template <typename T>
Tensor<T> Flatten<T>::backward(const Tensor<T>& grad_out) {
    return grad_out.reshaped(input_shape_);
}

template <typename T>
Tensor<T> Upsample2x<T>::forward(const Tensor<T>& x) {
    require_rank(x.shape(), 4, "Upsample2x");
    input_shape_ = x.shape();
    const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
    Tensor<T> y({x.dim(0), x.dim(1), 2 * h, 2 * w});
    for (std::size_t p = 0; p < planes; ++p) {
        for (std::size_t yy = 0; yy < 2 * h; ++yy) {
            for (std::size_t xx = 0; xx < 2 * w; ++xx) {
                y[(p * 2 * h + yy) * 2 * w + xx] = x[(p * h + yy / 2) * w + xx / 2];
            }
        }
    }
    return y;
}

template <typename T>
Tensor<T> Upsample2x<T>::backward(const Tensor<T>& grad_out) {
    Tensor<T> dx(input_shape_);
    const std::size_t planes = input_shape_[0] * input_shape_[1], h = input_shape_[2], w = input_shape_[3];
    for (std::size_t p = 0; p < planes; ++p) {
        for (std::size_t yy = 0; yy < 2 * h; ++yy) {
            for (std::size_t xx = 0; xx < 2 * w; ++xx) {
                dx[(p * h + yy / 2) * w + xx / 2] += grad_out[(p * 2 * h + yy) * 2 * w + xx];
            }
        }
    }
    return dx;
}

// ---------------------------------------------------------------------------
// Containers
// ---------------------------------------------------------------------------

template <typename T>
Module<T>& Sequential<T>::add(std::string name, ModulePtr<T> layer) {
    layer->set_training(this->training_);
    layer->set_param_grads(this->param_grads_);
    layers_.emplace_back(std::move(name), std::move(layer));
    return *layers_.back().second;
}

template <typename T>
Tensor<T> Sequential<T>::forward(const Tensor<T>& x) {
    Tensor<T> h = x;
    for (auto& [name, layer] : layers_) h = layer->forward(h);
    return h;
}

template <typename T>
Tensor<T> Sequential<T>::backward(const Tensor<T>& grad_out) {
    Tensor<T> g = grad_out;
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = it->second->backward(g);
    return g;
}

template <typename T>
void Sequential<T>::collect(const std::string& prefix, std::vector<NamedParameter<T>>& out) {
    for (auto& [name, layer] : layers_) layer->collect(this->join(prefix, name), out);
}

template <typename T>
void Sequential<T>::set_training(bool on) {
    this->training_ = on;
    for (auto& entry : layers_) entry.second->set_training(on);
}

template <typename T>
void Sequential<T>::set_param_grads(bool on) {
    this->param_grads_ = on;
    for (auto& entry : layers_) entry.second->set_param_grads(on);
}

template <typename T>
Residual<T>::Residual(std::unique_ptr<Sequential<T>> body, std::unique_ptr<Sequential<T>> shortcut, bool relu_after)
    : body_(std::move(body)), shortcut_(std::move(shortcut)), relu_after_(relu_after) {}

template <typename T>
Tensor<T> Residual<T>::forward(const Tensor<T>& x) {
    Tensor<T> y = body_->forward(x);
    const Tensor<T> s = shortcut_ ? shortcut_->forward(x) : x;
    require_same_shape(y.shape(), s.shape(), "Residual branches");
    for (std::size_t i = 0; i < y.size(); ++i) {
        y[i] += s[i];
        if (relu_after_ && y[i] < T{0}) y[i] = T{0};
    }
    output_ = y;
    return y;
}

template <typename T>
Tensor<T> Residual<T>::backward(const Tensor<T>& grad_out) {
    Tensor<T> g = grad_out;
    if (relu_after_) {
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (!(output_[i] > T{0})) g[i] = T{0};
        }
    }
    Tensor<T> dx = body_->backward(g);
    const Tensor<T> ds = shortcut_ ? shortcut_->backward(g) : g;
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += ds[i];
    return dx;
}

template <typename T>
void Residual<T>::collect(const std::string& prefix, std::vector<NamedParameter<T>>& out) {
    body_->collect(this->join(prefix, "body"), out);
    if (shortcut_) shortcut_->collect(this->join(prefix, "shortcut"), out);
}

template <typename T>
void Residual<T>::set_training(bool on) {
    this->training_ = on;
    body_->set_training(on);
    if (shortcut_) shortcut_->set_training(on);
}

template <typename T>
void Residual<T>::set_param_grads(bool on) {
    this->param_grads_ = on;
    body_->set_param_grads(on);
    if (shortcut_) shortcut_->set_param_grads(on);
}

#define TTP_INSTANTIATE(T)             \
    template class Conv2d<T>;          \
    template class Linear<T>;          \
    template class BatchNorm2d<T>;     \
    template class InstanceNorm2d<T>;  \
    template class ReLU<T>;            \
    template class Tanh<T>;            \
    template class Tanh01<T>;          \
    template class AvgPool2d<T>;       \
    template class MaxPool2d<T>;       \
    template class GlobalAvgPool<T>;   \
    template class Flatten<T>;         \
    template class Upsample2x<T>;      \
    template class Sequential<T>;      \
    template class Residual<T>;

TTP_INSTANTIATE(float)
TTP_INSTANTIATE(double)

#undef TTP_INSTANTIATE

}  // namespace ttp::nn
