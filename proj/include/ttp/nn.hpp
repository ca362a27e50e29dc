#pragma once

#include "ttp/rng.hpp"
#include "ttp/tensor.hpp"

#include <memory>
#include <string>
#include <utility>
#include <vector>

namespace ttp::nn {

// A learnable tensor and its gradient accumulator. Buffers (e.g. batch-norm
// running statistics) are persisted but never updated by an optimizer.
template <typename T>
struct Parameter {
    Tensor<T> value;
    Tensor<T> grad;
    bool trainable = true;

    Parameter() = default;
    Parameter(Tensor<T> v, bool is_trainable = true)
        : value(std::move(v)), grad(value.shape()), trainable(is_trainable) {}

    void zero_grad() { grad.fill(T{0}); }
};

template <typename T>
struct NamedParameter {
    std::string name;
    Parameter<T>* param;
};

// Layer with an explicit backward pass. forward() caches whatever backward()
// needs; backward() must follow the forward() it differentiates. Parameter
// gradients accumulate (call zero_grad between steps).
template <typename T>
class Module {
public:
    virtual ~Module() = default;

    virtual Tensor<T> forward(const Tensor<T>& x) = 0;
    virtual Tensor<T> backward(const Tensor<T>& grad_out) = 0;

    virtual void collect(const std::string& prefix, std::vector<NamedParameter<T>>& out) {
        (void)prefix;
        (void)out;
    }
    virtual void set_training(bool on) { training_ = on; }
    // When off, backward() skips parameter-gradient work and only propagates to the input.
    virtual void set_param_grads(bool on) { param_grads_ = on; }

    bool training() const { return training_; }
    bool param_grads() const { return param_grads_; }

    std::vector<NamedParameter<T>> named_parameters(const std::string& prefix = "") {
        std::vector<NamedParameter<T>> out;
        collect(prefix, out);
        return out;
    }

protected:
    static std::string join(const std::string& prefix, const std::string& name) {
        return prefix.empty() ? name : prefix + "." + name;
    }

    bool training_ = false;
    bool param_grads_ = true;
};

template <typename T>
using ModulePtr = std::unique_ptr<Module<T>>;

template <typename T>
class Conv2d final : public Module<T> {
public:
    Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel, std::size_t stride,
           std::size_t padding, bool bias, Rng& rng);

    Tensor<T> forward(const Tensor<T>& x) override;
    Tensor<T> backward(const Tensor<T>& grad_out) override;
    void collect(const std::string& prefix, std::vector<NamedParameter<T>>& out) override;

    Parameter<T>& weight() { return weight_; }
    Parameter<T>& bias() { return bias_; }

private:
    std::size_t in_, out_, k_, stride_, pad_;
    bool has_bias_;
    Parameter<T> weight_;  // out x in x k x k
    Parameter<T> bias_;
    Tensor<T> input_;
};

template <typename T>
class Linear final : public Module<T> {
public:
    Linear(std::size_t in_features, std::size_t out_features, Rng& rng);

    Tensor<T> forward(const Tensor<T>& x) override;
    Tensor<T> backward(const Tensor<T>& grad_out) override;
    void collect(const std::string& prefix, std::vector<NamedParameter<T>>& out) override;

private:
    std::size_t in_, out_;
    Parameter<T> weight_;  // out x in
    Parameter<T> bias_;
    Tensor<T> input_;
};

// Batch statistics in training mode, running statistics otherwise.
template <typename T>
class BatchNorm2d final : public Module<T> {
public:
    explicit BatchNorm2d(std::size_t channels, T momentum = T(0.1), T eps = T(1e-5));

    Tensor<T> forward(const Tensor<T>& x) override;
    Tensor<T> backward(const Tensor<T>& grad_out) override;
    void collect(const std::string& prefix, std::vector<NamedParameter<T>>& out) override;

private:
    std::size_t channels_;
    T momentum_, eps_;
    Parameter<T> gamma_, beta_, running_mean_, running_var_;
    Tensor<T> xhat_;
    std::vector<T> inv_std_;
    bool cached_training_ = false;
};

// Per-sample, per-channel normalization with affine parameters.
template <typename T>
class InstanceNorm2d final : public Module<T> {
public:
    explicit InstanceNorm2d(std::size_t channels, T eps = T(1e-5));

    Tensor<T> forward(const Tensor<T>& x) override;
    Tensor<T> backward(const Tensor<T>& grad_out) override;
    void collect(const std::string& prefix, std::vector<NamedParameter<T>>& out) override;

private:
    std::size_t channels_;
    T eps_;
    Parameter<T> gamma_, beta_;
    Tensor<T> xhat_;
    std::vector<T> inv_std_;
};

template <typename T>
class ReLU final : public Module<T> {
public:
    Tensor<T> forward(const Tensor<T>& x) override;
    Tensor<T> backward(const Tensor<T>& grad_out) override;

private:
    Tensor<T> output_;
};

template <typename T>
class Tanh final : public Module<T> {
public:
    Tensor<T> forward(const Tensor<T>& x) override;
    Tensor<T> backward(const Tensor<T>& grad_out) override;

private:
    Tensor<T> output_;
};

// y = (tanh(x) + 1) / 2, mapping any real input into [0, 1].
template <typename T>
class Tanh01 final : public Module<T> {
public:
    Tensor<T> forward(const Tensor<T>& x) override;
    Tensor<T> backward(const Tensor<T>& grad_out) override;

private:
    Tensor<T> tanh_;
};

template <typename T>
class MaxPool2d final : public Module<T> {
public:
    explicit MaxPool2d(std::size_t window) : window_(window) {}

    Tensor<T> forward(const Tensor<T>& x) override;
    Tensor<T> backward(const Tensor<T>& grad_out) override;

private:
    std::size_t window_;
    Shape input_shape_;
    std::vector<std::size_t> argmax_;
};

// Non-overlapping window x window mean.
template <typename T>
class AvgPool2d final : public Module<T> {
public:
    explicit AvgPool2d(std::size_t window) : window_(window) {}

    Tensor<T> forward(const Tensor<T>& x) override;
    Tensor<T> backward(const Tensor<T>& grad_out) override;

private:
    std::size_t window_;
    Shape input_shape_;
};

template <typename T>
class GlobalAvgPool final : public Module<T> {
public:
    Tensor<T> forward(const Tensor<T>& x) override;
    Tensor<T> backward(const Tensor<T>& grad_out) override;

private:
    Shape input_shape_;
};

template <typename T>
class Flatten final : public Module<T> {
public:
    Tensor<T> forward(const Tensor<T>& x) override;
    Tensor<T> backward(const Tensor<T>& grad_out) override;

private:
    Shape input_shape_;
};

// Nearest-neighbour 2x upsampling.
template <typename T>
class Upsample2x final : public Module<T> {
public:
    Tensor<T> forward(const Tensor<T>& x) override;
    Tensor<T> backward(const Tensor<T>& grad_out) override;

private:
    Shape input_shape_;
};

template <typename T>
class Sequential : public Module<T> {
public:
    Sequential() = default;

    Module<T>& add(std::string name, ModulePtr<T> layer);

    template <typename L, typename... Args>
    L& emplace(std::string name, Args&&... args) {
        auto layer = std::make_unique<L>(std::forward<Args>(args)...);
        L& ref = *layer;
        add(std::move(name), std::move(layer));
        return ref;
    }

    Tensor<T> forward(const Tensor<T>& x) override;
    Tensor<T> backward(const Tensor<T>& grad_out) override;
    void collect(const std::string& prefix, std::vector<NamedParameter<T>>& out) override;
    void set_training(bool on) override;
    void set_param_grads(bool on) override;

    std::size_t size() const { return layers_.size(); }
    Module<T>& at(std::size_t i) { return *layers_[i].second; }

private:
    std::vector<std::pair<std::string, ModulePtr<T>>> layers_;
};

// y = body(x) + shortcut(x), optionally followed by ReLU. An empty shortcut is
// the identity.
template <typename T>
class Residual final : public Module<T> {
public:
    Residual(std::unique_ptr<Sequential<T>> body, std::unique_ptr<Sequential<T>> shortcut, bool relu_after);

    Tensor<T> forward(const Tensor<T>& x) override;
    Tensor<T> backward(const Tensor<T>& grad_out) override;
    void collect(const std::string& prefix, std::vector<NamedParameter<T>>& out) override;
    void set_training(bool on) override;
    void set_param_grads(bool on) override;

private:
    std::unique_ptr<Sequential<T>> body_;
    std::unique_ptr<Sequential<T>> shortcut_;
    bool relu_after_;
    Tensor<T> output_;
};

}  // namespace ttp::nn
