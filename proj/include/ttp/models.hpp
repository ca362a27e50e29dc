#pragma once

#include "ttp/nn.hpp"
#include "ttp/tensor.hpp"

#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

namespace ttp {

// ---------------------------------------------------------------------------
// Generator: image-to-image network producing the unbounded adversary.
//
//   resnet: conv -> 2 x (stride-2 conv) -> res_blocks x residual -> 2 x (upsample
//           + conv) -> conv to C channels -> (tanh + 1) / 2
//   toy:    conv -> tanh -> conv -> (tanh + 1) / 2   (smooth, for gradient checks)
//
// All normalization is per-sample (instance norm), so outputs never couple
// samples within a batch.
// ---------------------------------------------------------------------------

enum class GeneratorArch { ResNet, Toy };

struct GeneratorConfig {
    GeneratorArch arch = GeneratorArch::ResNet;
    std::size_t channels = 3;
    std::size_t width = 16;
    std::size_t res_blocks = 4;
};

template <typename T>
class Generator {
public:
    Generator(GeneratorConfig config, std::uint64_t seed);

    // Throws ShapeMismatch unless x is N x channels x H x W (H, W divisible by 4 for resnet).
    Tensor<T> forward(const Tensor<T>& x);
    Tensor<T> backward(const Tensor<T>& grad_out);

    std::vector<nn::NamedParameter<T>> parameters();
    void zero_grad();
    std::size_t parameter_count();

    const GeneratorConfig& config() const { return config_; }
    // Weight-file namespace, e.g. "gen-resnet".
    std::string tag() const;

private:
    GeneratorConfig config_;
    std::unique_ptr<nn::Sequential<T>> net_;
};

// ---------------------------------------------------------------------------
// Discriminator family. Outputs raw (pre-softmax) N x n features.
//
//   convnet-a: 4 conv (BN, ReLU) with two 2x2 max-pools, then fc -> ReLU -> fc
//   resnet-s:  stem conv + three residual stages (widths w, 2w, 4w; stride 1, 2, 2),
//              global average pool, fc
//   toy:       conv -> tanh -> 2x2 average pool -> fc (smooth, no normalization)
// ---------------------------------------------------------------------------

enum class DiscArch { ConvNetA, ResNetS, Toy };

DiscArch parse_disc_arch(std::string_view name);
std::string to_string(DiscArch arch);

struct DiscConfig {
    DiscArch arch = DiscArch::ConvNetA;
    std::size_t channels = 3;
    std::size_t height = 32;  // only convnet-a and toy depend on the input size
    std::size_t width = 32;
    std::size_t num_classes = 10;
    std::size_t base_width = 0;        // 0 selects the per-arch default (32, 16, 4)
    std::size_t blocks_per_stage = 2;  // resnet-s only

    std::size_t effective_width() const;
};

template <typename T>
class Discriminator {
public:
    Discriminator(DiscConfig config, std::uint64_t seed);

    Tensor<T> features(const Tensor<T>& x);
    // Gradient w.r.t. the input of the most recent features() call.
    Tensor<T> backward(const Tensor<T>& grad_features);

    // Batch-norm layers use batch statistics while training, running statistics otherwise.
    void set_training(bool on);
    // Inference mode, no parameter gradients; weights stay untouched from here on.
    void freeze();
    bool frozen() const { return frozen_; }

    std::vector<nn::NamedParameter<T>> parameters();
    void zero_grad();

    // CRC32 over every persisted tensor (names and float32 bytes).
    std::uint32_t digest();

    const DiscConfig& config() const { return config_; }
    std::string tag() const { return to_string(config_.arch); }
    std::size_t output_dim() const { return config_.num_classes; }

private:
    DiscConfig config_;
    std::unique_ptr<nn::Sequential<T>> net_;
    bool frozen_ = false;
};

// Members share one input shape; losses over an ensemble are the arithmetic
// mean of per-member losses.
template <typename T>
struct DiscriminatorEnsemble {
    std::vector<Discriminator<T>> members;

    std::vector<Tensor<T>> features(const Tensor<T>& x);
    std::size_t size() const { return members.size(); }
};

// Converts a model between precisions by copying every named tensor.
template <typename To, typename From>
void copy_parameters(std::vector<nn::NamedParameter<From>> from, std::vector<nn::NamedParameter<To>> to) {
    if (from.size() != to.size()) throw ShapeMismatch("parameter count mismatch in copy_parameters");
    for (std::size_t i = 0; i < from.size(); ++i) {
        if (from[i].name != to[i].name) throw ShapeMismatch("parameter name mismatch: " + from[i].name + " vs " + to[i].name);
        to[i].param->value = from[i].param->value.template cast<To>();
    }
}

}  // namespace ttp
