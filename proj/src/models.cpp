#include "ttp/models.hpp"

#include <zlib.h>

namespace ttp {

using nn::Conv2d;
using nn::Sequential;

namespace {

template <typename T>
void conv_norm_relu(Sequential<T>& net, const std::string& name, std::size_t in, std::size_t out, std::size_t stride,
                    Rng& rng) {
    net.template emplace<Conv2d<T>>(name + ".conv", in, out, 3, stride, 1, true, rng);
    net.template emplace<nn::InstanceNorm2d<T>>(name + ".norm", out);
    net.template emplace<nn::ReLU<T>>(name + ".relu");
}

template <typename T>
std::unique_ptr<Sequential<T>> build_generator(const GeneratorConfig& cfg, Rng& rng) {
    auto net = std::make_unique<Sequential<T>>();
    const std::size_t c = cfg.channels, w = cfg.width;
    if (cfg.arch == GeneratorArch::Toy) {
        net->template emplace<Conv2d<T>>("conv1", c, w, 3, 1, 1, true, rng);
        net->template emplace<nn::Tanh<T>>("act1");
        net->template emplace<Conv2d<T>>("conv2", w, c, 3, 1, 1, true, rng);
        net->template emplace<nn::Tanh01<T>>("out");
        return net;
    }
    conv_norm_relu(*net, "stem", c, w, 1, rng);
    conv_norm_relu(*net, "down1", w, 2 * w, 2, rng);
    conv_norm_relu(*net, "down2", 2 * w, 4 * w, 2, rng);
    for (std::size_t i = 0; i < cfg.res_blocks; ++i) {
        auto body = std::make_unique<Sequential<T>>();
        body->template emplace<Conv2d<T>>("conv1", 4 * w, 4 * w, 3, 1, 1, true, rng);
        body->template emplace<nn::InstanceNorm2d<T>>("norm1", 4 * w);
        body->template emplace<nn::ReLU<T>>("relu");
        body->template emplace<Conv2d<T>>("conv2", 4 * w, 4 * w, 3, 1, 1, true, rng);
        body->template emplace<nn::InstanceNorm2d<T>>("norm2", 4 * w);
        net->add("res" + std::to_string(i), std::make_unique<nn::Residual<T>>(std::move(body), nullptr, false));
    }
    net->template emplace<nn::Upsample2x<T>>("up1.upsample");
    conv_norm_relu(*net, "up1", 4 * w, 2 * w, 1, rng);
    net->template emplace<nn::Upsample2x<T>>("up2.upsample");
    conv_norm_relu(*net, "up2", 2 * w, w, 1, rng);
    net->template emplace<Conv2d<T>>("head.conv", w, c, 3, 1, 1, true, rng);
    net->template emplace<nn::Tanh01<T>>("head.out");
    return net;
}

template <typename T>
void conv_bn_relu(Sequential<T>& net, const std::string& name, std::size_t in, std::size_t out, std::size_t stride,
                  Rng& rng) {
    net.template emplace<Conv2d<T>>(name + ".conv", in, out, 3, stride, 1, false, rng);
    net.template emplace<nn::BatchNorm2d<T>>(name + ".bn", out);
    net.template emplace<nn::ReLU<T>>(name + ".relu");
}

template <typename T>
std::unique_ptr<nn::Residual<T>> basic_block(std::size_t in, std::size_t out, std::size_t stride, Rng& rng) {
    auto body = std::make_unique<Sequential<T>>();
    body->template emplace<Conv2d<T>>("conv1", in, out, 3, stride, 1, false, rng);
    body->template emplace<nn::BatchNorm2d<T>>("bn1", out);
    body->template emplace<nn::ReLU<T>>("relu");
    body->template emplace<Conv2d<T>>("conv2", out, out, 3, 1, 1, false, rng);
    body->template emplace<nn::BatchNorm2d<T>>("bn2", out);
    std::unique_ptr<Sequential<T>> shortcut;
    if (stride != 1 || in != out) {
        shortcut = std::make_unique<Sequential<T>>();
        shortcut->template emplace<Conv2d<T>>("conv", in, out, 1, stride, 0, false, rng);
        shortcut->template emplace<nn::BatchNorm2d<T>>("bn", out);
    }
    return std::make_unique<nn::Residual<T>>(std::move(body), std::move(shortcut), true);
}

template <typename T>
std::unique_ptr<Sequential<T>> build_discriminator(const DiscConfig& cfg, Rng& rng) {
    auto net = std::make_unique<Sequential<T>>();
    const std::size_t c = cfg.channels, w = cfg.effective_width();
    switch (cfg.arch) {
        case DiscArch::ConvNetA: {
            if (cfg.height % 4 || cfg.width % 4) throw ShapeMismatch("convnet-a needs input sides divisible by 4");
            conv_bn_relu(*net, "conv1", c, w, 1, rng);
            conv_bn_relu(*net, "conv2", w, w, 1, rng);
            net->template emplace<nn::MaxPool2d<T>>("pool1", 2);
            conv_bn_relu(*net, "conv3", w, 2 * w, 1, rng);
            conv_bn_relu(*net, "conv4", 2 * w, 2 * w, 1, rng);
            net->template emplace<nn::MaxPool2d<T>>("pool2", 2);
            net->template emplace<nn::Flatten<T>>("flatten");
            net->template emplace<nn::Linear<T>>("fc1", 2 * w * (cfg.height / 4) * (cfg.width / 4), 8 * w, rng);
            net->template emplace<nn::ReLU<T>>("fc1.relu");
            net->template emplace<nn::Linear<T>>("fc2", 8 * w, cfg.num_classes, rng);
            break;
        }
        case DiscArch::ResNetS: {
            conv_bn_relu(*net, "stem", c, w, 1, rng);
            std::size_t in = w;
            for (std::size_t stage = 0; stage < 3; ++stage) {
                const std::size_t out = w << stage;
                for (std::size_t b = 0; b < cfg.blocks_per_stage; ++b) {
                    const std::size_t stride = (stage > 0 && b == 0) ? 2 : 1;
                    net->add("stage" + std::to_string(stage + 1) + ".block" + std::to_string(b + 1),
                             basic_block<T>(in, out, stride, rng));
                    in = out;
                }
            }
            net->template emplace<nn::GlobalAvgPool<T>>("pool");
            net->template emplace<nn::Linear<T>>("fc", in, cfg.num_classes, rng);
            break;
        }
        case DiscArch::Toy: {
            if (cfg.height % 2 || cfg.width % 2) throw ShapeMismatch("toy discriminator needs even input sides");
            net->template emplace<Conv2d<T>>("conv1", c, w, 3, 1, 1, true, rng);
            net->template emplace<nn::Tanh<T>>("act1");
            net->template emplace<nn::AvgPool2d<T>>("pool1", 2);
            net->template emplace<nn::Flatten<T>>("flatten");
            net->template emplace<nn::Linear<T>>("fc", w * (cfg.height / 2) * (cfg.width / 2), cfg.num_classes, rng);
            break;
        }
    }
    return net;
}

}  // namespace

// ---------------------------------------------------------------------------

template <typename T>
Generator<T>::Generator(GeneratorConfig config, std::uint64_t seed) : config_(config) {
    Rng rng(derive_seed(seed, "generator-init"));
    net_ = build_generator<T>(config_, rng);
    net_->set_training(true);
}

template <typename T>
Tensor<T> Generator<T>::forward(const Tensor<T>& x) {
    if (x.rank() != 4 || x.dim(1) != config_.channels) {
        throw ShapeMismatch("generator expects N x " + std::to_string(config_.channels) + " x H x W, got " +
                            shape_string(x.shape()));
    }
    if (config_.arch == GeneratorArch::ResNet && (x.dim(2) % 4 || x.dim(3) % 4)) {
        throw ShapeMismatch("generator input sides must be divisible by 4, got " + shape_string(x.shape()));
    }
    return net_->forward(x);
}

template <typename T>
Tensor<T> Generator<T>::backward(const Tensor<T>& grad_out) {
    return net_->backward(grad_out);
}

template <typename T>
std::vector<nn::NamedParameter<T>> Generator<T>::parameters() {
    return net_->named_parameters(tag());
}

template <typename T>
void Generator<T>::zero_grad() {
    for (auto& p : parameters()) p.param->zero_grad();
}

template <typename T>
std::size_t Generator<T>::parameter_count() {
    std::size_t n = 0;
    for (auto& p : parameters()) n += p.param->value.size();
    return n;
}

template <typename T>
std::string Generator<T>::tag() const {
    return config_.arch == GeneratorArch::Toy ? "gen-toy" : "gen-resnet";
}

// ---------------------------------------------------------------------------

DiscArch parse_disc_arch(std::string_view name) {
    if (name == "convnet-a") return DiscArch::ConvNetA;
    if (name == "resnet-s") return DiscArch::ResNetS;
    if (name == "toy") return DiscArch::Toy;
    throw InvalidArgument("unknown discriminator architecture '" + std::string(name) + "'");
}

std::string to_string(DiscArch arch) {
    switch (arch) {
        case DiscArch::ConvNetA: return "convnet-a";
        case DiscArch::ResNetS: return "resnet-s";
        case DiscArch::Toy: return "toy";
    }
    return "unknown";
}

std::size_t DiscConfig::effective_width() const {
    if (base_width) return base_width;
    switch (arch) {
        case DiscArch::ConvNetA: return 32;
        case DiscArch::ResNetS: return 16;
        case DiscArch::Toy: return 4;
    }
    return 16;
}

template <typename T>
Discriminator<T>::Discriminator(DiscConfig config, std::uint64_t seed) : config_(config) {
    Rng rng(derive_seed(seed, "discriminator-init"));
    net_ = build_discriminator<T>(config_, rng);
    net_->set_training(false);
}

template <typename T>
Tensor<T> Discriminator<T>::features(const Tensor<T>& x) {
    if (x.rank() != 4 || x.dim(1) != config_.channels) {
        throw ShapeMismatch(tag() + " expects N x " + std::to_string(config_.channels) + " x H x W, got " +
                            shape_string(x.shape()));
    }
    return net_->forward(x);
}

template <typename T>
Tensor<T> Discriminator<T>::backward(const Tensor<T>& grad_features) {
    return net_->backward(grad_features);
}

template <typename T>
void Discriminator<T>::set_training(bool on) {
    if (frozen_ && on) throw InvalidArgument("cannot train a frozen discriminator");
    net_->set_training(on);
}

template <typename T>
void Discriminator<T>::freeze() {
    net_->set_training(false);
    net_->set_param_grads(false);
    frozen_ = true;
}

template <typename T>
std::vector<nn::NamedParameter<T>> Discriminator<T>::parameters() {
    return net_->named_parameters(tag());
}

template <typename T>
void Discriminator<T>::zero_grad() {
    for (auto& p : parameters()) p.param->zero_grad();
}

template <typename T>
std::uint32_t Discriminator<T>::digest() {
    uLong crc = crc32(0L, Z_NULL, 0);
    for (auto& p : parameters()) {
        crc = crc32(crc, reinterpret_cast<const Bytef*>(p.name.data()), static_cast<uInt>(p.name.size()));
        const Tensor<float> v = p.param->value.template cast<float>();
        crc = crc32(crc, reinterpret_cast<const Bytef*>(v.data()), static_cast<uInt>(v.size() * sizeof(float)));
    }
    return static_cast<std::uint32_t>(crc);
}

template <typename T>
std::vector<Tensor<T>> DiscriminatorEnsemble<T>::features(const Tensor<T>& x) {
    std::vector<Tensor<T>> out;
    out.reserve(members.size());
    for (auto& m : members) out.push_back(m.features(x));
    return out;
}

template class Generator<float>;
template class Generator<double>;
template class Discriminator<float>;
template class Discriminator<double>;
template struct DiscriminatorEnsemble<float>;
template struct DiscriminatorEnsemble<double>;

}  // namespace ttp
