#pragma once

// A generator run small enough for unit tests: 8x8 synthetic images, a frozen
// toy surrogate and a narrow resnet generator.

#include "fixtures.hpp"

#include "ttp/train.hpp"

#include <memory>

namespace ttp::testing {

inline std::shared_ptr<const LabeledImageSet> tiny_set(std::uint64_t seed = 5) {
    return std::make_shared<const LabeledImageSet>(synthetic_set(64, 4, 8, seed));
}

inline DiscConfig tiny_disc_config(DiscArch arch = DiscArch::Toy) {
    DiscConfig c;
    c.arch = arch;
    c.height = c.width = 8;
    c.num_classes = 4;
    c.base_width = 4;
    c.blocks_per_stage = 1;
    return c;
}

inline DiscriminatorEnsemble<float> tiny_surrogate(std::uint64_t seed = 11, DiscArch arch = DiscArch::Toy) {
    DiscriminatorEnsemble<float> e;
    e.members.emplace_back(tiny_disc_config(arch), seed);
    e.members.back().freeze();
    return e;
}

inline TrainConfig tiny_train_config(std::uint64_t seed, std::size_t steps) {
    TrainConfig c;
    c.seed = seed;
    c.batch_size = 4;
    c.target_class = 1;
    c.epochs = 1;
    c.max_steps = steps;
    c.lr = 1e-3;
    c.generator = GeneratorConfig{GeneratorArch::ResNet, 3, 4, 1};
    return c;
}

inline GeneratorTrainResult tiny_run(const TrainConfig& config, DiscriminatorEnsemble<float>& discs,
                                     std::shared_ptr<const LabeledImageSet> set = tiny_set(),
                                     const TrainHooks& hooks = {}) {
    auto streams = make_streams(std::move(set), config.target_class, config.batch_size, config.seed);
    return train_generator(config, discs, streams.source, streams.target, hooks);
}

}  // namespace ttp::testing
