#include "fixtures.hpp"
#include "frozen_values.hpp"
#include "tiny_setup.hpp"

#include "ttp/error.hpp"
#include "ttp/rng.hpp"
#include "ttp/train.hpp"

#include <doctest.h>

using namespace ttp;
using namespace ttp::testing;

namespace {

std::vector<Tensor<float>> snapshot(Generator<float>& g) {
    std::vector<Tensor<float>> out;
    for (auto& p : g.parameters()) out.push_back(p.param->value);
    return out;
}

}  // namespace

TEST_SUITE("train") {

TEST_CASE("first Adam step moves by lr against the gradient sign") {
    Tensor<double> p({1}, 0.0);
    const Tensor<double> g({1}, 1.0);
    AdamState<double> state;
    Tensor<double>* ps[] = {&p};
    const Tensor<double>* gs[] = {&g};
    adam_step<double>(ps, gs, state, AdamHyper{0.1, 0.9, 0.999, 1e-8});
    CHECK(p[0] == doctest::Approx(oracle::kAdamFirstStep).epsilon(1e-15));
    CHECK(state.step == 1);
}

TEST_CASE("zero gradient leaves parameters in place") {
    Tensor<double> p({3}, 0.25);
    const Tensor<double> g({3}, 0.0);
    AdamState<double> state;
    Tensor<double>* ps[] = {&p};
    const Tensor<double>* gs[] = {&g};
    for (int i = 0; i < 5; ++i) adam_step<double>(ps, gs, state, AdamHyper{});
    for (double v : p.values()) CHECK(v == 0.25);
}

TEST_CASE("Adam rejects mismatched gradient shapes") {
    Tensor<double> p({3});
    const Tensor<double> g({4});
    AdamState<double> state;
    Tensor<double>* ps[] = {&p};
    const Tensor<double>* gs[] = {&g};
    CHECK_THROWS_AS(adam_step<double>(ps, gs, state, AdamHyper{}), ShapeMismatch);
}

TEST_CASE("zero steps leave the generator at its initialization") {
    auto discs = tiny_surrogate();
    const auto config = tiny_train_config(3, 0);
    auto result = tiny_run(config, discs);
    Generator<float> fresh(config.generator, derive_seed(config.seed, "generator"));
    CHECK(result.telemetry.empty());
    CHECK(snapshot(result.generator) == snapshot(fresh));
}

TEST_CASE("zero learning rate leaves the generator at its initialization") {
    auto discs = tiny_surrogate();
    auto config = tiny_train_config(3, 2);
    config.lr = 0.0;
    auto result = tiny_run(config, discs);
    Generator<float> fresh(config.generator, derive_seed(config.seed, "generator"));
    CHECK(result.telemetry.size() == 2);
    CHECK(snapshot(result.generator) == snapshot(fresh));
}

TEST_CASE("a training run changes the generator and keeps the surrogate") {
    auto discs = tiny_surrogate();
    const auto before = discs.members[0].digest();
    const auto config = tiny_train_config(4, 3);
    auto result = tiny_run(config, discs);
    Generator<float> fresh(config.generator, derive_seed(config.seed, "generator"));
    CHECK(snapshot(result.generator) != snapshot(fresh));
    CHECK(discs.members[0].digest() == before);
}

TEST_CASE("same seed gives identical telemetry") {
    auto d1 = tiny_surrogate();
    auto d2 = tiny_surrogate();
    const auto a = tiny_run(tiny_train_config(9, 4), d1);
    const auto b = tiny_run(tiny_train_config(9, 4), d2);
    REQUIRE(a.telemetry.size() == 4);
    for (std::size_t i = 0; i < 4; ++i) CHECK(telemetry_line(a.telemetry[i]) == telemetry_line(b.telemetry[i]));
}

TEST_CASE("loss parts add up in every telemetry record") {
    auto discs = tiny_surrogate();
    const auto r = tiny_run(tiny_train_config(2, 3), discs);
    for (const auto& rec : r.telemetry) {
        CHECK(rec.loss.total == rec.loss.l_dist + rec.loss.l_aug + rec.loss.l_sim);
        CHECK(rec.loss.l_dist >= 0.0);
        CHECK(rec.loss.l_sim >= 0.0);
    }
}

TEST_CASE("one augmentation call per step, none when the branch is off") {
    auto discs = tiny_surrogate();
    auto before = augment_call_count();
    tiny_run(tiny_train_config(2, 3), discs);
    CHECK(augment_call_count() - before == 3);

    auto config = tiny_train_config(2, 3);
    config.loss = LossSwitches{Objective::Ttp, false, false};
    before = augment_call_count();
    const auto r = tiny_run(config, discs);
    CHECK(augment_call_count() == before);
    for (const auto& rec : r.telemetry) {
        CHECK(rec.loss.l_aug == 0.0);
        CHECK(rec.loss.l_sim == 0.0);
    }
}

TEST_CASE("cross-entropy objective trains") {
    auto discs = tiny_surrogate();
    auto config = tiny_train_config(2, 2);
    config.loss.objective = Objective::CrossEntropy;
    const auto r = tiny_run(config, discs);
    CHECK(r.telemetry.size() == 2);
    CHECK(r.telemetry[0].loss.l_dist > 0.0);
}

TEST_CASE("an unfrozen surrogate is rejected") {
    DiscriminatorEnsemble<float> discs;
    discs.members.emplace_back(tiny_disc_config(), 1);
    CHECK_THROWS_AS(tiny_run(tiny_train_config(1, 1), discs), InvalidArgument);
}

TEST_CASE("streams for another target are rejected") {
    auto discs = tiny_surrogate();
    auto config = tiny_train_config(1, 1);
    auto streams = make_streams(tiny_set(), 2, config.batch_size, 0);
    CHECK_THROWS_AS(train_generator(config, discs, streams.source, streams.target), InvalidArgument);
}

TEST_CASE("ensemble loss is the member mean") {
    auto one = tiny_surrogate(11);
    auto two = tiny_surrogate(12);
    DiscriminatorEnsemble<float> both = tiny_surrogate(11);
    both.members.push_back(std::move(tiny_surrogate(12).members[0]));
    const auto adv = random_tensor({8, 3, 8, 8}, 1);
    const auto tgt = random_tensor({4, 3, 8, 8}, 2);
    const LossSwitches sw;
    const auto a = ensemble_objective(one, adv, tgt, 4, true, 1, sw);
    const auto b = ensemble_objective(two, adv, tgt, 4, true, 1, sw);
    const auto m = ensemble_objective(both, adv, tgt, 4, true, 1, sw);
    CHECK(m.loss.total == doctest::Approx((a.loss.total + b.loss.total) / 2).epsilon(1e-6));
    for (std::size_t i = 0; i < m.grad_adv.size(); ++i) {
        CHECK(m.grad_adv[i] == doctest::Approx((a.grad_adv[i] + b.grad_adv[i]) / 2).epsilon(1e-4));
    }
}

TEST_CASE("epoch hook and checkpoints") {
    TempDir dir;
    auto discs = tiny_surrogate();
    auto config = tiny_train_config(6, 4);
    config.epochs = 2;
    config.steps_per_epoch = 2;
    config.checkpoint_dir = dir.path();
    config.surrogate_tag = "toy";
    std::vector<std::size_t> epochs;
    TrainHooks hooks;
    hooks.on_epoch = [&](std::size_t e, Generator<float>&) { epochs.push_back(e); };
    const auto r = tiny_run(config, discs, tiny_set(), hooks);
    CHECK(epochs == std::vector<std::size_t>{1, 2});
    CHECK(r.epoch_mean_total.size() == 2);
    CHECK(std::filesystem::exists(dir.path() / "gen_t1_eps16_toy_e2.ttpw"));
}

TEST_CASE("checkpoint names round-trip") {
    const CheckpointTag tag{7, 16.0, "convnet-a+resnet-s", 12};
    const std::string name = checkpoint_name(tag);
    CHECK(name == "gen_t7_eps16_convnet-a+resnet-s_e12.ttpw");
    const auto back = parse_checkpoint_name(name);
    REQUIRE(back.has_value());
    CHECK(back->target_class == 7);
    CHECK(back->eps255 == 16.0);
    CHECK(back->surrogate == "convnet-a+resnet-s");
    CHECK(back->epoch == 12);
    CHECK_FALSE(parse_checkpoint_name("weights.ttpw").has_value());
}

TEST_CASE("invalid training settings") {
    auto config = tiny_train_config(1, 1);
    config.batch_size = 0;
    CHECK_THROWS_AS(config.validate(), InvalidArgument);
    config = tiny_train_config(1, 1);
    config.steps_per_epoch = 0;
    CHECK_THROWS_AS(config.validate(), InvalidArgument);
}

TEST_CASE("discriminator training needs two samples") {
    const auto one = synthetic_set(1, 1, 8, 1);
    DiscTrainConfig c;
    c.epochs = 1;
    CHECK_THROWS_AS(train_discriminator(one, nullptr, tiny_disc_config(), c), InsufficientSamples);
}

TEST_CASE("discriminator training learns a separable set") {
    const auto set = synthetic_set(64, 2, 8, 3);
    LabeledImageSet shifted = set;
    for (std::size_t i = 0; i < set.size(); ++i) {
        const float bias = set.labels[i] == 0 ? -0.3f : 0.3f;
        for (std::size_t j = 0; j < 3 * 64; ++j) {
            float& v = shifted.images[i * 3 * 64 + j];
            v = std::clamp(v * 0.4f + 0.5f + bias, 0.0f, 1.0f);
        }
    }
    auto arch = tiny_disc_config(DiscArch::ConvNetA);
    arch.num_classes = 2;
    DiscTrainConfig c;
    c.epochs = 4;
    c.batch_size = 16;
    c.augment = false;
    std::size_t calls = 0;
    auto r = train_discriminator(shifted, nullptr, arch, c, [&](const DiscEpochRecord&) { ++calls; });
    CHECK(calls == 4);
    CHECK(r.test_accuracy >= 0.9);
    CHECK(accuracy(r.model, shifted) == doctest::Approx(r.test_accuracy));
}

TEST_CASE("missing convergence is reported") {
    const auto noise = synthetic_set(32, 4, 8, 9);
    DiscTrainConfig c;
    c.epochs = 1;
    c.min_accuracy = 1.01;
    CHECK_THROWS_AS(train_discriminator(noise, nullptr, tiny_disc_config(), c), DidNotConverge);
}

}  // TEST_SUITE
