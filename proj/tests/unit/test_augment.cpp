#include "fixtures.hpp"

#include "ttp/augment.hpp"

#include <doctest.h>

using namespace ttp;

TEST_SUITE("augment") {

TEST_CASE("identity parameters reproduce the input exactly") {
    auto batch = ttp::testing::random_tensor({2, 3, 16, 16}, 1);
    const auto original = batch;
    apply_augment(batch, 0, AugmentParams{});
    apply_augment(batch, 1, AugmentParams{});
    CHECK(batch == original);
}

TEST_CASE("flip is an involution") {
    auto batch = ttp::testing::random_tensor({1, 3, 8, 8}, 2);
    const auto original = batch;
    AugmentParams p;
    p.flip = true;
    apply_augment(batch, 0, p);
    CHECK(batch.at(0, 1, 3, 0) == original.at(0, 1, 3, 7));
    CHECK_FALSE(batch == original);
    apply_augment(batch, 0, p);
    CHECK(batch == original);
}

TEST_CASE("grayscale leaves a gray image unchanged") {
    Tensor<float> batch({1, 3, 6, 6}, 0.4f);
    const auto original = batch;
    AugmentParams p;
    p.grayscale = true;
    apply_augment(batch, 0, p);
    CHECK(batch == original);
}

TEST_CASE("grayscale makes channels equal") {
    auto batch = ttp::testing::random_tensor({1, 3, 6, 6}, 3);
    AugmentParams p;
    p.grayscale = true;
    apply_augment(batch, 0, p);
    for (std::size_t y = 0; y < 6; ++y) {
        for (std::size_t x = 0; x < 6; ++x) {
            CHECK(batch.at(0, 0, y, x) == batch.at(0, 1, y, x));
            CHECK(batch.at(0, 1, y, x) == batch.at(0, 2, y, x));
        }
    }
}

TEST_CASE("rotation by 180 degrees about the centre reverses the image") {
    auto batch = ttp::testing::random_tensor({1, 1, 5, 5}, 4);
    const auto original = batch;
    AugmentParams p;
    p.angle_deg = 180.0;
    apply_augment(batch, 0, p);
    for (std::size_t y = 0; y < 5; ++y) {
        for (std::size_t x = 0; x < 5; ++x) CHECK(batch.at(0, 0, y, x) == doctest::Approx(original.at(0, 0, 4 - y, 4 - x)));
    }
}

TEST_CASE("augment_batch is deterministic and range preserving") {
    const auto batch = ttp::testing::random_tensor({4, 3, 16, 16}, 5);
    const AugmentPolicy policy;
    CHECK(augment_batch(batch, policy, 77) == augment_batch(batch, policy, 77));
    CHECK_FALSE(augment_batch(batch, policy, 77) == augment_batch(batch, policy, 78));

    AugmentPolicy compose;
    compose.selection = AugmentSelection::Compose;
    for (std::uint64_t seed = 0; seed < 1000; ++seed) {
        const auto in = ttp::testing::random_tensor({2, 3, 8, 8}, seed + 100);
        const auto out = augment_batch(in, seed % 2 ? compose : policy, seed);
        REQUIRE(out.shape() == in.shape());
        for (float v : out.values()) REQUIRE((v >= 0.0f && v <= 1.0f));
    }
}

TEST_CASE("choose-one applies exactly one transform per sample") {
    Rng rng(11);
    const AugmentPolicy policy;
    int counts[5] = {0, 0, 0, 0, 0};
    for (int i = 0; i < 5000; ++i) {
        const AugmentParams p = sample_augment(policy, rng);
        const bool rotated = p.angle_deg != 0.0;
        const bool cropped = p.crop_area != 1.0;
        const bool jittered = p.brightness != 1.0 || p.contrast != 1.0 || p.saturation != 1.0;
        const int active = rotated + cropped + p.flip + jittered + p.grayscale;
        REQUIRE(active <= 1);
        if (rotated) ++counts[0];
        if (cropped) ++counts[1];
        if (p.flip) ++counts[2];
        if (jittered) ++counts[3];
        if (p.grayscale) ++counts[4];
    }
    for (int c : counts) CHECK(c > 850);  // uniform choice: ~1000 each
}

TEST_CASE("sampled parameters respect the policy bounds") {
    Rng rng(3);
    AugmentPolicy policy;
    policy.selection = AugmentSelection::Compose;
    for (int i = 0; i < 2000; ++i) {
        const AugmentParams p = sample_augment(policy, rng);
        REQUIRE(std::abs(p.angle_deg) <= 30.0);
        REQUIRE(p.crop_area >= 0.7);
        REQUIRE(p.crop_area <= 1.0);
        REQUIRE(p.brightness >= 0.8);
        REQUIRE(p.brightness <= 1.2);
    }
}

TEST_CASE("policy validation") {
    AugmentPolicy p;
    p.flip_prob = 1.5;
    CHECK_THROWS_AS(p.validate(), InvalidArgument);
    p = AugmentPolicy{};
    p.crop_area_min = 0.0;
    CHECK_THROWS_AS(p.validate(), InvalidArgument);
    CHECK_NOTHROW(AugmentPolicy{}.validate());
}

TEST_CASE("target batches are never augmented") {
    const auto batch = ttp::testing::random_tensor({2, 3, 8, 8}, 6);
    CHECK_THROWS_AS(augment_batch(batch, AugmentPolicy{}, 1, StreamRole::Target), InvalidArgument);
}

}  // TEST_SUITE
