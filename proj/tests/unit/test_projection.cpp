#include "fixtures.hpp"
#include "frozen_values.hpp"

#include "ttp/projection.hpp"

#include <doctest.h>

#include <algorithm>

using namespace ttp;

TEST_SUITE("projection") {

TEST_CASE("binomial kernel sums to one") {
    double s = 0.0;
    for (double w : SmoothingKernel::binomial().weights) s += w;
    CHECK(s == 1.0);
}

TEST_CASE("reflect index without edge repeat") {
    CHECK(reflect_index(-1, 5) == 1);
    CHECK(reflect_index(-2, 5) == 2);
    CHECK(reflect_index(5, 5) == 3);
    CHECK(reflect_index(0, 5) == 0);
    CHECK(reflect_index(4, 5) == 4);
}

TEST_CASE("smoothing a constant image is the identity") {
    const Tensor<float> c({1, 3, 5, 5}, 0.3f);
    const auto s = smooth(c);
    for (float v : s.values()) CHECK(v == doctest::Approx(0.3f).epsilon(1e-7));
}

TEST_CASE("smoothing an impulse reproduces the kernel") {
    Tensor<double> x({1, 1, 5, 5});
    x.at(0, 0, 2, 2) = 1.0;
    const auto s = smooth(x);
    CHECK(s.at(0, 0, 2, 2) == 4.0 / 16);
    CHECK(s.at(0, 0, 1, 2) == 2.0 / 16);
    CHECK(s.at(0, 0, 2, 3) == 2.0 / 16);
    CHECK(s.at(0, 0, 1, 1) == 1.0 / 16);
    CHECK(s.at(0, 0, 3, 3) == 1.0 / 16);
    CHECK(s.at(0, 0, 0, 0) == 0.0);
}

TEST_CASE("smoothing a checkerboard shrinks its range") {
    Tensor<double> x({1, 1, 8, 8});
    for (std::size_t y = 0; y < 8; ++y) {
        for (std::size_t c = 0; c < 8; ++c) x.at(0, 0, y, c) = static_cast<double>((y + c) % 2);
    }
    const auto s = smooth(x);
    const auto [lo, hi] = std::minmax_element(s.values().begin(), s.values().end());
    CHECK(*lo == oracle::kCheckerboardSmoothedMin);
    CHECK(*hi == oracle::kCheckerboardSmoothedMax);
    CHECK(*hi - *lo < 1.0);
}

TEST_CASE("smoothing a plus pattern") {
    Tensor<double> x({1, 1, 5, 5});
    for (std::size_t i = 0; i < 5; ++i) x.at(0, 0, 2, i) = x.at(0, 0, i, 2) = 1.0;
    CHECK(smooth(x).at(0, 0, 2, 2) == oracle::kPlusSmoothedCentre);
}

TEST_CASE("smooth_backward is the adjoint of smooth") {
    const auto x = ttp::testing::random_tensor<double>({2, 3, 5, 6}, 1);
    const auto g = ttp::testing::random_tensor<double>({2, 3, 5, 6}, 2, -1, 1);
    const auto sx = smooth(x);
    const auto sg = smooth_backward(g);
    double lhs = 0.0, rhs = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        lhs += sx[i] * g[i];
        rhs += x[i] * sg[i];
    }
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
}

TEST_CASE("zero budget returns the anchor exactly") {
    const auto raw = ttp::testing::random_tensor({2, 3, 6, 6}, 3);
    const auto anchor = ttp::testing::random_tensor({2, 3, 6, 6}, 4);
    CHECK(project(raw, anchor, Budget{0.0}) == anchor);
}

TEST_CASE("constant raw equal to the anchor is a fixed point") {
    const Tensor<float> c({1, 3, 4, 4}, 0.7f);
    const auto out = project(c, c, Budget::from_255(8));
    for (float v : out.values()) CHECK(v == doctest::Approx(0.7f).epsilon(1e-7));
}

TEST_CASE("ones around zeros land on epsilon") {
    const Tensor<float> ones({1, 3, 4, 4}, 1.0f);
    const Tensor<float> zeros({1, 3, 4, 4}, 0.0f);
    const auto out = project(ones, zeros, Budget::from_255(16));
    for (float v : out.values()) CHECK(v == static_cast<float>(oracle::kSixteenOver255));
}

TEST_CASE("budget from the 0-255 scale") {
    CHECK(Budget::from_255(16).epsilon == 16.0 / 255.0);
    CHECK(Budget::from_255(32).eps255() == doctest::Approx(32.0));
}

TEST_CASE("projection respects the budget and the pixel range") {
    for (std::uint64_t s = 0; s < 200; ++s) {
        const double eps = (s % 4) * 8.0 / 255.0;
        const auto raw = ttp::testing::random_tensor({1, 3, 6, 6}, s);
        const auto anchor = ttp::testing::random_tensor({1, 3, 6, 6}, s + 1000);
        const auto out = project(raw, anchor, Budget{eps});
        REQUIRE(linf_distance(out, anchor) <= eps + 1e-6);
        for (float v : out.values()) REQUIRE((v >= 0.0f && v <= 1.0f));
    }
}

TEST_CASE("without smoothing projection is idempotent") {
    const auto raw = ttp::testing::random_tensor({2, 3, 5, 5}, 8);
    const auto anchor = ttp::testing::random_tensor({2, 3, 5, 5}, 9);
    const Budget b = Budget::from_255(16);
    const auto once = project(raw, anchor, b, SmoothingKernel::disabled());
    CHECK(project(once, anchor, b, SmoothingKernel::disabled()) == once);
}

TEST_CASE("smoothing happens before clamping") {
    // a single bright pixel: smoothed first, then clamped, so neighbours move too
    Tensor<double> raw({1, 1, 5, 5}, 0.5);
    raw.at(0, 0, 2, 2) = 1.0;
    const Tensor<double> anchor({1, 1, 5, 5}, 0.5);
    const auto out = project(raw, anchor, Budget{0.5});
    CHECK(out.at(0, 0, 2, 2) == 0.5 + 0.5 * 4.0 / 16);
    CHECK(out.at(0, 0, 2, 1) == 0.5 + 0.5 * 2.0 / 16);
}

TEST_CASE("projection backward masks clamped pixels") {
    const auto raw = ttp::testing::random_tensor<double>({1, 2, 5, 5}, 10);
    const auto anchor = ttp::testing::random_tensor<double>({1, 2, 5, 5}, 11);
    SmoothProjection<double> proj(Budget::from_255(32), SmoothingKernel::disabled());
    const auto out = proj.forward(raw, anchor);
    CHECK(out == project(raw, anchor, Budget::from_255(32), SmoothingKernel::disabled()));
    const auto g = proj.backward(Tensor<double>(raw.shape(), 1.0));
    for (std::size_t i = 0; i < g.size(); ++i) CHECK(g[i] == (out[i] == raw[i] ? 1.0 : 0.0));
}

TEST_CASE("projection shape mismatch") {
    CHECK_THROWS_AS(project(Tensor<float>({1, 3, 4, 4}), Tensor<float>({1, 3, 4, 5}), Budget{}), ShapeMismatch);
}

}  // TEST_SUITE
