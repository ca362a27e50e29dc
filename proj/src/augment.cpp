#include "ttp/augment.hpp"

#include <atomic>
#include <cmath>
#include <numbers>
#include <vector>

namespace ttp {
namespace {

std::atomic<std::uint64_t> g_augment_calls{0};

// Bilinear sample of one channel plane with zero outside the image.
float sample_bilinear(const float* plane, std::size_t h, std::size_t w, double y, double x) {
    const double fy = std::floor(y), fx = std::floor(x);
    const long y0 = static_cast<long>(fy), x0 = static_cast<long>(fx);
    const double dy = y - fy, dx = x - fx;
    auto px = [&](long yy, long xx) -> double {
        if (yy < 0 || xx < 0 || yy >= static_cast<long>(h) || xx >= static_cast<long>(w)) return 0.0;
        return plane[static_cast<std::size_t>(yy) * w + static_cast<std::size_t>(xx)];
    };
    if (dy == 0.0 && dx == 0.0) return static_cast<float>(px(y0, x0));
    const double v = (1 - dy) * ((1 - dx) * px(y0, x0) + dx * px(y0, x0 + 1)) +
                     dy * ((1 - dx) * px(y0 + 1, x0) + dx * px(y0 + 1, x0 + 1));
    return static_cast<float>(v);
}

// Bilinear sample with edge clamping (used for crop-resize, which stays inside the image).
float sample_clamped(const float* plane, std::size_t h, std::size_t w, double y, double x) {
    y = std::clamp(y, 0.0, static_cast<double>(h - 1));
    x = std::clamp(x, 0.0, static_cast<double>(w - 1));
    return sample_bilinear(plane, h, w, y, x);
}

void crop_resize(float* img, std::size_t c, std::size_t h, std::size_t w, const AugmentParams& p) {
    const double side = std::sqrt(p.crop_area);
    const double ch = side * static_cast<double>(h), cw = side * static_cast<double>(w);
    const double top = p.crop_y * (static_cast<double>(h) - ch);
    const double left = p.crop_x * (static_cast<double>(w) - cw);
    const double sy = ch / static_cast<double>(h), sx = cw / static_cast<double>(w);
    std::vector<float> plane(h * w);
    for (std::size_t k = 0; k < c; ++k) {
        float* dst = img + k * h * w;
        std::copy(dst, dst + h * w, plane.begin());
        for (std::size_t y = 0; y < h; ++y) {
            for (std::size_t x = 0; x < w; ++x) {
                const double src_y = top + (static_cast<double>(y) + 0.5) * sy - 0.5;
                const double src_x = left + (static_cast<double>(x) + 0.5) * sx - 0.5;
                dst[y * w + x] = sample_clamped(plane.data(), h, w, src_y, src_x);
            }
        }
    }
}

void rotate(float* img, std::size_t c, std::size_t h, std::size_t w, double angle_deg) {
    const double rad = angle_deg * std::numbers::pi / 180.0;
    const double cs = std::cos(rad), sn = std::sin(rad);
    const double cy = (static_cast<double>(h) - 1) / 2, cx = (static_cast<double>(w) - 1) / 2;
    std::vector<float> plane(h * w);
    for (std::size_t k = 0; k < c; ++k) {
        float* dst = img + k * h * w;
        std::copy(dst, dst + h * w, plane.begin());
        for (std::size_t y = 0; y < h; ++y) {
            for (std::size_t x = 0; x < w; ++x) {
                const double ry = static_cast<double>(y) - cy, rx = static_cast<double>(x) - cx;
                const double src_y = cy + cs * ry - sn * rx;
                const double src_x = cx + sn * ry + cs * rx;
                dst[y * w + x] = sample_bilinear(plane.data(), h, w, src_y, src_x);
            }
        }
    }
}

void hflip(float* img, std::size_t c, std::size_t h, std::size_t w) {
    for (std::size_t r = 0; r < c * h; ++r) std::reverse(img + r * w, img + (r + 1) * w);
}

// Luma with weights (0.299, 0.587, 0.114), written so that R == G == B maps to R exactly.
float luma(float r, float g, float b) {
    return static_cast<float>(r + 0.587 * (static_cast<double>(g) - r) + 0.114 * (static_cast<double>(b) - r));
}

void color_jitter(float* img, std::size_t c, std::size_t hw, const AugmentParams& p) {
    if (p.brightness != 1.0) {
        for (std::size_t i = 0; i < c * hw; ++i) img[i] = static_cast<float>(img[i] * p.brightness);
    }
    if (p.contrast != 1.0) {
        double mean = 0.0;
        if (c == 3) {
            for (std::size_t i = 0; i < hw; ++i) mean += luma(img[i], img[hw + i], img[2 * hw + i]);
        } else {
            for (std::size_t i = 0; i < c * hw; ++i) mean += img[i];
            mean /= static_cast<double>(c);
        }
        mean /= static_cast<double>(hw);
        for (std::size_t i = 0; i < c * hw; ++i) img[i] = static_cast<float>((img[i] - mean) * p.contrast + mean);
    }
    if (p.saturation != 1.0 && c == 3) {
        for (std::size_t i = 0; i < hw; ++i) {
            const double g = luma(img[i], img[hw + i], img[2 * hw + i]);
            for (std::size_t k = 0; k < 3; ++k) {
                float& v = img[k * hw + i];
                v = static_cast<float>(g + (v - g) * p.saturation);
            }
        }
    }
}

void to_grayscale(float* img, std::size_t c, std::size_t hw) {
    if (c != 3) return;
    for (std::size_t i = 0; i < hw; ++i) {
        const float g = luma(img[i], img[hw + i], img[2 * hw + i]);
        img[i] = img[hw + i] = img[2 * hw + i] = g;
    }
}

}  // namespace

AugmentSelection parse_augment_selection(std::string_view name) {
    if (name == "choose-one") return AugmentSelection::ChooseOne;
    if (name == "compose") return AugmentSelection::Compose;
    throw InvalidArgument("unknown augment selection '" + std::string(name) + "'");
}

void AugmentPolicy::validate() const {
    auto prob = [](double p, const char* name) {
        if (!(p >= 0.0 && p <= 1.0)) throw InvalidArgument(std::string(name) + " must lie in [0,1]");
    };
    prob(flip_prob, "augment.flip_prob");
    prob(grayscale_prob, "augment.grayscale_prob");
    prob(jitter_strength, "augment.jitter_strength");
    if (!(crop_area_min > 0.0 && crop_area_min <= crop_area_max && crop_area_max <= 1.0)) {
        throw InvalidArgument("augment crop area range must satisfy 0 < min <= max <= 1");
    }
    if (!(rotation_max_deg >= 0.0)) throw InvalidArgument("augment.rotation_max_deg must be >= 0");
}

AugmentParams sample_augment(const AugmentPolicy& policy, Rng& rng) {
    AugmentParams p;
    const double s = policy.jitter_strength;
    auto draw_geometry = [&] {
        p.angle_deg = uniform(rng, -policy.rotation_max_deg, policy.rotation_max_deg);
    };
    auto draw_crop = [&] {
        p.crop_area = uniform(rng, policy.crop_area_min, policy.crop_area_max);
        p.crop_x = uniform(rng, 0.0, 1.0);
        p.crop_y = uniform(rng, 0.0, 1.0);
    };
    auto draw_jitter = [&] {
        p.brightness = uniform(rng, 1.0 - s, 1.0 + s);
        p.contrast = uniform(rng, 1.0 - s, 1.0 + s);
        p.saturation = uniform(rng, 1.0 - s, 1.0 + s);
    };

    if (policy.selection == AugmentSelection::ChooseOne) {
        switch (static_cast<AugmentKind>(uniform_index(rng, 5))) {
            case AugmentKind::Rotation: draw_geometry(); break;
            case AugmentKind::CropResize: draw_crop(); break;
            case AugmentKind::Flip: p.flip = true; break;
            case AugmentKind::ColorJitter: draw_jitter(); break;
            case AugmentKind::Grayscale: p.grayscale = true; break;
        }
        return p;
    }
    draw_geometry();
    draw_crop();
    p.flip = uniform(rng, 0.0, 1.0) < policy.flip_prob;
    draw_jitter();
    p.grayscale = uniform(rng, 0.0, 1.0) < policy.grayscale_prob;
    return p;
}

void apply_augment(Tensor<float>& batch, std::size_t n, const AugmentParams& p) {
    const std::size_t c = batch.dim(1), h = batch.dim(2), w = batch.dim(3);
    float* img = batch.data() + n * c * h * w;
    if (p.crop_area != 1.0) crop_resize(img, c, h, w, p);
    if (p.angle_deg != 0.0) rotate(img, c, h, w, p.angle_deg);
    if (p.flip) hflip(img, c, h, w);
    color_jitter(img, c, h * w, p);
    if (p.grayscale) to_grayscale(img, c, h * w);
    for (std::size_t i = 0; i < c * h * w; ++i) img[i] = std::clamp(img[i], 0.0f, 1.0f);
}

Tensor<float> augment_batch(const Tensor<float>& batch, const AugmentPolicy& policy, std::uint64_t seed,
                            StreamRole role) {
    if (role == StreamRole::Target) throw InvalidArgument("augmentation is never applied to target batches");
    if (batch.rank() != 4) throw ShapeMismatch("augment_batch expects N x C x H x W, got " + shape_string(batch.shape()));
    ++g_augment_calls;
    Tensor<float> out = batch;
    for (std::size_t n = 0; n < batch.dim(0); ++n) {
        Rng rng(derive_seed(seed, "augment", n));
        apply_augment(out, n, sample_augment(policy, rng));
    }
    return out;
}

std::uint64_t augment_call_count() { return g_augment_calls.load(); }

}  // namespace ttp
