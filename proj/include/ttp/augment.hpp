#pragma once

#include "ttp/data.hpp"
#include "ttp/tensor.hpp"

#include <cstdint>
#include <string_view>

namespace ttp {

enum class AugmentSelection { ChooseOne, Compose };
enum class AugmentKind { Rotation, CropResize, Flip, ColorJitter, Grayscale };

AugmentSelection parse_augment_selection(std::string_view name);

struct AugmentPolicy {
    double rotation_max_deg = 30.0;
    double crop_area_min = 0.7;
    double crop_area_max = 1.0;
    double flip_prob = 0.5;
    double jitter_strength = 0.2;  // brightness, contrast and saturation factors in [1-s, 1+s]
    double grayscale_prob = 0.1;
    AugmentSelection selection = AugmentSelection::ChooseOne;

    void validate() const;  // throws InvalidArgument
};

// Sampled parameters for one image. Exposed so individual transforms can be
// exercised directly.
struct AugmentParams {
    double angle_deg = 0.0;
    double crop_area = 1.0;
    double crop_x = 0.0;  // top-left corner as a fraction of the free margin, in [0, 1]
    double crop_y = 0.0;
    bool flip = false;
    double brightness = 1.0;
    double contrast = 1.0;
    double saturation = 1.0;
    bool grayscale = false;
};

// Applies `params` to sample n of `batch` in place. Order: crop-resize,
// rotation, flip, color jitter, grayscale; each step is skipped at its identity
// setting so identity parameters reproduce the input bit-for-bit.
void apply_augment(Tensor<float>& batch, std::size_t n, const AugmentParams& params);

AugmentParams sample_augment(const AugmentPolicy& policy, Rng& rng);

// Under ChooseOne exactly one transform, drawn uniformly from the five, is
// applied to each sample; under Compose every transform is applied with its
// sampled parameters (flip and grayscale with their probabilities).
// Sample n uses the rng stream derive_seed(seed, n). Target streams are rejected.
Tensor<float> augment_batch(const Tensor<float>& batch, const AugmentPolicy& policy, std::uint64_t seed,
                            StreamRole role = StreamRole::Source);

// Number of augment_batch calls since process start, for instrumentation.
std::uint64_t augment_call_count();

}  // namespace ttp
