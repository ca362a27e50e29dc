#pragma once

#include "ttp/tensor.hpp"

#include <filesystem>
#include <vector>

namespace ttp {

// Writes C x H x W images (C = 1 or 3, values in [0, 1]) side by side as one
// 8-bit PNG. All panels must share a shape. Throws IoFailure.
void write_png_row(const std::filesystem::path& path, const std::vector<Tensor<float>>& panels);

}  // namespace ttp
