#pragma once

#include "ttp/models.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <variant>
#include <vector>

namespace ttp {

// Weight file layout (little-endian):
//   "TTPW" | u32 version = 1 | u32 tensor count |
//   per tensor: u16 name length, UTF-8 name, u8 dtype (0 = f32), u8 rank, rank x u32 dims, f32 data |
//   u32 CRC32 of every preceding byte.
inline constexpr std::uint32_t kWeightFormatVersion = 1;

struct NamedTensor {
    std::string name;
    Tensor<float> tensor;
};

std::vector<unsigned char> encode_tensors(const std::vector<NamedTensor>& tensors);
// Throws BadMagic, VersionMismatch, ChecksumMismatch or IoFailure (truncation).
std::vector<NamedTensor> decode_tensors(const std::vector<unsigned char>& bytes);

void write_tensors(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> read_tensors(const std::filesystem::path& path);

template <typename T>
std::vector<NamedTensor> export_parameters(const std::vector<nn::NamedParameter<T>>& params) {
    std::vector<NamedTensor> out;
    out.reserve(params.size());
    for (const auto& p : params) out.push_back({p.name, p.param->value.template cast<float>()});
    return out;
}

void save_weights(Generator<float>& gen, const std::filesystem::path& path);
void save_weights(Discriminator<float>& disc, const std::filesystem::path& path);

// Architecture and sizes are recovered from the tensor names and shapes.
Generator<float> load_generator(const std::filesystem::path& path);
Discriminator<float> load_discriminator(const std::filesystem::path& path);

using Model = std::variant<Generator<float>, Discriminator<float>>;
Model load_weights(const std::filesystem::path& path);

GeneratorConfig infer_generator_config(const std::vector<NamedTensor>& tensors);
DiscConfig infer_disc_config(const std::vector<NamedTensor>& tensors);

}  // namespace ttp
