#pragma once

#include "ttp/data.hpp"
#include "ttp/rng.hpp"
#include "ttp/tensor.hpp"

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace ttp::testing {

// Removed with its contents on destruction.
class TempDir {
public:
    TempDir() {
        std::string tmpl = (std::filesystem::temp_directory_path() / "ttp-test-XXXXXX").string();
        if (!::mkdtemp(tmpl.data())) throw IoFailure("mkdtemp failed");
        path_ = tmpl;
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

inline void write_bytes(const std::filesystem::path& path, const std::vector<unsigned char>& bytes) {
    std::ofstream out(path, std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline std::vector<unsigned char> read_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// One 32x32 RGB record whose colour and a horizontal band depend on the label,
// on top of seeded noise, so small classifiers can learn the classes.
inline std::vector<unsigned char> synthetic_record(int label, Rng& rng) {
    std::vector<unsigned char> rec(3073);
    rec[0] = static_cast<unsigned char>(label);
    const std::size_t band = static_cast<std::size_t>(label) * 3 % 26;
    for (std::size_t c = 0; c < 3; ++c) {
        for (std::size_t y = 0; y < 32; ++y) {
            for (std::size_t x = 0; x < 32; ++x) {
                int v = static_cast<int>(uniform_index(rng, 60));
                if (static_cast<int>(c) == label % 3) v += 120;
                if (label >= 3 && y >= band && y < band + 6) v += 60;
                rec[1 + c * 1024 + y * 32 + x] = static_cast<unsigned char>(std::min(v, 255));
            }
        }
    }
    return rec;
}

// Writes data_batch_{1..5}.bin (per_batch records each) and test_batch.bin
// (test_records records). Labels cycle through 0..9.
inline void write_synthetic_cifar(const std::filesystem::path& dir, std::size_t per_batch, std::size_t test_records,
                                  std::uint64_t seed = 1) {
    std::filesystem::create_directories(dir);
    Rng rng(seed);
    auto write = [&](const std::string& name, std::size_t count) {
        std::vector<unsigned char> bytes;
        for (std::size_t i = 0; i < count; ++i) {
            const auto rec = synthetic_record(static_cast<int>(i % 10), rng);
            bytes.insert(bytes.end(), rec.begin(), rec.end());
        }
        write_bytes(dir / name, bytes);
    };
    for (int b = 1; b <= 5; ++b) write("data_batch_" + std::to_string(b) + ".bin", per_batch);
    write("test_batch.bin", test_records);
}

inline void put_be32(std::vector<unsigned char>& out, std::uint32_t v) {
    for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<unsigned char>(v >> s));
}

// IDX image/label pair with `count` rows x cols images.
inline void write_idx_pair(const std::filesystem::path& images, const std::filesystem::path& labels,
                           std::size_t count, std::size_t rows, std::size_t cols, std::uint64_t seed = 1) {
    Rng rng(seed);
    std::vector<unsigned char> img, lab;
    put_be32(img, 0x803);
    put_be32(img, static_cast<std::uint32_t>(count));
    put_be32(img, static_cast<std::uint32_t>(rows));
    put_be32(img, static_cast<std::uint32_t>(cols));
    put_be32(lab, 0x801);
    put_be32(lab, static_cast<std::uint32_t>(count));
    for (std::size_t i = 0; i < count; ++i) {
        lab.push_back(static_cast<unsigned char>(i % 10));
        for (std::size_t p = 0; p < rows * cols; ++p) img.push_back(static_cast<unsigned char>(uniform_index(rng, 256)));
    }
    write_bytes(images, img);
    write_bytes(labels, lab);
}

template <typename T = float>
Tensor<T> random_tensor(Shape shape, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
    Rng rng(seed);
    Tensor<T> t(std::move(shape));
    for (auto& v : t.values()) v = static_cast<T>(uniform(rng, lo, hi));
    return t;
}

// Small labelled set held in memory (no files), labels cycling through 0..classes-1.
inline LabeledImageSet synthetic_set(std::size_t count, std::size_t classes, std::size_t side, std::uint64_t seed) {
    LabeledImageSet set;
    set.images = random_tensor({count, 3, side, side}, seed);
    set.num_classes = static_cast<int>(classes);
    for (std::size_t i = 0; i < count; ++i) set.labels.push_back(static_cast<int>(i % classes));
    return set;
}

}  // namespace ttp::testing
