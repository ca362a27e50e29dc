#pragma once

#include "ttp/rng.hpp"
#include "ttp/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace ttp {

enum class DatasetFormat { Cifar10Bin, Idx };
enum class Split { Train, Test };

DatasetFormat parse_dataset_format(std::string_view name);
Split parse_split(std::string_view name);
std::string_view to_string(Split split);

// Labeled images with pixels in [0, 1], stored contiguously as N x C x H x W.
struct LabeledImageSet {
    Tensor<float> images;
    std::vector<int> labels;
    int num_classes = 0;
    Split split = Split::Train;

    std::size_t size() const { return labels.size(); }
    std::size_t channels() const { return images.dim(1); }
    std::size_t height() const { return images.dim(2); }
    std::size_t width() const { return images.dim(3); }

    // Gathers the given rows into a batch.
    Tensor<float> gather(std::span<const std::size_t> indices) const;

    // Throws MalformedFile when a structural invariant is broken.
    void validate() const;
};

// cifar10-bin: `path` is a directory holding data_batch_{1..5}.bin / test_batch.bin,
// or a single batch file. idx: a directory holding {train,t10k}-{images-idx3,labels-idx1}-ubyte.
LabeledImageSet load_dataset(const std::filesystem::path& path, DatasetFormat format, Split split);

LabeledImageSet load_cifar10_file(const std::filesystem::path& file, Split split);
LabeledImageSet load_idx_pair(const std::filesystem::path& images, const std::filesystem::path& labels,
                              Split split);

// Keeps the first `limit` samples (file order). Used for quick runs.
LabeledImageSet truncate(const LabeledImageSet& set, std::size_t limit);

struct Batch {
    Tensor<float> images;
    std::vector<int> labels;
};

enum class StreamRole { Source, Target, AugmentedSource };

// Endless mini-batch stream over a fixed pool of dataset rows. Each epoch is a
// fresh permutation of the pool; a trailing partial batch is dropped.
class BatchStream {
public:
    BatchStream(std::shared_ptr<const LabeledImageSet> set, std::vector<std::size_t> pool, StreamRole role,
                std::size_t batch_size, std::uint64_t seed, std::optional<int> target_class,
                std::optional<std::size_t> max_epochs = std::nullopt);

    // Throws StreamExhausted once `max_epochs` full passes have been served.
    Batch next();

    StreamRole role() const { return role_; }
    std::size_t batch_size() const { return batch_size_; }
    std::uint64_t seed() const { return seed_; }
    std::optional<int> target_class() const { return target_class_; }
    std::size_t pool_size() const { return pool_.size(); }
    std::size_t batches_per_epoch() const { return pool_.size() / batch_size_; }
    std::size_t epoch() const { return epoch_; }

private:
    void reshuffle();

    std::shared_ptr<const LabeledImageSet> set_;
    std::vector<std::size_t> pool_;
    std::vector<std::size_t> order_;
    StreamRole role_;
    std::size_t batch_size_;
    std::uint64_t seed_;
    std::optional<int> target_class_;
    std::optional<std::size_t> max_epochs_;
    std::size_t cursor_ = 0;
    std::size_t epoch_ = 0;
};

struct StreamPair {
    BatchStream source;
    BatchStream target;
};

// Source pool = every row whose label != target_class; target pool = every row
// whose label == target_class. Both streams share `batch_size`.
StreamPair make_streams(std::shared_ptr<const LabeledImageSet> set, int target_class, std::size_t batch_size,
                        std::uint64_t seed);

}  // namespace ttp
