#include "ttp/data.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <iterator>

namespace ttp {
namespace fs = std::filesystem;

namespace {

constexpr std::size_t kCifarSide = 32;
constexpr std::size_t kCifarPixels = 3 * kCifarSide * kCifarSide;
constexpr std::size_t kCifarRecord = 1 + kCifarPixels;

std::vector<unsigned char> read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoFailure("cannot open " + path.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw IoFailure("read error on " + path.string());
    return bytes;
}

std::uint32_t read_be32(const std::vector<unsigned char>& b, std::size_t off) {
    return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) | (std::uint32_t{b[off + 2]} << 8) |
           std::uint32_t{b[off + 3]};
}

LabeledImageSet concatenate(std::vector<LabeledImageSet> parts) {
    if (parts.size() == 1) return std::move(parts.front());
    std::vector<const Tensor<float>*> images;
    LabeledImageSet out;
    out.split = parts.front().split;
    for (const auto& p : parts) {
        images.push_back(&p.images);
        out.labels.insert(out.labels.end(), p.labels.begin(), p.labels.end());
        out.num_classes = std::max(out.num_classes, p.num_classes);
    }
    out.images = concat_rows<float>(images);
    return out;
}

}  // namespace

DatasetFormat parse_dataset_format(std::string_view name) {
    if (name == "cifar10-bin") return DatasetFormat::Cifar10Bin;
    if (name == "idx") return DatasetFormat::Idx;
    throw UnknownFormat("unknown dataset format '" + std::string(name) + "' (expected cifar10-bin or idx)");
}

Split parse_split(std::string_view name) {
    if (name == "train") return Split::Train;
    if (name == "test") return Split::Test;
    throw InvalidArgument("unknown split '" + std::string(name) + "'");
}

std::string_view to_string(Split split) { return split == Split::Train ? "train" : "test"; }

Tensor<float> LabeledImageSet::gather(std::span<const std::size_t> indices) const {
    Shape shape = images.shape();
    shape[0] = indices.size();
    Tensor<float> out(shape);
    const std::size_t row = images.row_size();
    for (std::size_t i = 0; i < indices.size(); ++i) {
        auto src = images.row(indices[i]);
        std::copy(src.begin(), src.end(), out.data() + i * row);
    }
    return out;
}

void LabeledImageSet::validate() const {
    if (images.rank() != 4) throw MalformedFile("images must be N x C x H x W");
    if (images.dim(0) != labels.size()) throw MalformedFile("image/label count mismatch");
    if (num_classes <= 0) throw MalformedFile("num_classes must be positive");
    for (int l : labels) {
        if (l < 0 || l >= num_classes) throw MalformedFile("label out of range: " + std::to_string(l));
    }
    for (float v : images.values()) {
        if (!(v >= 0.0f && v <= 1.0f)) throw MalformedFile("pixel outside [0,1]");
    }
}

LabeledImageSet load_cifar10_file(const fs::path& file, Split split) {
    const auto bytes = read_file(file);
    if (bytes.empty() || bytes.size() % kCifarRecord != 0) {
        throw MalformedFile(file.string() + ": length " + std::to_string(bytes.size()) +
                            " is not a multiple of the 3073-byte CIFAR-10 record");
    }
    const std::size_t n = bytes.size() / kCifarRecord;
    LabeledImageSet set;
    set.split = split;
    set.num_classes = 10;
    set.images = Tensor<float>({n, 3, kCifarSide, kCifarSide});
    set.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const unsigned char* rec = bytes.data() + i * kCifarRecord;
        if (rec[0] >= 10) throw MalformedFile(file.string() + ": label byte " + std::to_string(rec[0]));
        set.labels[i] = rec[0];
        float* dst = set.images.data() + i * kCifarPixels;
        for (std::size_t p = 0; p < kCifarPixels; ++p) dst[p] = static_cast<float>(rec[1 + p]) / 255.0f;
    }
    return set;
}

LabeledImageSet load_idx_pair(const fs::path& images, const fs::path& labels, Split split) {
    const auto ib = read_file(images);
    const auto lb = read_file(labels);
    if (ib.size() < 16 || read_be32(ib, 0) != 0x00000803u) throw MalformedFile(images.string() + ": bad IDX image header");
    if (lb.size() < 8 || read_be32(lb, 0) != 0x00000801u) throw MalformedFile(labels.string() + ": bad IDX label header");
    const std::size_t n = read_be32(ib, 4), rows = read_be32(ib, 8), cols = read_be32(ib, 12);
    if (read_be32(lb, 4) != n) throw MalformedFile("IDX image/label item counts differ");
    if (ib.size() != 16 + n * rows * cols) throw MalformedFile(images.string() + ": truncated IDX image payload");
    if (lb.size() != 8 + n) throw MalformedFile(labels.string() + ": truncated IDX label payload");

    LabeledImageSet set;
    set.split = split;
    set.images = Tensor<float>({n, 1, rows, cols});
    set.labels.resize(n);
    for (std::size_t i = 0; i < n * rows * cols; ++i) set.images[i] = static_cast<float>(ib[16 + i]) / 255.0f;
    int max_label = 0;
    for (std::size_t i = 0; i < n; ++i) {
        set.labels[i] = lb[8 + i];
        max_label = std::max(max_label, set.labels[i]);
    }
    set.num_classes = std::max(10, max_label + 1);
    return set;
}

LabeledImageSet load_dataset(const fs::path& path, DatasetFormat format, Split split) {
    std::error_code ec;
    if (!fs::exists(path, ec)) throw IoFailure("dataset path does not exist: " + path.string());

    if (format == DatasetFormat::Cifar10Bin) {
        if (fs::is_regular_file(path)) return load_cifar10_file(path, split);
        std::vector<fs::path> files;
        if (split == Split::Train) {
            for (int i = 1; i <= 5; ++i) files.push_back(path / ("data_batch_" + std::to_string(i) + ".bin"));
        } else {
            files.push_back(path / "test_batch.bin");
        }
        std::vector<LabeledImageSet> parts;
        for (const auto& f : files) parts.push_back(load_cifar10_file(f, split));
        return concatenate(std::move(parts));
    }

    const std::string prefix = split == Split::Train ? "train" : "t10k";
    return load_idx_pair(path / (prefix + "-images-idx3-ubyte"), path / (prefix + "-labels-idx1-ubyte"), split);
}

LabeledImageSet truncate(const LabeledImageSet& set, std::size_t limit) {
    if (limit >= set.size()) return set;
    LabeledImageSet out;
    out.split = set.split;
    out.num_classes = set.num_classes;
    out.images = set.images.slice_rows(0, limit);
    out.labels.assign(set.labels.begin(), set.labels.begin() + static_cast<std::ptrdiff_t>(limit));
    return out;
}

BatchStream::BatchStream(std::shared_ptr<const LabeledImageSet> set, std::vector<std::size_t> pool,
                         StreamRole role, std::size_t batch_size, std::uint64_t seed,
                         std::optional<int> target_class, std::optional<std::size_t> max_epochs)
    : set_(std::move(set)),
      pool_(std::move(pool)),
      role_(role),
      batch_size_(batch_size),
      seed_(seed),
      target_class_(target_class),
      max_epochs_(max_epochs) {
    if (batch_size_ == 0) throw InvalidArgument("batch size must be positive");
    if (pool_.size() < batch_size_) {
        throw InsufficientSamples("stream pool has " + std::to_string(pool_.size()) + " samples, batch size is " +
                                  std::to_string(batch_size_));
    }
    reshuffle();
}

void BatchStream::reshuffle() {
    order_ = pool_;
    Rng rng(derive_seed(seed_, "stream-epoch", epoch_));
    // Fisher-Yates with our own index draw so the permutation is library-independent.
    for (std::size_t i = order_.size(); i > 1; --i) std::swap(order_[i - 1], order_[uniform_index(rng, i)]);
    cursor_ = 0;
}

Batch BatchStream::next() {
    if (cursor_ + batch_size_ > order_.size()) {
        ++epoch_;
        if (max_epochs_ && epoch_ >= *max_epochs_) {
            throw StreamExhausted("stream exhausted after " + std::to_string(epoch_) + " epochs");
        }
        reshuffle();
    }
    std::span<const std::size_t> idx(order_.data() + cursor_, batch_size_);
    cursor_ += batch_size_;
    Batch batch;
    batch.images = set_->gather(idx);
    batch.labels.reserve(batch_size_);
    for (std::size_t i : idx) batch.labels.push_back(set_->labels[i]);
    return batch;
}

StreamPair make_streams(std::shared_ptr<const LabeledImageSet> set, int target_class, std::size_t batch_size,
                        std::uint64_t seed) {
    if (target_class < 0 || target_class >= set->num_classes) {
        throw BadClassIndex("target class " + std::to_string(target_class) + " outside [0, " +
                            std::to_string(set->num_classes) + ")");
    }
    std::vector<std::size_t> source, target;
    for (std::size_t i = 0; i < set->size(); ++i) (set->labels[i] == target_class ? target : source).push_back(i);
    if (target.size() < batch_size) {
        throw InsufficientSamples("only " + std::to_string(target.size()) + " samples of target class " +
                                  std::to_string(target_class) + " for batch size " + std::to_string(batch_size));
    }
    if (source.size() < batch_size) {
        throw InsufficientSamples("only " + std::to_string(source.size()) + " non-target samples for batch size " +
                                  std::to_string(batch_size));
    }
    return StreamPair{
        BatchStream(set, std::move(source), StreamRole::Source, batch_size, derive_seed(seed, "source"), target_class),
        BatchStream(set, std::move(target), StreamRole::Target, batch_size, derive_seed(seed, "target"), target_class),
    };
}

}  // namespace ttp
