#include "fixtures.hpp"
#include "frozen_values.hpp"

#include "ttp/data.hpp"

#include <doctest.h>

#include <set>

using namespace ttp;
using ttp::testing::TempDir;

TEST_SUITE("data") {

TEST_CASE("cifar batches load in file order with pixels scaled by 1/255") {
    TempDir dir;
    ttp::testing::write_synthetic_cifar(dir.path(), 20, 30);
    const auto train = load_dataset(dir.path(), DatasetFormat::Cifar10Bin, Split::Train);
    CHECK(train.size() == 100);
    CHECK(train.num_classes == 10);
    CHECK(train.images.shape() == Shape{100, 3, 32, 32});
    CHECK(train.labels[0] == 0);
    CHECK(train.labels[13] == 3);
    CHECK(train.labels[20] == 0);  // second file restarts the cycle

    const auto raw = ttp::testing::read_bytes(dir / "data_batch_1.bin");
    CHECK(train.images[0] == static_cast<float>(raw[1]) / 255.0f);
    CHECK(train.images.at(1, 2, 31, 31) == static_cast<float>(raw[3073 + 3072] / 255.0f));

    const auto test = load_dataset(dir.path(), DatasetFormat::Cifar10Bin, Split::Test);
    CHECK(test.size() == 30);
    CHECK(test.split == Split::Test);
    for (float v : test.images.values()) REQUIRE((v >= 0.0f && v <= 1.0f));
}

TEST_CASE("full-size cifar record count") {
    // five 30,730,000-byte files of 3073-byte records
    CHECK(5 * 30730000 / 3073 == static_cast<int>(ttp::oracle::kCifarTrainRecords));
}

TEST_CASE("a single cifar file can be loaded directly") {
    TempDir dir;
    ttp::testing::write_synthetic_cifar(dir.path(), 4, 7);
    CHECK(load_dataset(dir / "test_batch.bin", DatasetFormat::Cifar10Bin, Split::Test).size() == 7);
}

TEST_CASE("truncated cifar file is malformed") {
    TempDir dir;
    ttp::testing::write_synthetic_cifar(dir.path(), 3, 3);
    auto bytes = ttp::testing::read_bytes(dir / "test_batch.bin");
    bytes.resize(bytes.size() - 100);
    ttp::testing::write_bytes(dir / "test_batch.bin", bytes);
    CHECK_THROWS_AS(load_dataset(dir.path(), DatasetFormat::Cifar10Bin, Split::Test), MalformedFile);
}

TEST_CASE("cifar label byte out of range is malformed") {
    TempDir dir;
    ttp::testing::write_synthetic_cifar(dir.path(), 3, 3);
    auto bytes = ttp::testing::read_bytes(dir / "test_batch.bin");
    bytes[3073] = 12;
    ttp::testing::write_bytes(dir / "test_batch.bin", bytes);
    CHECK_THROWS_AS(load_dataset(dir.path(), DatasetFormat::Cifar10Bin, Split::Test), MalformedFile);
}

TEST_CASE("idx pair loads as single-channel images") {
    TempDir dir;
    ttp::testing::write_idx_pair(dir / "t10k-images-idx3-ubyte", dir / "t10k-labels-idx1-ubyte", 25, 28, 28);
    const auto set = load_dataset(dir.path(), DatasetFormat::Idx, Split::Test);
    CHECK(set.size() == 25);
    CHECK(set.num_classes == 10);
    CHECK(set.images.shape() == Shape{25, 1, 28, 28});
    const auto raw = ttp::testing::read_bytes(dir / "t10k-images-idx3-ubyte");
    CHECK(set.images[5] == static_cast<float>(raw[16 + 5] / 255.0f));
}

TEST_CASE("idx with a wrong magic or short payload is malformed") {
    TempDir dir;
    ttp::testing::write_idx_pair(dir / "img", dir / "lab", 5, 4, 4);
    auto img = ttp::testing::read_bytes(dir / "img");
    SUBCASE("magic") {
        img[3] = 0x01;
        ttp::testing::write_bytes(dir / "img", img);
        CHECK_THROWS_AS(load_idx_pair(dir / "img", dir / "lab", Split::Test), MalformedFile);
    }
    SUBCASE("payload") {
        img.pop_back();
        ttp::testing::write_bytes(dir / "img", img);
        CHECK_THROWS_AS(load_idx_pair(dir / "img", dir / "lab", Split::Test), MalformedFile);
    }
}

TEST_CASE("missing paths and unknown formats") {
    CHECK_THROWS_AS(load_dataset("/nonexistent/ttp-data", DatasetFormat::Cifar10Bin, Split::Train), IoFailure);
    CHECK_THROWS_AS(parse_dataset_format("jpeg"), UnknownFormat);
    CHECK(parse_dataset_format("idx") == DatasetFormat::Idx);
    CHECK(parse_dataset_format("cifar10-bin") == DatasetFormat::Cifar10Bin);
}

TEST_CASE("truncate keeps the first samples") {
    const auto set = ttp::testing::synthetic_set(20, 10, 4, 3);
    const auto small = truncate(set, 7);
    CHECK(small.size() == 7);
    CHECK(small.labels == std::vector<int>(set.labels.begin(), set.labels.begin() + 7));
    CHECK(small.images == set.images.slice_rows(0, 7));
    CHECK(truncate(set, 100).size() == 20);
}

TEST_CASE("source stream never yields the target class") {
    auto set = std::make_shared<const LabeledImageSet>(ttp::testing::synthetic_set(400, 10, 4, 5));
    auto streams = make_streams(set, 3, 16, 42);
    for (int b = 0; b < 300; ++b) {  // several epochs of the 360-image source pool
        const Batch s = streams.source.next();
        const Batch t = streams.target.next();
        REQUIRE(s.labels.size() == 16);
        REQUIRE(t.labels.size() == 16);
        for (int l : s.labels) REQUIRE(l != 3);
        for (int l : t.labels) REQUIRE(l == 3);
        for (float v : s.images.values()) REQUIRE((v >= 0.0f && v <= 1.0f));
    }
}

TEST_CASE("stream roles and batch sizes") {
    auto set = std::make_shared<const LabeledImageSet>(ttp::testing::synthetic_set(200, 10, 4, 5));
    auto streams = make_streams(set, 1, 8, 0);
    CHECK(streams.source.role() == StreamRole::Source);
    CHECK(streams.target.role() == StreamRole::Target);
    CHECK(streams.source.batch_size() == streams.target.batch_size());
    CHECK(streams.source.pool_size() == 180);
    CHECK(streams.target.pool_size() == 20);
}

TEST_CASE("too few target samples") {
    auto set = std::make_shared<const LabeledImageSet>(ttp::testing::synthetic_set(50, 10, 4, 5));  // 5 per class
    CHECK_THROWS_AS(make_streams(set, 2, 16, 0), InsufficientSamples);
    CHECK_THROWS_AS(make_streams(set, 10, 2, 0), BadClassIndex);
}

TEST_CASE("streams are deterministic in the seed") {
    auto set = std::make_shared<const LabeledImageSet>(ttp::testing::synthetic_set(300, 10, 4, 5));
    auto a = make_streams(set, 4, 16, 9);
    auto b = make_streams(set, 4, 16, 9);
    auto c = make_streams(set, 4, 16, 10);
    const Batch first_a = a.source.next(), first_b = b.source.next(), first_c = c.source.next();
    CHECK(first_a.images == first_b.images);
    CHECK(first_a.labels == first_b.labels);
    CHECK_FALSE(first_a.images == first_c.images);
    for (int i = 0; i < 100; ++i) {
        REQUIRE(a.source.next().labels == b.source.next().labels);
        REQUIRE(a.target.next().labels == b.target.next().labels);
    }
}

TEST_CASE("each epoch covers the pool once and reshuffles") {
    auto set = std::make_shared<const LabeledImageSet>(ttp::testing::synthetic_set(64, 2, 2, 1));
    std::vector<std::size_t> pool(32);
    for (std::size_t i = 0; i < 32; ++i) pool[i] = 2 * i;  // label 0 rows
    BatchStream s(set, pool, StreamRole::Target, 8, 5, 0, 2);
    auto epoch_rows = [&] {
        std::multiset<float> seen;
        std::vector<float> order;
        for (int b = 0; b < 4; ++b) {
            const Batch batch = s.next();
            for (std::size_t i = 0; i < 8; ++i) {
                seen.insert(batch.images.row(i)[0]);
                order.push_back(batch.images.row(i)[0]);
            }
        }
        CHECK(seen.size() == 32);
        CHECK(std::set<float>(seen.begin(), seen.end()).size() == 32);
        return order;
    };
    const auto e1 = epoch_rows();
    const auto e2 = epoch_rows();
    CHECK(e1 != e2);
    CHECK_THROWS_AS(s.next(), StreamExhausted);
}

}  // TEST_SUITE
