#pragma once

#include "ttp/attack.hpp"
#include "ttp/data.hpp"
#include "ttp/train.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace ttp {

// Typed view of every configurable field.
struct Settings {
    std::uint64_t seed = 0;
    TrainConfig gen;
    DiscTrainConfig disc;
    DiscConfig disc_arch;
    DatasetFormat data_format = DatasetFormat::Cifar10Bin;
    std::size_t data_limit = 0;  // 0 keeps every sample
    std::size_t eval_batch = 256;
    IterativeAttackConfig baseline;
};

// Flat dotted-key configuration, e.g.
//
//   seed = 3
//   [train]
//   epochs = 20
//   loss.use_sim = false      # same as [loss] use_sim = false
//
// Keys are validated on entry; unknown keys and ill-typed values throw
// InvalidArgument, syntax errors throw MalformedFile.
class RunConfig {
public:
    static RunConfig parse(std::string_view text, std::string_view origin = "<config>");
    static RunConfig load(const std::filesystem::path& path);

    void set(const std::string& key, const std::string& value);
    bool has(const std::string& key) const { return values_.count(key) != 0; }
    // Values in `overrides` win.
    void merge(const RunConfig& overrides);

    Settings settings() const;

    // Sorted `key = value` lines; feeding this back to parse() reproduces the config.
    std::string canonical() const;
    // 16 hex digits identifying canonical().
    std::string fingerprint() const;

    static std::vector<std::string> known_keys();

private:
    std::map<std::string, std::string> values_;
};

}  // namespace ttp
