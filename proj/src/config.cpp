#include "ttp/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>

namespace ttp {

namespace {

using Setter = std::function<void(Settings&, const std::string&)>;

double to_double(const std::string& v) {
    double out = 0.0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size()) throw InvalidArgument("expected a number, got '" + v + "'");
    return out;
}

std::uint64_t to_uint(const std::string& v) {
    std::uint64_t out = 0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size()) {
        throw InvalidArgument("expected a non-negative integer, got '" + v + "'");
    }
    return out;
}

bool to_bool(const std::string& v) {
    if (v == "true") return true;
    if (v == "false") return false;
    throw InvalidArgument("expected true or false, got '" + v + "'");
}

const std::map<std::string, Setter>& setters() {
    static const std::map<std::string, Setter> table = [] {
        std::map<std::string, Setter> t;
        auto u = [](auto member) {
            return [member](Settings& s, const std::string& v) { member(s) = static_cast<std::size_t>(to_uint(v)); };
        };
        auto d = [](auto member) { return [member](Settings& s, const std::string& v) { member(s) = to_double(v); }; };
        auto b = [](auto member) { return [member](Settings& s, const std::string& v) { member(s) = to_bool(v); }; };

        t["seed"] = [](Settings& s, const std::string& v) { s.seed = to_uint(v); };

        t["train.epochs"] = u([](Settings& s) -> std::size_t& { return s.gen.epochs; });
        t["train.lr"] = d([](Settings& s) -> double& { return s.gen.lr; });
        t["train.beta1"] = d([](Settings& s) -> double& { return s.gen.beta1; });
        t["train.beta2"] = d([](Settings& s) -> double& { return s.gen.beta2; });
        t["train.batch_size"] = u([](Settings& s) -> std::size_t& { return s.gen.batch_size; });
        t["train.target"] = [](Settings& s, const std::string& v) { s.gen.target_class = static_cast<int>(to_uint(v)); };
        t["train.steps_per_epoch"] = [](Settings& s, const std::string& v) { s.gen.steps_per_epoch = to_uint(v); };
        t["train.max_steps"] = [](Settings& s, const std::string& v) { s.gen.max_steps = to_uint(v); };
        t["train.surrogate_tag"] = [](Settings& s, const std::string& v) { s.gen.surrogate_tag = v; };

        t["budget.eps"] = [](Settings& s, const std::string& v) { s.gen.budget = Budget::from_255(to_double(v)); };
        t["smoothing.enabled"] = [](Settings& s, const std::string& v) {
            s.gen.kernel = to_bool(v) ? SmoothingKernel::binomial() : SmoothingKernel::disabled();
        };

        t["loss.objective"] = [](Settings& s, const std::string& v) { s.gen.loss.objective = parse_objective(v); };
        t["loss.use_aug"] = b([](Settings& s) -> bool& { return s.gen.loss.use_aug; });
        t["loss.use_sim"] = b([](Settings& s) -> bool& { return s.gen.loss.use_sim; });

        t["augment.rotation_max_deg"] = d([](Settings& s) -> double& { return s.gen.augment.rotation_max_deg; });
        t["augment.crop_area_min"] = d([](Settings& s) -> double& { return s.gen.augment.crop_area_min; });
        t["augment.crop_area_max"] = d([](Settings& s) -> double& { return s.gen.augment.crop_area_max; });
        t["augment.flip_prob"] = d([](Settings& s) -> double& { return s.gen.augment.flip_prob; });
        t["augment.jitter_strength"] = d([](Settings& s) -> double& { return s.gen.augment.jitter_strength; });
        t["augment.grayscale_prob"] = d([](Settings& s) -> double& { return s.gen.augment.grayscale_prob; });
        t["augment.selection"] = [](Settings& s, const std::string& v) { s.gen.augment.selection = parse_augment_selection(v); };

        t["generator.arch"] = [](Settings& s, const std::string& v) {
            if (v == "resnet") s.gen.generator.arch = GeneratorArch::ResNet;
            else if (v == "toy") s.gen.generator.arch = GeneratorArch::Toy;
            else throw InvalidArgument("generator.arch must be resnet or toy, got '" + v + "'");
        };
        t["generator.width"] = u([](Settings& s) -> std::size_t& { return s.gen.generator.width; });
        t["generator.res_blocks"] = u([](Settings& s) -> std::size_t& { return s.gen.generator.res_blocks; });

        t["disc.arch"] = [](Settings& s, const std::string& v) { s.disc_arch.arch = parse_disc_arch(v); };
        t["disc.width"] = u([](Settings& s) -> std::size_t& { return s.disc_arch.base_width; });
        t["disc.blocks_per_stage"] = u([](Settings& s) -> std::size_t& { return s.disc_arch.blocks_per_stage; });
        t["disc.epochs"] = u([](Settings& s) -> std::size_t& { return s.disc.epochs; });
        t["disc.batch_size"] = u([](Settings& s) -> std::size_t& { return s.disc.batch_size; });
        t["disc.lr"] = d([](Settings& s) -> double& { return s.disc.lr; });
        t["disc.min_accuracy"] = d([](Settings& s) -> double& { return s.disc.min_accuracy; });
        t["disc.augment"] = b([](Settings& s) -> bool& { return s.disc.augment; });

        t["data.format"] = [](Settings& s, const std::string& v) { s.data_format = parse_dataset_format(v); };
        t["data.limit"] = u([](Settings& s) -> std::size_t& { return s.data_limit; });

        t["eval.batch_size"] = u([](Settings& s) -> std::size_t& { return s.eval_batch; });
        t["baseline.steps"] = u([](Settings& s) -> std::size_t& { return s.baseline.steps; });
        t["baseline.alpha"] = [](Settings& s, const std::string& v) { s.baseline.alpha = to_double(v) / 255.0; };
        t["baseline.mu"] = d([](Settings& s) -> double& { return s.baseline.mu; });
        return t;
    }();
    return table;
}

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

// Strips a trailing comment that is not inside quotes.
std::string_view strip_comment(std::string_view line) {
    char quote = 0;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quote) {
            if (c == quote) quote = 0;
        } else if (c == '"' || c == '\'') {
            quote = c;
        } else if (c == '#') {
            return line.substr(0, i);
        }
    }
    return line;
}

}  // namespace

RunConfig RunConfig::parse(std::string_view text, std::string_view origin) {
    RunConfig cfg;
    std::string section;
    std::size_t line_no = 0;
    std::istringstream in{std::string(text)};
    std::string raw;
    while (std::getline(in, raw)) {
        ++line_no;
        const std::string line = trim(strip_comment(raw));
        const auto where = [&] { return std::string(origin) + ":" + std::to_string(line_no); };
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') throw MalformedFile(where() + ": unterminated section header");
            section = trim(std::string_view(line).substr(1, line.size() - 2));
            if (section.empty()) throw MalformedFile(where() + ": empty section name");
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw MalformedFile(where() + ": expected key = value");
        const std::string key = trim(std::string_view(line).substr(0, eq));
        std::string value = trim(std::string_view(line).substr(eq + 1));
        if (key.empty() || value.empty()) throw MalformedFile(where() + ": expected key = value");
        if (value.front() == '"' || value.front() == '\'') {
            if (value.size() < 2 || value.back() != value.front()) throw MalformedFile(where() + ": unterminated string");
            value = value.substr(1, value.size() - 2);
        }
        try {
            cfg.set(section.empty() ? key : section + "." + key, value);
        } catch (const InvalidArgument& e) {
            throw InvalidArgument(where() + ": " + e.what());
        }
    }
    return cfg;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoFailure("cannot open config file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), path.string());
}

void RunConfig::set(const std::string& key, const std::string& value) {
    const auto it = setters().find(key);
    if (it == setters().end()) throw InvalidArgument("unknown config key '" + key + "'");
    Settings scratch;
    try {
        it->second(scratch, value);
    } catch (const Error& e) {
        throw InvalidArgument(key + ": " + e.what());
    }
    values_[key] = value;
}

void RunConfig::merge(const RunConfig& overrides) {
    for (const auto& [k, v] : overrides.values_) values_[k] = v;
}

Settings RunConfig::settings() const {
    Settings s;
    for (const auto& [k, v] : values_) setters().at(k)(s, v);
    s.gen.seed = s.seed;
    s.disc.seed = s.seed;
    return s;
}

std::string RunConfig::canonical() const {
    std::ostringstream os;
    for (const auto& [k, v] : values_) os << k << " = \"" << v << "\"\n";
    return os.str();
}

std::string RunConfig::fingerprint() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
    for (unsigned char c : canonical()) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << h;
    return os.str();
}

std::vector<std::string> RunConfig::known_keys() {
    std::vector<std::string> keys;
    for (const auto& [k, v] : setters()) keys.push_back(k);
    return keys;
}

}  // namespace ttp
