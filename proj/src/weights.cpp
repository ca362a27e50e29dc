#include "ttp/weights.hpp"

#include <zlib.h>

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <set>

namespace ttp {
namespace fs = std::filesystem;

namespace {

constexpr char kMagic[4] = {'T', 'T', 'P', 'W'};

class Writer {
public:
    template <typename U>
    void put(U v) {
        unsigned char b[sizeof(U)];
        std::memcpy(b, &v, sizeof(U));
        bytes.insert(bytes.end(), b, b + sizeof(U));
    }
    void put_bytes(const void* p, std::size_t n) {
        const auto* c = static_cast<const unsigned char*>(p);
        bytes.insert(bytes.end(), c, c + n);
    }
    std::vector<unsigned char> bytes;
};

class Reader {
public:
    Reader(const std::vector<unsigned char>& b, std::size_t end) : bytes_(b), end_(end) {}
    template <typename U>
    U get() {
        U v;
        get_bytes(&v, sizeof(U));
        return v;
    }
    void get_bytes(void* dst, std::size_t n) {
        if (pos_ + n > end_) throw IoFailure("weight file truncated at byte " + std::to_string(pos_));
        std::memcpy(dst, bytes_.data() + pos_, n);
        pos_ += n;
    }
    std::size_t pos() const { return pos_; }

private:
    const std::vector<unsigned char>& bytes_;
    std::size_t end_;
    std::size_t pos_ = 0;
};

static_assert(std::endian::native == std::endian::little, "weight format assumes a little-endian host");

std::uint32_t crc_of(const unsigned char* p, std::size_t n) {
    return static_cast<std::uint32_t>(crc32(crc32(0L, Z_NULL, 0), p, static_cast<uInt>(n)));
}

std::string arch_prefix(const std::vector<NamedTensor>& tensors) {
    if (tensors.empty()) throw MalformedFile("weight file holds no tensors");
    const auto& name = tensors.front().name;
    const auto slash = name.find('/');
    const auto dot = name.find('.');
    return name.substr(0, std::min(slash, dot));
}

const Tensor<float>& find(const std::vector<NamedTensor>& tensors, const std::string& name) {
    for (const auto& t : tensors) {
        if (t.name == name) return t.tensor;
    }
    throw MalformedFile("weight file lacks tensor '" + name + "'");
}

template <typename Model>
void assign(Model& model, const std::vector<NamedTensor>& tensors) {
    auto params = model.parameters();
    if (params.size() != tensors.size()) {
        throw MalformedFile("weight file has " + std::to_string(tensors.size()) + " tensors, model expects " +
                            std::to_string(params.size()));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i].name != tensors[i].name || params[i].param->value.shape() != tensors[i].tensor.shape()) {
            throw MalformedFile("tensor '" + tensors[i].name + "' " + shape_string(tensors[i].tensor.shape()) +
                                " does not fit model slot '" + params[i].name + "'");
        }
        params[i].param->value = tensors[i].tensor;
    }
}

}  // namespace

std::vector<unsigned char> encode_tensors(const std::vector<NamedTensor>& tensors) {
    Writer w;
    w.put_bytes(kMagic, 4);
    w.put<std::uint32_t>(kWeightFormatVersion);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(tensors.size()));
    for (const auto& t : tensors) {
        if (t.name.size() > 0xFFFF) throw InvalidArgument("tensor name too long: " + t.name);
        w.put<std::uint16_t>(static_cast<std::uint16_t>(t.name.size()));
        w.put_bytes(t.name.data(), t.name.size());
        w.put<std::uint8_t>(0);
        w.put<std::uint8_t>(static_cast<std::uint8_t>(t.tensor.rank()));
        for (std::size_t d : t.tensor.shape()) w.put<std::uint32_t>(static_cast<std::uint32_t>(d));
        w.put_bytes(t.tensor.data(), t.tensor.size() * sizeof(float));
    }
    w.put<std::uint32_t>(crc_of(w.bytes.data(), w.bytes.size()));
    return std::move(w.bytes);
}

std::vector<NamedTensor> decode_tensors(const std::vector<unsigned char>& bytes) {
    if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) throw BadMagic("not a TTPW weight file");
    if (bytes.size() < 16) throw IoFailure("weight file truncated in header");
    Reader header(bytes, bytes.size());
    header.get<std::uint32_t>();
    const auto version = header.get<std::uint32_t>();
    if (version != kWeightFormatVersion) {
        throw VersionMismatch("weight file version " + std::to_string(version) + ", expected " +
                              std::to_string(kWeightFormatVersion));
    }
    const std::size_t body = bytes.size() - 4;
    std::uint32_t stored;
    std::memcpy(&stored, bytes.data() + body, 4);
    if (stored != crc_of(bytes.data(), body)) throw ChecksumMismatch("weight file CRC32 mismatch");

    Reader r(bytes, body);
    r.get<std::uint32_t>();  // magic
    r.get<std::uint32_t>();  // version
    const auto count = r.get<std::uint32_t>();
    std::vector<NamedTensor> out;
    out.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        NamedTensor t;
        t.name.resize(r.get<std::uint16_t>());
        r.get_bytes(t.name.data(), t.name.size());
        const auto dtype = r.get<std::uint8_t>();
        if (dtype != 0) throw MalformedFile("unsupported dtype " + std::to_string(dtype) + " for " + t.name);
        Shape shape(r.get<std::uint8_t>());
        for (auto& d : shape) d = r.get<std::uint32_t>();
        std::vector<float> data(shape_size(shape));
        r.get_bytes(data.data(), data.size() * sizeof(float));
        t.tensor = Tensor<float>(std::move(shape), std::move(data));
        out.push_back(std::move(t));
    }
    if (r.pos() != body) throw MalformedFile("trailing bytes after last tensor");
    return out;
}

void write_tensors(const fs::path& path, const std::vector<NamedTensor>& tensors) {
    const auto bytes = encode_tensors(tensors);
    if (path.has_parent_path()) {
        std::error_code ec;
        fs::create_directories(path.parent_path(), ec);
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoFailure("cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoFailure("write failed: " + path.string());
}

std::vector<NamedTensor> read_tensors(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoFailure("cannot open " + path.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_tensors(bytes);
}

void save_weights(Generator<float>& gen, const fs::path& path) { write_tensors(path, export_parameters(gen.parameters())); }

void save_weights(Discriminator<float>& disc, const fs::path& path) {
    write_tensors(path, export_parameters(disc.parameters()));
}

GeneratorConfig infer_generator_config(const std::vector<NamedTensor>& tensors) {
    const std::string prefix = arch_prefix(tensors);
    GeneratorConfig cfg;
    if (prefix == "gen-toy") {
        cfg.arch = GeneratorArch::Toy;
        const auto& w = find(tensors, "gen-toy.conv1.weight");
        cfg.width = w.dim(0);
        cfg.channels = w.dim(1);
        cfg.res_blocks = 0;
        return cfg;
    }
    if (prefix != "gen-resnet") throw MalformedFile("'" + prefix + "' is not a generator");
    const auto& stem = find(tensors, "gen-resnet.stem.conv.weight");
    cfg.width = stem.dim(0);
    cfg.channels = stem.dim(1);
    std::set<std::string> blocks;
    for (const auto& t : tensors) {
        if (t.name.rfind("gen-resnet.res", 0) == 0) blocks.insert(t.name.substr(0, t.name.find('.', 11)));
    }
    cfg.res_blocks = blocks.size();
    return cfg;
}

DiscConfig infer_disc_config(const std::vector<NamedTensor>& tensors) {
    const std::string prefix = arch_prefix(tensors);
    DiscConfig cfg;
    cfg.arch = parse_disc_arch(prefix);
    auto side_from = [](std::size_t flat, std::size_t channels, std::size_t pool) {
        const auto s = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(flat / channels))));
        return s * pool;
    };
    switch (cfg.arch) {
        case DiscArch::ConvNetA: {
            const auto& c1 = find(tensors, "convnet-a.conv1.conv.weight");
            cfg.base_width = c1.dim(0);
            cfg.channels = c1.dim(1);
            const auto& fc1 = find(tensors, "convnet-a.fc1.weight");
            cfg.height = cfg.width = side_from(fc1.dim(1), 2 * cfg.base_width, 4);
            cfg.num_classes = find(tensors, "convnet-a.fc2.weight").dim(0);
            break;
        }
        case DiscArch::ResNetS: {
            const auto& stem = find(tensors, "resnet-s.stem.conv.weight");
            cfg.base_width = stem.dim(0);
            cfg.channels = stem.dim(1);
            cfg.num_classes = find(tensors, "resnet-s.fc.weight").dim(0);
            std::set<std::string> blocks;
            for (const auto& t : tensors) {
                if (t.name.rfind("resnet-s.stage1.", 0) == 0) blocks.insert(t.name.substr(0, t.name.find('.', 16)));
            }
            cfg.blocks_per_stage = blocks.size();
            break;
        }
        case DiscArch::Toy: {
            const auto& c1 = find(tensors, "toy.conv1.weight");
            cfg.base_width = c1.dim(0);
            cfg.channels = c1.dim(1);
            const auto& fc = find(tensors, "toy.fc.weight");
            cfg.height = cfg.width = side_from(fc.dim(1), cfg.base_width, 2);
            cfg.num_classes = fc.dim(0);
            break;
        }
    }
    return cfg;
}

Generator<float> load_generator(const fs::path& path) {
    const auto tensors = read_tensors(path);
    Generator<float> gen(infer_generator_config(tensors), 0);
    assign(gen, tensors);
    return gen;
}

Discriminator<float> load_discriminator(const fs::path& path) {
    const auto tensors = read_tensors(path);
    Discriminator<float> disc(infer_disc_config(tensors), 0);
    assign(disc, tensors);
    return disc;
}

Model load_weights(const fs::path& path) {
    const auto tensors = read_tensors(path);
    if (arch_prefix(tensors).rfind("gen-", 0) == 0) {
        Generator<float> gen(infer_generator_config(tensors), 0);
        assign(gen, tensors);
        return gen;
    }
    Discriminator<float> disc(infer_disc_config(tensors), 0);
    assign(disc, tensors);
    return disc;
}

}  // namespace ttp
