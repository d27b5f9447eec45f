#include "pyraflow/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <vector>

#include <zlib.h>

#include "pyraflow/error.hpp"

namespace pyraflow {

namespace {

constexpr char kMagic[4] = {'P', 'Y', 'F', 'L'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& out, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(out, bits);
}

// Bounds-checked little endian reader.
struct Reader {
    const std::string& buf;
    std::size_t pos = 0;

    void need(std::size_t n) const {
        if (pos + n > buf.size()) throw FormatError("truncated checkpoint");
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 3; i >= 0; --i)
            v = (v << 8) | static_cast<unsigned char>(buf[pos + i]);
        pos += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 7; i >= 0; --i)
            v = (v << 8) | static_cast<unsigned char>(buf[pos + i]);
        pos += 8;
        return v;
    }
    float f32() {
        const std::uint32_t bits = u32();
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }
};

std::uint32_t compute_crc(const std::string& buf, std::size_t n) {
    return static_cast<std::uint32_t>(
        crc32(crc32(0L, Z_NULL, 0),
              reinterpret_cast<const Bytef*>(buf.data()),
              static_cast<uInt>(n)));
}

}  // namespace

std::size_t checkpoint_size_bytes(const PyramidNet& net) {
    std::size_t n = 4 + 4;           // magic, version
    n += 4 + 4 + 4 + 8;              // levels, base_h, base_w, seed
    for (int l = 0; l < net.config.levels; ++l)
        n += 4 + 4 + 4 * net.config.predictors[l].widths.size();
    n += 4 + 4 + 4 + 4;              // meta block
    n += 4 * count_params(net);
    n += 4;                          // crc
    return n;
}

void save_checkpoint(const PyramidNet& net, const CheckpointMeta& meta,
                     const std::string& path) {
    const int levels = net.config.levels;
    if (static_cast<int>(net.levels.size()) != levels)
        throw DataError("net has " + std::to_string(net.levels.size()) +
                        " levels, config says " + std::to_string(levels));

    std::string buf;
    buf.reserve(checkpoint_size_bytes(net));
    buf.append(kMagic, 4);
    put_u32(buf, kVersion);
    put_u32(buf, static_cast<std::uint32_t>(levels));
    put_u32(buf, static_cast<std::uint32_t>(net.config.base_h));
    put_u32(buf, static_cast<std::uint32_t>(net.config.base_w));
    put_u64(buf, net.config.seed);
    for (int l = levels - 1; l >= 0; --l) {
        const auto& layers = net.levels[l];
        put_u32(buf, static_cast<std::uint32_t>(layers.size()));
        put_u32(buf, static_cast<std::uint32_t>(net.config.predictors[l].kernel));
        for (const ConvLayer& layer : layers)
            put_u32(buf, static_cast<std::uint32_t>(layer.out_channels));
    }
    put_u32(buf, meta.epoch);
    put_u32(buf, static_cast<std::uint32_t>(meta.level));
    put_f32(buf, meta.train_loss);
    put_f32(buf, meta.val_epe);
    for (int l = levels - 1; l >= 0; --l) {
        for (const ConvLayer& layer : net.levels[l]) {
            for (float w : layer.weights) put_f32(buf, w);
            for (float b : layer.bias) put_f32(buf, b);
        }
    }
    put_u32(buf, compute_crc(buf, buf.size()));

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    out.flush();
    if (!out) throw IoError("write failed for " + path);
}

std::pair<PyramidNet, CheckpointMeta> load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::string buf((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
    if (in.bad()) throw IoError("read failed for " + path);

    if (buf.size() < 8 || std::memcmp(buf.data(), kMagic, 4) != 0)
        throw FormatError("not a checkpoint file: " + path);
    Reader r{buf, 4};
    const std::uint32_t version = r.u32();
    if (version != kVersion)
        throw FormatError("unsupported checkpoint version " + std::to_string(version));
    if (buf.size() < r.pos + 4) throw FormatError("truncated checkpoint");
    const std::uint32_t stored_crc =
        Reader{buf, buf.size() - 4}.u32();
    if (compute_crc(buf, buf.size() - 4) != stored_crc)
        throw FormatError("checkpoint crc mismatch in " + path);

    const std::uint32_t levels = r.u32();
    const std::uint32_t base_h = r.u32();
    const std::uint32_t base_w = r.u32();
    const std::uint64_t seed = r.u64();
    if (levels < 1 || levels > 16)
        throw FormatError("corrupt checkpoint level count");

    PyramidConfig config;
    config.levels = static_cast<int>(levels);
    config.base_h = static_cast<int>(base_h);
    config.base_w = static_cast<int>(base_w);
    config.seed = seed;

    struct LevelShape {
        int n_layers;
        int kernel;
        std::vector<int> widths;
    };
    std::vector<LevelShape> shapes(levels);
    for (int l = static_cast<int>(levels) - 1; l >= 0; --l) {
        LevelShape& s = shapes[l];
        s.n_layers = static_cast<int>(r.u32());
        s.kernel = static_cast<int>(r.u32());
        if (s.n_layers < 1 || s.n_layers > 64 || s.kernel < 1 || s.kernel > 31 ||
            s.kernel % 2 == 0)
            throw FormatError("corrupt checkpoint layer shape");
        for (int i = 0; i < s.n_layers; ++i) {
            const int w = static_cast<int>(r.u32());
            if (w < 1 || w > 4096) throw FormatError("corrupt checkpoint layer width");
            s.widths.push_back(w);
        }
    }
    config.predictors.resize(levels);
    for (std::uint32_t l = 0; l < levels; ++l) {
        config.predictors[l].kernel = shapes[l].kernel;
        config.predictors[l].widths = shapes[l].widths;
    }
    config.validate();

    CheckpointMeta meta;
    meta.epoch = r.u32();
    meta.level = static_cast<int>(static_cast<std::int32_t>(r.u32()));
    meta.train_loss = r.f32();
    meta.val_epe = r.f32();

    PyramidNet net = init_net(config);
    for (int l = static_cast<int>(levels) - 1; l >= 0; --l) {
        for (ConvLayer& layer : net.levels[l]) {
            for (float& w : layer.weights) w = r.f32();
            for (float& b : layer.bias) b = r.f32();
        }
    }
    if (r.pos != buf.size() - 4)
        throw FormatError("checkpoint payload size mismatch in " + path);
    return {std::move(net), meta};
}

}  // namespace pyraflow
