#include "pyraflow/flowio.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

#include "pyraflow/error.hpp"

namespace pyraflow {

namespace {

constexpr float kFloSentinel = 202021.25f;

void put_f32(std::string& out, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    out.push_back(static_cast<char>(bits & 0xff));
    out.push_back(static_cast<char>((bits >> 8) & 0xff));
    out.push_back(static_cast<char>((bits >> 16) & 0xff));
    out.push_back(static_cast<char>((bits >> 24) & 0xff));
}

void put_i32(std::string& out, std::int32_t v) {
    const auto u = static_cast<std::uint32_t>(v);
    out.push_back(static_cast<char>(u & 0xff));
    out.push_back(static_cast<char>((u >> 8) & 0xff));
    out.push_back(static_cast<char>((u >> 16) & 0xff));
    out.push_back(static_cast<char>((u >> 24) & 0xff));
}

float get_f32(const std::string& buf, std::size_t off) {
    std::uint32_t bits = 0;
    for (int i = 3; i >= 0; --i)
        bits = (bits << 8) | static_cast<unsigned char>(buf[off + i]);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

std::int32_t get_i32(const std::string& buf, std::size_t off) {
    std::uint32_t bits = 0;
    for (int i = 3; i >= 0; --i)
        bits = (bits << 8) | static_cast<unsigned char>(buf[off + i]);
    return static_cast<std::int32_t>(bits);
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::string buf((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
    if (in.bad()) throw IoError("read failed for " + path);
    return buf;
}

void write_file(const std::string& path, const std::string& buf) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    out.flush();
    if (!out) throw IoError("write failed for " + path);
}

// Skips whitespace and '#' comment lines, then reads one token.
std::string next_token(const std::string& buf, std::size_t& pos) {
    while (pos < buf.size()) {
        const char c = buf[pos];
        if (c == '#') {
            while (pos < buf.size() && buf[pos] != '\n') ++pos;
        } else if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
            ++pos;
        } else {
            break;
        }
    }
    const std::size_t start = pos;
    while (pos < buf.size() && !std::isspace(static_cast<unsigned char>(buf[pos])))
        ++pos;
    if (start == pos) throw FormatError("truncated pnm header");
    return buf.substr(start, pos - start);
}

int parse_pnm_int(const std::string& tok, const char* what) {
    if (tok.empty() || tok.find_first_not_of("0123456789") != std::string::npos)
        throw FormatError(std::string("bad pnm ") + what + ": " + tok);
    long v = 0;
    for (char c : tok) {
        v = v * 10 + (c - '0');
        if (v > 1 << 24) throw FormatError(std::string("bad pnm ") + what + ": " + tok);
    }
    return static_cast<int>(v);
}

// Parses a P5/P6 header and returns the offset of the first pixel byte.
std::size_t parse_pnm_header(const std::string& buf, const char* magic,
                             int& height, int& width) {
    std::size_t pos = 0;
    if (next_token(buf, pos) != magic)
        throw FormatError(std::string("not a ") + magic + " file");
    width = parse_pnm_int(next_token(buf, pos), "width");
    height = parse_pnm_int(next_token(buf, pos), "height");
    const int maxval = parse_pnm_int(next_token(buf, pos), "maxval");
    if (width <= 0 || height <= 0) throw FormatError("bad pnm dimensions");
    if (maxval != 255) throw FormatError("unsupported pnm maxval " + std::to_string(maxval));
    if (pos >= buf.size()) throw FormatError("truncated pnm header");
    ++pos;  // single whitespace byte after maxval
    return pos;
}

unsigned char to_byte(float v) {
    const float c = std::min(1.0f, std::max(0.0f, v));
    return static_cast<unsigned char>(std::lround(c * 255.0f));
}

}  // namespace

void write_flo(const std::string& path, const FlowField& flow) {
    if (flow.channels() != 2) throw DataError("flow field must have 2 channels");
    if (!flow.all_finite()) throw NumericError("non-finite flow value in " + path);
    std::string buf;
    buf.reserve(12 + flow.size() * 4);
    put_f32(buf, kFloSentinel);
    put_i32(buf, flow.width());
    put_i32(buf, flow.height());
    const float* u = flow.plane(0);
    const float* v = flow.plane(1);
    for (int i = 0; i < flow.height() * flow.width(); ++i) {
        put_f32(buf, u[i]);
        put_f32(buf, v[i]);
    }
    write_file(path, buf);
}

FlowField read_flo(const std::string& path) {
    const std::string buf = read_file(path);
    if (buf.size() < 12) throw FormatError("not a flo file: " + path);
    if (get_f32(buf, 0) != kFloSentinel)
        throw FormatError("not a flo file: " + path);
    const std::int32_t w = get_i32(buf, 4);
    const std::int32_t h = get_i32(buf, 8);
    if (w <= 0 || h <= 0 || w > 1 << 16 || h > 1 << 16)
        throw FormatError("corrupt flo dimensions in " + path);
    const std::size_t need = 12 + static_cast<std::size_t>(w) * h * 8;
    if (buf.size() != need) throw FormatError("corrupt flo payload in " + path);
    FlowField flow(2, h, w);
    float* u = flow.plane(0);
    float* v = flow.plane(1);
    for (int i = 0; i < h * w; ++i) {
        u[i] = get_f32(buf, 12 + static_cast<std::size_t>(i) * 8);
        v[i] = get_f32(buf, 16 + static_cast<std::size_t>(i) * 8);
    }
    return flow;
}

void write_ppm(const std::string& path, const Tensor& image) {
    if (image.channels() != 3) throw DataError("ppm image must have 3 channels");
    std::string buf = "P6\n" + std::to_string(image.width()) + " " +
                      std::to_string(image.height()) + "\n255\n";
    const float* r = image.plane(0);
    const float* g = image.plane(1);
    const float* b = image.plane(2);
    for (int i = 0; i < image.height() * image.width(); ++i) {
        buf.push_back(static_cast<char>(to_byte(r[i])));
        buf.push_back(static_cast<char>(to_byte(g[i])));
        buf.push_back(static_cast<char>(to_byte(b[i])));
    }
    write_file(path, buf);
}

Tensor read_ppm(const std::string& path) {
    const std::string buf = read_file(path);
    int h = 0, w = 0;
    const std::size_t pos = parse_pnm_header(buf, "P6", h, w);
    const std::size_t need = static_cast<std::size_t>(h) * w * 3;
    if (buf.size() - pos != need) throw FormatError("corrupt ppm payload in " + path);
    Tensor image(3, h, w);
    float* r = image.plane(0);
    float* g = image.plane(1);
    float* b = image.plane(2);
    for (int i = 0; i < h * w; ++i) {
        r[i] = static_cast<unsigned char>(buf[pos + 3 * i + 0]) / 255.0f;
        g[i] = static_cast<unsigned char>(buf[pos + 3 * i + 1]) / 255.0f;
        b[i] = static_cast<unsigned char>(buf[pos + 3 * i + 2]) / 255.0f;
    }
    return image;
}

void write_pgm(const std::string& path, const Tensor& image) {
    if (image.channels() != 1) throw DataError("pgm image must have 1 channel");
    std::string buf = "P5\n" + std::to_string(image.width()) + " " +
                      std::to_string(image.height()) + "\n255\n";
    const float* p = image.plane(0);
    for (int i = 0; i < image.height() * image.width(); ++i)
        buf.push_back(static_cast<char>(to_byte(p[i])));
    write_file(path, buf);
}

Tensor read_pgm(const std::string& path) {
    const std::string buf = read_file(path);
    int h = 0, w = 0;
    const std::size_t pos = parse_pnm_header(buf, "P5", h, w);
    if (buf.size() - pos != static_cast<std::size_t>(h) * w)
        throw FormatError("corrupt pgm payload in " + path);
    Tensor image(1, h, w);
    float* p = image.plane(0);
    for (int i = 0; i < h * w; ++i)
        p[i] = static_cast<unsigned char>(buf[pos + i]) / 255.0f;
    return image;
}

void write_pgm_u8(const std::string& path, const std::vector<unsigned char>& data,
                  int height, int width) {
    if (static_cast<std::size_t>(height) * width != data.size())
        throw DataError("pgm data size mismatch");
    std::string buf = "P5\n" + std::to_string(width) + " " +
                      std::to_string(height) + "\n255\n";
    buf.append(reinterpret_cast<const char*>(data.data()), data.size());
    write_file(path, buf);
}

std::vector<unsigned char> read_pgm_u8(const std::string& path, int& height, int& width) {
    const std::string buf = read_file(path);
    const std::size_t pos = parse_pnm_header(buf, "P5", height, width);
    if (buf.size() - pos != static_cast<std::size_t>(height) * width)
        throw FormatError("corrupt pgm payload in " + path);
    std::vector<unsigned char> data(static_cast<std::size_t>(height) * width);
    std::memcpy(data.data(), buf.data() + pos, data.size());
    return data;
}

namespace {

// Middlebury color wheel: 55 hue bins over six color transitions.
struct ColorWheel {
    static constexpr int kCols = 55;
    float wheel[kCols][3];

    ColorWheel() {
        const int ry = 15, yg = 6, gc = 4, cb = 11, bm = 13, mr = 6;
        int k = 0;
        for (int i = 0; i < ry; ++i, ++k) set(k, 1.0f, i / float(ry), 0.0f);
        for (int i = 0; i < yg; ++i, ++k) set(k, 1.0f - i / float(yg), 1.0f, 0.0f);
        for (int i = 0; i < gc; ++i, ++k) set(k, 0.0f, 1.0f, i / float(gc));
        for (int i = 0; i < cb; ++i, ++k) set(k, 0.0f, 1.0f - i / float(cb), 1.0f);
        for (int i = 0; i < bm; ++i, ++k) set(k, i / float(bm), 0.0f, 1.0f);
        for (int i = 0; i < mr; ++i, ++k) set(k, 1.0f, 0.0f, 1.0f - i / float(mr));
    }

    void set(int k, float r, float g, float b) {
        wheel[k][0] = r;
        wheel[k][1] = g;
        wheel[k][2] = b;
    }
};

const ColorWheel& color_wheel() {
    static const ColorWheel wheel;
    return wheel;
}

}  // namespace

Tensor flow_to_color(const FlowField& flow, float max_norm) {
    if (flow.channels() != 2) throw DataError("flow field must have 2 channels");
    if (!flow.all_finite()) throw NumericError("non-finite flow value");
    const int h = flow.height();
    const int w = flow.width();
    const int n = h * w;
    const float* u = flow.plane(0);
    const float* v = flow.plane(1);

    if (max_norm <= 0.0f) {
        std::vector<float> norms(n);
        for (int i = 0; i < n; ++i) norms[i] = std::hypot(u[i], v[i]);
        std::vector<float> sorted = norms;
        std::sort(sorted.begin(), sorted.end());
        const auto rank = static_cast<std::size_t>(std::llround(0.99 * (n - 1)));
        max_norm = sorted[rank];
    }
    max_norm = std::max(max_norm, 1e-6f);

    const ColorWheel& cw = color_wheel();
    Tensor image(3, h, w);
    for (int i = 0; i < n; ++i) {
        const float rad = std::min(std::hypot(u[i], v[i]) / max_norm, 1.0f);
        const float a = std::atan2(-v[i], -u[i]) / float(M_PI);
        const float fk = (a + 1.0f) / 2.0f * (ColorWheel::kCols - 1);
        const int k0 = static_cast<int>(fk) % ColorWheel::kCols;
        const int k1 = (k0 + 1) % ColorWheel::kCols;
        const float f = fk - std::floor(fk);
        for (int c = 0; c < 3; ++c) {
            const float col = (1.0f - f) * cw.wheel[k0][c] + f * cw.wheel[k1][c];
            image.plane(c)[i] = 1.0f - rad * (1.0f - col);
        }
    }
    return image;
}

}  // namespace pyraflow
