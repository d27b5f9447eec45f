#include "pyraflow/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "pyraflow/parallel.hpp"

namespace pyraflow {

bool Tensor::all_finite() const {
    for (float v : data_)
        if (!std::isfinite(v)) return false;
    return true;
}

void ConvLayer::validate() const {
    if (in_channels < 1 || out_channels < 1)
        throw ConfigError("conv layer needs at least one input and output channel");
    if (kernel < 1 || kernel % 2 == 0)
        throw ConfigError("conv kernel must be odd, got " + std::to_string(kernel));
    const std::size_t nw =
        static_cast<std::size_t>(out_channels) * in_channels * kernel * kernel;
    if (weights.size() != nw)
        throw ConfigError("conv weight array has wrong length");
    if (bias.size() != static_cast<std::size_t>(out_channels))
        throw ConfigError("conv bias array has wrong length");
}

namespace {

// 16-lane float vector (GCC/Clang extension); the compiler lowers it to
// whatever SIMD width the target has, with identical element-wise results.
typedef float vf __attribute__((vector_size(64)));
constexpr int kLanes = 16;

inline vf vsplat(float s) { return (vf){} + s; }

inline vf vload(const float* p) {
    vf v;
    __builtin_memcpy(&v, p, sizeof(v));
    return v;
}

// Zero-padded copy, [C, H+2p, W+2p], with vector-width slack at the end so
// full-width loads on partial tiles stay in bounds.
std::vector<float> pad_zero(const float* src, int C, int H, int W, int p) {
    const int PH = H + 2 * p, PW = W + 2 * p;
    std::vector<float> pad(static_cast<std::size_t>(C) * PH * PW + kLanes, 0.0f);
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < H; ++y)
            std::memcpy(pad.data() + (static_cast<std::size_t>(c) * PH + y + p) * PW + p,
                        src + (static_cast<std::size_t>(c) * H + y) * W,
                        sizeof(float) * W);
    return pad;
}

// out[o,y,x] = bias[o] + sum_{c,dy,dx} w[((o*Cin+c)*k+dy)*k+dx] * pad[c,y+dy,x+dx]
// Register tile: NB output channels x 2 vector lanes, so every padded input
// load feeds 2*NB accumulator chains.
template <int NB>
void conv_rows(const float* pad, int Cin, int PW, std::size_t pplane,
               const float* w, int k, const float* bias, int o0,
               float* out, std::size_t plane, int H, int W) {
    const std::size_t wk = static_cast<std::size_t>(k) * k;
    const std::size_t wstride_o = static_cast<std::size_t>(Cin) * wk;
    for (int y = 0; y < H; ++y) {
        for (int xt = 0; xt < W; xt += 2 * kLanes) {
            vf acc0[NB], acc1[NB];
            for (int j = 0; j < NB; ++j)
                acc0[j] = acc1[j] = vsplat(bias ? bias[o0 + j] : 0.0f);
            for (int c = 0; c < Cin; ++c) {
                const float* prow_base =
                    pad + c * pplane + static_cast<std::size_t>(y) * PW + xt;
                const float* wbase = w + (static_cast<std::size_t>(o0) * Cin + c) * wk;
                for (int dy = 0; dy < k; ++dy) {
                    const float* prow = prow_base + static_cast<std::size_t>(dy) * PW;
                    for (int dx = 0; dx < k; ++dx) {
                        const vf s0 = vload(prow + dx);
                        const vf s1 = vload(prow + dx + kLanes);
                        for (int j = 0; j < NB; ++j) {
                            const vf wv = vsplat(wbase[j * wstride_o + dy * k + dx]);
                            acc0[j] += wv * s0;
                            acc1[j] += wv * s1;
                        }
                    }
                }
            }
            const int n0 = std::min(kLanes, W - xt);
            const int n1 = std::min(kLanes, std::max(0, W - xt - kLanes));
            for (int j = 0; j < NB; ++j) {
                float* r = out + (o0 + j) * plane + static_cast<std::size_t>(y) * W + xt;
                std::memcpy(r, &acc0[j], sizeof(float) * n0);
                if (n1 > 0) std::memcpy(r + kLanes, &acc1[j], sizeof(float) * n1);
            }
        }
    }
}

void conv_core(const float* pad, int Cin, int PW, std::size_t pplane,
               const float* w, int Cout, int k, const float* bias,
               float* out, int H, int W) {
    const std::size_t plane = static_cast<std::size_t>(H) * W;
    const int nblocks = (Cout + 3) / 4;
    parallel_for(nblocks, [&](std::int64_t b0, std::int64_t b1) {
        for (std::int64_t b = b0; b < b1; ++b) {
            const int o0 = static_cast<int>(b) * 4;
            switch (std::min(Cout - o0, 4)) {
                case 4: conv_rows<4>(pad, Cin, PW, pplane, w, k, bias, o0, out, plane, H, W); break;
                case 3: conv_rows<3>(pad, Cin, PW, pplane, w, k, bias, o0, out, plane, H, W); break;
                case 2: conv_rows<2>(pad, Cin, PW, pplane, w, k, bias, o0, out, plane, H, W); break;
                default: conv_rows<1>(pad, Cin, PW, pplane, w, k, bias, o0, out, plane, H, W); break;
            }
        }
    });
}

// Fixed-association partial-sum dot product; vectorizes without
// -ffast-math and gives the same bits on every call.
float dot_span(const float* __restrict a, const float* __restrict b, int n) {
    float s[16] = {0};
    int x = 0;
    for (; x + 16 <= n; x += 16)
        for (int j = 0; j < 16; ++j) s[j] += a[x + j] * b[x + j];
    float tail = 0.0f;
    for (; x < n; ++x) tail += a[x] * b[x];
    for (int h = 8; h > 0; h /= 2)
        for (int j = 0; j < h; ++j) s[j] += s[j + h];
    return s[0] + tail;
}

}  // namespace

Tensor conv2d(const Tensor& input, const ConvLayer& layer) {
    layer.validate();
    if (input.empty()) throw ConfigError("conv2d: empty input");
    if (layer.in_channels != input.channels())
        throw ConfigError("conv2d: layer expects " + std::to_string(layer.in_channels) +
                          " channels, input has " + std::to_string(input.channels()));
    const int H = input.height(), W = input.width(), k = layer.kernel, p = k / 2;
    const int PW = W + 2 * p;
    const std::size_t pplane = static_cast<std::size_t>(H + 2 * p) * PW;
    const auto pad = pad_zero(input.data(), input.channels(), H, W, p);

    Tensor out(layer.out_channels, H, W);
    conv_core(pad.data(), layer.in_channels, PW, pplane, layer.weights.data(),
              layer.out_channels, k, layer.bias.data(), out.data(), H, W);
    if (layer.activation == Activation::relu)
        for (float& v : out.flat()) v = v > 0.0f ? v : 0.0f;
    return out;
}

ConvGrads conv2d_backward(const Tensor& input, const ConvLayer& layer,
                          const Tensor& output, const Tensor& grad_out,
                          bool need_input_grad) {
    layer.validate();
    if (layer.in_channels != input.channels())
        throw ConfigError("conv2d_backward: input channel mismatch");
    if (output.channels() != layer.out_channels || !output.same_shape(grad_out) ||
        output.height() != input.height() || output.width() != input.width())
        throw ConfigError("conv2d_backward: shape mismatch");

    const int H = input.height(), W = input.width(), k = layer.kernel, p = k / 2;
    const int Cin = layer.in_channels, Cout = layer.out_channels;
    const std::size_t plane = static_cast<std::size_t>(H) * W;

    // d loss / d pre-activation; the relu gate is the sign of the forward
    // output (output > 0 iff pre-activation > 0).
    std::vector<float> gpre(grad_out.flat().begin(), grad_out.flat().end());
    if (layer.activation == Activation::relu) {
        const float* o = output.data();
        for (std::size_t i = 0; i < gpre.size(); ++i)
            if (!(o[i] > 0.0f)) gpre[i] = 0.0f;
    }

    ConvGrads g;
    g.weights.assign(layer.weights.size(), 0.0f);
    g.bias.assign(layer.bias.size(), 0.0f);

    for (int o = 0; o < Cout; ++o) {
        const float* gp = gpre.data() + o * plane;
        float acc = 0.0f;
        for (std::size_t i = 0; i < plane; ++i) acc += gp[i];
        g.bias[o] = acc;
    }

    const int PW = W + 2 * p;
    const std::size_t pplane = static_cast<std::size_t>(H + 2 * p) * PW;
    const auto padin = pad_zero(input.data(), Cin, H, W, p);
    const std::size_t wk = static_cast<std::size_t>(k) * k;

    // gpre rows zero-extended to a whole number of vector tiles, so the
    // dx-shifted correlation below needs no tail handling.
    const int WT = (W + kLanes - 1) / kLanes * kLanes;
    std::vector<float> gtile(static_cast<std::size_t>(Cout) * H * WT + kLanes, 0.0f);
    for (int o = 0; o < Cout; ++o)
        for (int y = 0; y < H; ++y)
            std::memcpy(gtile.data() + (static_cast<std::size_t>(o) * H + y) * WT,
                        gpre.data() + o * plane + static_cast<std::size_t>(y) * W,
                        sizeof(float) * W);

    parallel_for(Cout, [&](std::int64_t o_lo, std::int64_t o_hi) {
        for (std::int64_t o = o_lo; o < o_hi; ++o) {
            float* dw_o = g.weights.data() + static_cast<std::size_t>(o) * Cin * wk;
            for (int c = 0; c < Cin; ++c) {
                for (int dy = 0; dy < k; ++dy) {
                    const float* prow_base =
                        padin.data() + c * pplane + static_cast<std::size_t>(dy) * PW;
                    float* dw = dw_o + (static_cast<std::size_t>(c) * k + dy) * k;
                    if (k <= 13) {
                        vf acc[13];
                        for (int dx = 0; dx < k; ++dx) acc[dx] = vsplat(0.0f);
                        for (int y = 0; y < H; ++y) {
                            const float* grow =
                                gtile.data() + (static_cast<std::size_t>(o) * H + y) * WT;
                            const float* prow = prow_base + static_cast<std::size_t>(y) * PW;
                            for (int xt = 0; xt < WT; xt += kLanes) {
                                const vf gv = vload(grow + xt);
                                for (int dx = 0; dx < k; ++dx)
                                    acc[dx] += gv * vload(prow + xt + dx);
                            }
                        }
                        for (int dx = 0; dx < k; ++dx) {
                            float s = 0.0f;
                            for (int h = kLanes / 2; h > 0; h /= 2)
                                for (int j = 0; j < h; ++j) acc[dx][j] += acc[dx][j + h];
                            s = acc[dx][0];
                            dw[dx] = s;
                        }
                    } else {
                        for (int y = 0; y < H; ++y) {
                            const float* grow =
                                gpre.data() + o * plane + static_cast<std::size_t>(y) * W;
                            const float* prow = prow_base + static_cast<std::size_t>(y) * PW;
                            for (int dx = 0; dx < k; ++dx)
                                dw[dx] += dot_span(grow, prow + dx, W);
                        }
                    }
                }
            }
        }
    });

    if (need_input_grad) {
        // Full correlation: conv of padded gpre with flipped, transposed
        // weights.
        std::vector<float> wt(layer.weights.size());
        for (int o = 0; o < Cout; ++o)
            for (int c = 0; c < Cin; ++c)
                for (int dy = 0; dy < k; ++dy)
                    for (int dx = 0; dx < k; ++dx)
                        wt[(static_cast<std::size_t>(c) * Cout + o) * wk +
                           static_cast<std::size_t>(k - 1 - dy) * k + (k - 1 - dx)] =
                            layer.weights[layer.weight_index(o, c, dy, dx)];
        const auto padg = pad_zero(gpre.data(), Cout, H, W, p);
        g.input = Tensor(Cin, H, W);
        conv_core(padg.data(), Cout, PW, pplane, wt.data(), Cin, k, nullptr,
                  g.input.data(), H, W);
    }
    return g;
}

Tensor avg_downsample2x(const Tensor& input) {
    if (input.empty()) throw ConfigError("avg_downsample2x: empty input");
    const int H = input.height(), W = input.width();
    if (H < 2 || W < 2) throw ConfigError("avg_downsample2x: input must be at least 2x2");
    const int OH = (H + 1) / 2, OW = (W + 1) / 2;
    Tensor out(input.channels(), OH, OW);
    for (int c = 0; c < input.channels(); ++c) {
        const float* in = input.plane(c);
        float* o = out.plane(c);
        for (int Y = 0; Y < OH; ++Y) {
            const int y0 = 2 * Y, ny = std::min(2, H - y0);
            for (int X = 0; X < OW; ++X) {
                const int x0 = 2 * X, nx = std::min(2, W - x0);
                float s = 0.0f;
                for (int dy = 0; dy < ny; ++dy)
                    for (int dx = 0; dx < nx; ++dx)
                        s += in[static_cast<std::size_t>(y0 + dy) * W + x0 + dx];
                o[static_cast<std::size_t>(Y) * OW + X] = s / static_cast<float>(ny * nx);
            }
        }
    }
    return out;
}

Tensor avg_downsample2x_backward(const Tensor& grad_out, int in_h, int in_w) {
    const int OH = grad_out.height(), OW = grad_out.width();
    if (OH != (in_h + 1) / 2 || OW != (in_w + 1) / 2)
        throw ConfigError("avg_downsample2x_backward: size mismatch");
    Tensor g(grad_out.channels(), in_h, in_w);
    for (int c = 0; c < grad_out.channels(); ++c) {
        const float* go = grad_out.plane(c);
        float* gi = g.plane(c);
        for (int y = 0; y < in_h; ++y) {
            const int Y = y / 2, ny = std::min(2, in_h - 2 * Y);
            for (int x = 0; x < in_w; ++x) {
                const int X = x / 2, nx = std::min(2, in_w - 2 * X);
                gi[static_cast<std::size_t>(y) * in_w + x] =
                    go[static_cast<std::size_t>(Y) * OW + X] / static_cast<float>(ny * nx);
            }
        }
    }
    return g;
}

namespace {

// Align-corners source coordinate map for one axis.
struct AxisMap {
    std::vector<int> i0, i1;
    std::vector<float> frac;
};

AxisMap axis_map(int in_n, int out_n) {
    AxisMap m;
    m.i0.resize(out_n);
    m.i1.resize(out_n);
    m.frac.resize(out_n);
    const double scale = out_n > 1 ? static_cast<double>(in_n - 1) / (out_n - 1) : 0.0;
    for (int i = 0; i < out_n; ++i) {
        const double s = i * scale;
        int s0 = static_cast<int>(s);
        if (s0 > in_n - 1) s0 = in_n - 1;
        m.i0[i] = s0;
        m.i1[i] = std::min(s0 + 1, in_n - 1);
        m.frac[i] = static_cast<float>(s - s0);
    }
    return m;
}

}  // namespace

Tensor bilinear_upsample2x(const Tensor& input, int out_h, int out_w) {
    if (input.empty()) throw ConfigError("bilinear_upsample2x: empty input");
    if (out_h < input.height() || out_w < input.width())
        throw ConfigError("bilinear_upsample2x: output smaller than input");
    const int h = input.height(), w = input.width();
    const AxisMap ym = axis_map(h, out_h), xm = axis_map(w, out_w);
    Tensor out(input.channels(), out_h, out_w);
    for (int c = 0; c < input.channels(); ++c) {
        const float* in = input.plane(c);
        float* o = out.plane(c);
        for (int y = 0; y < out_h; ++y) {
            const float* r0 = in + static_cast<std::size_t>(ym.i0[y]) * w;
            const float* r1 = in + static_cast<std::size_t>(ym.i1[y]) * w;
            const float fy = ym.frac[y];
            for (int x = 0; x < out_w; ++x) {
                const float fx = xm.frac[x];
                const float top = r0[xm.i0[x]] + fx * (r0[xm.i1[x]] - r0[xm.i0[x]]);
                const float bot = r1[xm.i0[x]] + fx * (r1[xm.i1[x]] - r1[xm.i0[x]]);
                o[static_cast<std::size_t>(y) * out_w + x] = top + fy * (bot - top);
            }
        }
    }
    return out;
}

Tensor bilinear_upsample2x_backward(const Tensor& grad_out, int in_h, int in_w) {
    const int out_h = grad_out.height(), out_w = grad_out.width();
    if (out_h < in_h || out_w < in_w)
        throw ConfigError("bilinear_upsample2x_backward: size mismatch");
    const AxisMap ym = axis_map(in_h, out_h), xm = axis_map(in_w, out_w);
    Tensor g(grad_out.channels(), in_h, in_w);
    for (int c = 0; c < grad_out.channels(); ++c) {
        const float* go = grad_out.plane(c);
        float* gi = g.plane(c);
        for (int y = 0; y < out_h; ++y) {
            const float fy = ym.frac[y];
            float* r0 = gi + static_cast<std::size_t>(ym.i0[y]) * in_w;
            float* r1 = gi + static_cast<std::size_t>(ym.i1[y]) * in_w;
            for (int x = 0; x < out_w; ++x) {
                const float v = go[static_cast<std::size_t>(y) * out_w + x];
                const float fx = xm.frac[x];
                r0[xm.i0[x]] += (1 - fy) * (1 - fx) * v;
                r0[xm.i1[x]] += (1 - fy) * fx * v;
                r1[xm.i0[x]] += fy * (1 - fx) * v;
                r1[xm.i1[x]] += fy * fx * v;
            }
        }
    }
    return g;
}

Tensor warp(const Tensor& image, const FlowField& flow) {
    if (flow.channels() != 2) throw ConfigError("warp: flow must have 2 channels");
    if (flow.height() != image.height() || flow.width() != image.width())
        throw ConfigError("warp: image and flow sizes differ");
    const int C = image.channels(), H = image.height(), W = image.width();
    const float* u = flow.plane(0);
    const float* v = flow.plane(1);
    Tensor out(C, H, W);
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            const std::size_t i = static_cast<std::size_t>(y) * W + x;
            float sx = x + u[i], sy = y + v[i];
            sx = std::clamp(sx, 0.0f, static_cast<float>(W - 1));
            sy = std::clamp(sy, 0.0f, static_cast<float>(H - 1));
            const int x0 = static_cast<int>(sx), y0 = static_cast<int>(sy);
            const int x1 = std::min(x0 + 1, W - 1), y1 = std::min(y0 + 1, H - 1);
            const float ax = sx - x0, ay = sy - y0;
            for (int c = 0; c < C; ++c) {
                const float* in = image.plane(c);
                const float tl = in[static_cast<std::size_t>(y0) * W + x0];
                const float tr = in[static_cast<std::size_t>(y0) * W + x1];
                const float bl = in[static_cast<std::size_t>(y1) * W + x0];
                const float br = in[static_cast<std::size_t>(y1) * W + x1];
                const float top = tl + ax * (tr - tl);
                const float bot = bl + ax * (br - bl);
                out.plane(c)[i] = top + ay * (bot - top);
            }
        }
    }
    return out;
}

WarpGrads warp_backward(const Tensor& image, const FlowField& flow,
                        const Tensor& grad_out, bool need_image_grad) {
    if (flow.channels() != 2) throw ConfigError("warp_backward: flow must have 2 channels");
    if (flow.height() != image.height() || flow.width() != image.width() ||
        !grad_out.same_shape(image))
        throw ConfigError("warp_backward: shape mismatch");
    const int C = image.channels(), H = image.height(), W = image.width();
    const float* u = flow.plane(0);
    const float* v = flow.plane(1);

    WarpGrads g;
    g.flow = FlowField(2, H, W);
    if (need_image_grad) g.image = Tensor(C, H, W);
    float* gu = g.flow.plane(0);
    float* gv = g.flow.plane(1);

    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            const std::size_t i = static_cast<std::size_t>(y) * W + x;
            const float rx = x + u[i], ry = y + v[i];
            const float sx = std::clamp(rx, 0.0f, static_cast<float>(W - 1));
            const float sy = std::clamp(ry, 0.0f, static_cast<float>(H - 1));
            const int x0 = static_cast<int>(sx), y0 = static_cast<int>(sy);
            const int x1 = std::min(x0 + 1, W - 1), y1 = std::min(y0 + 1, H - 1);
            const float ax = sx - x0, ay = sy - y0;
            // the clamp kills the derivative outside the open interval
            const float gate_x = (rx > 0.0f && rx < W - 1) ? 1.0f : 0.0f;
            const float gate_y = (ry > 0.0f && ry < H - 1) ? 1.0f : 0.0f;
            float du = 0.0f, dv = 0.0f;
            for (int c = 0; c < C; ++c) {
                const float* in = image.plane(c);
                const float go = grad_out.plane(c)[i];
                const float tl = in[static_cast<std::size_t>(y0) * W + x0];
                const float tr = in[static_cast<std::size_t>(y0) * W + x1];
                const float bl = in[static_cast<std::size_t>(y1) * W + x0];
                const float br = in[static_cast<std::size_t>(y1) * W + x1];
                du += go * ((1 - ay) * (tr - tl) + ay * (br - bl));
                dv += go * ((1 - ax) * (bl - tl) + ax * (br - tr));
                if (need_image_grad) {
                    float* gi = g.image.plane(c);
                    gi[static_cast<std::size_t>(y0) * W + x0] += go * (1 - ax) * (1 - ay);
                    gi[static_cast<std::size_t>(y0) * W + x1] += go * ax * (1 - ay);
                    gi[static_cast<std::size_t>(y1) * W + x0] += go * (1 - ax) * ay;
                    gi[static_cast<std::size_t>(y1) * W + x1] += go * ax * ay;
                }
            }
            gu[i] = du * gate_x;
            gv[i] = dv * gate_y;
        }
    }
    return g;
}

}  // namespace pyraflow
