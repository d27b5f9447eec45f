#include "pyraflow/pyramid.hpp"

#include <cmath>
#include <cstring>
#include <string>

#include "pyraflow/rng.hpp"

namespace pyraflow {

PyramidConfig PyramidConfig::defaults() {
    PyramidConfig c;
    c.predictors.assign(c.levels, PredictorSpec{});
    return c;
}

std::pair<int, int> PyramidConfig::level_size(int level) const {
    int h = base_h, w = base_w;
    for (int l = 0; l < level; ++l) {
        h = (h + 1) / 2;
        w = (w + 1) / 2;
    }
    return {h, w};
}

void PyramidConfig::validate() const {
    if (levels < 1) throw ConfigError("pyramid needs at least one level");
    if (static_cast<int>(predictors.size()) != levels)
        throw ConfigError("need one predictor spec per level, got " +
                          std::to_string(predictors.size()) + " for " +
                          std::to_string(levels) + " levels");
    const auto [ch, cw] = level_size(levels - 1);
    if (ch < 4 || cw < 4)
        throw ConfigError("coarsest level would be " + std::to_string(ch) + "x" +
                          std::to_string(cw) + "; needs at least 4x4");
    for (const auto& spec : predictors) {
        if (spec.widths.empty()) throw ConfigError("predictor has no layers");
        if (spec.widths.back() != 2)
            throw ConfigError("last predictor layer must emit 2 flow channels");
        if (spec.kernel < 1 || spec.kernel % 2 == 0)
            throw ConfigError("predictor kernel must be odd");
        for (int w : spec.widths)
            if (w < 1) throw ConfigError("predictor widths must be >= 1");
    }
}

NetGrads NetGrads::zeros_like(const PyramidNet& net) {
    NetGrads g;
    g.levels.resize(net.levels.size());
    for (std::size_t l = 0; l < net.levels.size(); ++l) {
        g.levels[l].resize(net.levels[l].size());
        for (std::size_t i = 0; i < net.levels[l].size(); ++i) {
            g.levels[l][i].weights.assign(net.levels[l][i].weights.size(), 0.0f);
            g.levels[l][i].bias.assign(net.levels[l][i].bias.size(), 0.0f);
        }
    }
    return g;
}

void NetGrads::add(const NetGrads& o) {
    for (std::size_t l = 0; l < levels.size(); ++l)
        for (std::size_t i = 0; i < levels[l].size(); ++i) {
            auto& a = levels[l][i];
            const auto& b = o.levels[l][i];
            for (std::size_t j = 0; j < a.weights.size(); ++j) a.weights[j] += b.weights[j];
            for (std::size_t j = 0; j < a.bias.size(); ++j) a.bias[j] += b.bias[j];
        }
}

void NetGrads::scale(float s) {
    for (auto& lv : levels)
        for (auto& g : lv) {
            for (float& v : g.weights) v *= s;
            for (float& v : g.bias) v *= s;
        }
}

PyramidNet init_net(const PyramidConfig& config) {
    config.validate();
    PyramidNet net;
    net.config = config;
    net.levels.resize(config.levels);
    for (int l = 0; l < config.levels; ++l) {
        const auto& spec = config.predictors[l];
        int in = 8;
        for (std::size_t i = 0; i < spec.widths.size(); ++i) {
            ConvLayer layer;
            layer.in_channels = in;
            layer.out_channels = spec.widths[i];
            layer.kernel = spec.kernel;
            layer.activation =
                i + 1 == spec.widths.size() ? Activation::none : Activation::relu;
            const float bound =
                1.0f / std::sqrt(static_cast<float>(in) * spec.kernel * spec.kernel);
            Rng rng(stream_seed(config.seed, 0x11171, l, i));
            layer.weights.resize(static_cast<std::size_t>(layer.out_channels) * in *
                                 spec.kernel * spec.kernel);
            for (float& w : layer.weights) w = rng.uniform(-bound, bound);
            layer.bias.assign(layer.out_channels, 0.0f);
            net.levels[l].push_back(std::move(layer));
            in = spec.widths[i];
        }
    }
    return net;
}

std::vector<Tensor> build_pyramid(const Tensor& image, int levels) {
    if (levels < 1) throw ConfigError("pyramid needs at least one level");
    std::vector<Tensor> pyr;
    pyr.reserve(levels);
    pyr.push_back(image);
    for (int l = 1; l < levels; ++l) {
        const int nh = (pyr.back().height() + 1) / 2;
        const int nw = (pyr.back().width() + 1) / 2;
        if (nh < 4 || nw < 4)
            throw ConfigError("image too small for " + std::to_string(levels) +
                              " pyramid levels");
        pyr.push_back(avg_downsample2x(pyr.back()));
    }
    if (pyr.back().height() < 4 || pyr.back().width() < 4)
        throw ConfigError("image too small for " + std::to_string(levels) +
                          " pyramid levels");
    return pyr;
}

Tensor level_input(const Tensor& img1_l, const Tensor& img2_l,
                   const FlowField& flow_up) {
    if (img1_l.channels() != 3 || img2_l.channels() != 3)
        throw ConfigError("level_input expects 3-channel images");
    if (flow_up.channels() != 2) throw ConfigError("level_input expects 2-channel flow");
    if (!img1_l.same_shape(img2_l) || img1_l.height() != flow_up.height() ||
        img1_l.width() != flow_up.width())
        throw ConfigError("level_input shape mismatch");

    const Tensor warped = warp(img2_l, flow_up);
    const std::size_t plane = static_cast<std::size_t>(img1_l.height()) * img1_l.width();
    Tensor out(8, img1_l.height(), img1_l.width());
    std::memcpy(out.plane(0), img1_l.data(), sizeof(float) * plane * 3);
    std::memcpy(out.plane(3), warped.data(), sizeof(float) * plane * 3);
    std::memcpy(out.plane(6), flow_up.data(), sizeof(float) * plane * 2);
    return out;
}

namespace {

// out = 2 * (x - mean(x)) over one spatial plane; safe in place
void center_channel(const float* x, float* out, std::size_t n) {
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) sum += x[i];
    const float mean = static_cast<float>(sum / static_cast<double>(n));
    for (std::size_t i = 0; i < n; ++i) out[i] = 2.0f * (x[i] - mean);
}

// The predictor standardizes its six image channels to zero mean (doubled to
// restore contrast) before the conv stack; a DC offset in those channels
// otherwise pins training to the zero-flow plateau for the whole budget.
// Flow channels pass through: their magnitude is the signal.
Tensor standardize_images(const Tensor& input) {
    Tensor out = input;
    const std::size_t plane =
        static_cast<std::size_t>(input.height()) * input.width();
    for (int c = 0; c < 6; ++c)
        center_channel(input.plane(c), out.plane(c), plane);
    return out;
}

}  // namespace

std::vector<Tensor> predictor_forward(const std::vector<ConvLayer>& layers,
                                      const Tensor& input) {
    std::vector<Tensor> acts;
    acts.reserve(layers.size());
    const Tensor normalized = standardize_images(input);
    const Tensor* x = &normalized;
    for (const auto& layer : layers) {
        acts.push_back(conv2d(*x, layer));
        x = &acts.back();
    }
    return acts;
}

namespace {

Tensor add(const Tensor& a, const Tensor& b) {
    Tensor out = a;
    const float* pb = b.data();
    float* po = out.data();
    for (std::size_t i = 0; i < out.size(); ++i) po[i] += pb[i];
    return out;
}

Tensor scaled(const Tensor& a, float s) {
    Tensor out = a;
    for (float& v : out.flat()) v *= s;
    return out;
}

Tensor slice_channels(const Tensor& t, int from, int count) {
    Tensor out(count, t.height(), t.width());
    const std::size_t plane = static_cast<std::size_t>(t.height()) * t.width();
    std::memcpy(out.data(), t.plane(from), sizeof(float) * plane * count);
    return out;
}

// Backprop through one level's conv stack; fills that level's LayerGrads and
// returns the gradient with respect to the raw 8-channel input when asked.
Tensor predictor_backward(const std::vector<ConvLayer>& layers,
                          const LevelCache& cache, const Tensor& grad_residual,
                          std::vector<LayerGrads>& out, bool need_input_grad) {
    const Tensor normalized = standardize_images(cache.input);
    Tensor g = grad_residual;
    for (int i = static_cast<int>(layers.size()) - 1; i >= 0; --i) {
        const Tensor& in = i == 0 ? normalized : cache.acts[i - 1];
        const bool want_input = i > 0 || need_input_grad;
        ConvGrads cg = conv2d_backward(in, layers[i], cache.acts[i], g, want_input);
        out[i].weights = std::move(cg.weights);
        out[i].bias = std::move(cg.bias);
        if (want_input) g = std::move(cg.input);
    }
    // centering is self-adjoint, so the raw-input grad reuses the same map
    if (need_input_grad) {
        const std::size_t plane = static_cast<std::size_t>(g.height()) * g.width();
        for (int c = 0; c < 6; ++c) center_channel(g.plane(c), g.plane(c), plane);
    }
    return g;
}

}  // namespace

std::vector<FlowField> forward(const PyramidNet& net, const Tensor& img1,
                               const Tensor& img2, ForwardCache* cache,
                               int finest_level) {
    net.config.validate();
    const int K = net.config.levels;
    if (finest_level < 0 || finest_level >= K)
        throw ConfigError("finest_level out of range");
    if (img1.channels() != 3 || img2.channels() != 3)
        throw ConfigError("forward expects 3-channel images");
    if (!img1.same_shape(img2))
        throw ConfigError("forward: image shapes differ");
    if (img1.height() != net.config.base_h || img1.width() != net.config.base_w)
        throw ConfigError("forward: image is " + std::to_string(img1.height()) + "x" +
                          std::to_string(img1.width()) + ", config expects " +
                          std::to_string(net.config.base_h) + "x" +
                          std::to_string(net.config.base_w));

    const auto p1 = build_pyramid(img1, K);
    const auto p2 = build_pyramid(img2, K);
    if (cache) cache->levels.assign(K, LevelCache{});

    std::vector<FlowField> flows(K);
    for (int l = K - 1; l >= finest_level; --l) {
        FlowField flow_up;
        if (l == K - 1) {
            flow_up = FlowField(2, p1[l].height(), p1[l].width(), 0.0f);
        } else {
            flow_up = scaled(
                bilinear_upsample2x(flows[l + 1], p1[l].height(), p1[l].width()), 2.0f);
        }
        Tensor input = level_input(p1[l], p2[l], flow_up);
        std::vector<Tensor> acts = predictor_forward(net.levels[l], input);
        flows[l] = add(flow_up, acts.back());
        if (cache) {
            auto& lc = cache->levels[l];
            lc.img1 = p1[l];
            lc.img2 = p2[l];
            lc.flow_up = std::move(flow_up);
            lc.input = std::move(input);
            lc.acts = std::move(acts);
            lc.flow = flows[l];
        }
    }
    return flows;
}

NetGrads backward_level(const PyramidNet& net, const ForwardCache& cache,
                        int level, const FlowField& grad_flow) {
    NetGrads grads = NetGrads::zeros_like(net);
    if (level < 0 || level >= static_cast<int>(net.levels.size()))
        throw ConfigError("backward_level: level out of range");
    predictor_backward(net.levels[level], cache.levels[level], grad_flow,
                       grads.levels[level], false);
    return grads;
}

NetGrads backward_full(const PyramidNet& net, const ForwardCache& cache,
                       const FlowField& grad_flow0) {
    NetGrads grads = NetGrads::zeros_like(net);
    const int K = static_cast<int>(net.levels.size());
    FlowField gf = grad_flow0;
    for (int l = 0; l < K; ++l) {
        const auto& lc = cache.levels[l];
        const bool coarsest = l == K - 1;
        Tensor gx = predictor_backward(net.levels[l], lc, gf, grads.levels[l], !coarsest);
        if (coarsest) break;  // flow_up is the constant zero field there
        // flow_l = flow_up + G_l([img1 | warp(img2, flow_up) | flow_up])
        FlowField g_up = add(gf, slice_channels(gx, 6, 2));
        WarpGrads wg =
            warp_backward(lc.img2, lc.flow_up, slice_channels(gx, 3, 3), false);
        g_up = add(g_up, wg.flow);
        // flow_up = 2 * upsample(flow_{l+1})
        const auto [nh, nw] = net.config.level_size(l + 1);
        gf = scaled(bilinear_upsample2x_backward(g_up, nh, nw), 2.0f);
    }
    return grads;
}

std::size_t count_params(const PyramidNet& net) {
    std::size_t n = 0;
    for (const auto& level : net.levels)
        for (const auto& layer : level) n += layer.param_count();
    return n;
}

}  // namespace pyraflow
