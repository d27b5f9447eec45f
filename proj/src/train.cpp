#include "pyraflow/train.hpp"

#include <chrono>
#include <cmath>
#include <cstring>

#include "pyraflow/error.hpp"
#include "pyraflow/rng.hpp"

namespace pyraflow {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

Tensor scaled(Tensor t, float s) {
    for (float& v : t.flat()) v *= s;
    return t;
}

Tensor add(const Tensor& a, const Tensor& b) {
    Tensor out = a;
    const float* pb = b.data();
    float* po = out.data();
    for (std::size_t i = 0; i < out.size(); ++i) po[i] += pb[i];
    return out;
}

// Plain EPE (no eps), pixel-pooled across samples by the caller.
void accumulate_epe(const FlowField& pred, const FlowField& gt, const Tensor& mask,
                    double& sum, std::int64_t& count) {
    const float* pu = pred.plane(0);
    const float* pv = pred.plane(1);
    const float* gu = gt.plane(0);
    const float* gv = gt.plane(1);
    const float* mk = mask.plane(0);
    const int n = pred.height() * pred.width();
    for (int i = 0; i < n; ++i) {
        if (mk[i] < 0.5f) continue;
        sum += std::hypot(double(pu[i]) - gu[i], double(pv[i]) - gv[i]);
        ++count;
    }
}

// Backprop through one level's conv stack; grads are accumulated into
// acc (weights then bias per layer).
void predictor_backward_acc(const std::vector<ConvLayer>& layers, const Tensor& input,
                            const std::vector<Tensor>& acts, const Tensor& grad_out,
                            std::vector<LayerGrads>& acc) {
    Tensor g = grad_out;
    for (int i = static_cast<int>(layers.size()) - 1; i >= 0; --i) {
        const Tensor& in = i == 0 ? input : acts[i - 1];
        ConvGrads cg = conv2d_backward(in, layers[i], acts[i], g, i > 0);
        for (std::size_t j = 0; j < cg.weights.size(); ++j)
            acc[i].weights[j] += cg.weights[j];
        for (std::size_t j = 0; j < cg.bias.size(); ++j) acc[i].bias[j] += cg.bias[j];
        if (i > 0) g = std::move(cg.input);
    }
}

std::vector<LayerGrads> zero_grads(const std::vector<ConvLayer>& layers) {
    std::vector<LayerGrads> g(layers.size());
    for (std::size_t i = 0; i < layers.size(); ++i) {
        g[i].weights.assign(layers[i].weights.size(), 0.0f);
        g[i].bias.assign(layers[i].bias.size(), 0.0f);
    }
    return g;
}

float full_res_val_epe(const PyramidNet& net, const Dataset& dataset,
                       const std::vector<int>& val_idx) {
    double sum = 0.0;
    std::int64_t count = 0;
    for (int i : val_idx) {
        const Sample& s = dataset.samples[i];
        const auto flows = forward(net, s.image1, s.image2);
        accumulate_epe(flows[0], s.flow, s.mask, sum, count);
    }
    if (count == 0) throw DataError("validation set has no valid pixels");
    return static_cast<float>(sum / count);
}

}  // namespace

void TrainConfig::validate() const {
    if (epochs_per_level < 0) throw ConfigError("epochs_per_level must be >= 0");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(learning_rate > 0.0f)) throw ConfigError("learning_rate must be > 0");
    if (!(beta1 > 0.0f && beta1 < 1.0f) || !(beta2 > 0.0f && beta2 < 1.0f))
        throw ConfigError("Adam betas must lie in (0, 1)");
    if (!(adam_eps > 0.0f)) throw ConfigError("adam_eps must be > 0");
    if (!(epe_eps > 0.0f)) throw ConfigError("epe_eps must be > 0");
    if (!(split > 0.0f && split < 1.0f)) throw ConfigError("split must lie in (0, 1)");
}

EpeResult epe_loss(const FlowField& pred, const FlowField& gt, const Tensor& mask,
                   float eps) {
    if (pred.channels() != 2 || gt.channels() != 2)
        throw ConfigError("epe_loss expects 2-channel flow fields");
    if (!pred.same_shape(gt) || mask.channels() != 1 ||
        mask.height() != pred.height() || mask.width() != pred.width())
        throw ConfigError("epe_loss shape mismatch");

    const int n = pred.height() * pred.width();
    const float* pu = pred.plane(0);
    const float* pv = pred.plane(1);
    const float* gu = gt.plane(0);
    const float* gv = gt.plane(1);
    const float* mk = mask.plane(0);

    std::int64_t count = 0;
    for (int i = 0; i < n; ++i)
        if (mk[i] >= 0.5f) ++count;
    if (count == 0) throw DataError("epe_loss: mask has no valid pixels");

    EpeResult r;
    r.grad = FlowField(2, pred.height(), pred.width(), 0.0f);
    float* du_out = r.grad.plane(0);
    float* dv_out = r.grad.plane(1);
    double sum = 0.0;
    const float inv_count = 1.0f / static_cast<float>(count);
    for (int i = 0; i < n; ++i) {
        if (mk[i] < 0.5f) continue;
        const float du = pu[i] - gu[i];
        const float dv = pv[i] - gv[i];
        const float d = std::sqrt(du * du + dv * dv + eps);
        sum += d;
        du_out[i] = du / d * inv_count;
        dv_out[i] = dv / d * inv_count;
    }
    r.loss = static_cast<float>(sum / count);
    return r;
}

void adam_step(std::span<float> params, std::span<const float> grads,
               AdamState& state, int t, const TrainConfig& config) {
    if (t < 1) throw ConfigError("adam_step needs t >= 1");
    if (params.size() != grads.size())
        throw ConfigError("adam_step: parameter/gradient size mismatch");
    if (state.m.empty()) {
        state.m.assign(params.size(), 0.0f);
        state.v.assign(params.size(), 0.0f);
    }
    if (state.m.size() != params.size())
        throw ConfigError("adam_step: state size mismatch");

    const float b1 = config.beta1, b2 = config.beta2;
    const double bc1 = 1.0 - std::pow(double(b1), t);
    const double bc2 = 1.0 - std::pow(double(b2), t);
    const float lr = config.learning_rate;
    const float eps = config.adam_eps;
    for (std::size_t i = 0; i < params.size(); ++i) {
        const float g = grads[i];
        state.m[i] = b1 * state.m[i] + (1.0f - b1) * g;
        state.v[i] = b2 * state.v[i] + (1.0f - b2) * g * g;
        const float mhat = static_cast<float>(state.m[i] / bc1);
        const float vhat = static_cast<float>(state.v[i] / bc2);
        params[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
}

std::vector<FlowField> flow_pyramid_targets(const FlowField& gt, int levels) {
    if (gt.channels() != 2) throw ConfigError("flow target must have 2 channels");
    if (levels < 1) throw ConfigError("need at least one level");
    std::vector<FlowField> targets;
    targets.reserve(levels);
    targets.push_back(gt);
    for (int l = 1; l < levels; ++l)
        targets.push_back(scaled(avg_downsample2x(targets.back()), 0.5f));
    return targets;
}

std::vector<Tensor> mask_pyramid(const Tensor& mask, int levels) {
    if (mask.channels() != 1) throw ConfigError("mask must have 1 channel");
    std::vector<Tensor> masks;
    masks.reserve(levels);
    masks.push_back(mask);
    for (int l = 1; l < levels; ++l) {
        Tensor m = avg_downsample2x(masks.back());
        for (float& v : m.flat()) v = v >= 0.5f ? 1.0f : 0.0f;
        masks.push_back(std::move(m));
    }
    return masks;
}

namespace {

// Everything one phase needs per training sample, fixed while the coarser
// levels stay frozen.
struct PhaseSample {
    Tensor input;      // 8-channel predictor input at the phase level
    FlowField flow_up;
    FlowField target;
    Tensor mask;
};

PhaseSample build_phase_sample(const PyramidNet& net, const Sample& s, int level) {
    const int K = net.config.levels;
    const auto p1 = build_pyramid(s.image1, K);
    const auto p2 = build_pyramid(s.image2, K);

    FlowField flow_up;
    if (level == K - 1) {
        flow_up = FlowField(2, p1[level].height(), p1[level].width(), 0.0f);
    } else {
        const auto flows = forward(net, s.image1, s.image2, nullptr, level + 1);
        flow_up = scaled(bilinear_upsample2x(flows[level + 1], p1[level].height(),
                                             p1[level].width()),
                         2.0f);
    }
    PhaseSample ps;
    ps.input = level_input(p1[level], p2[level], flow_up);
    ps.flow_up = std::move(flow_up);
    ps.target = std::move(flow_pyramid_targets(s.flow, level + 1).back());
    ps.mask = std::move(mask_pyramid(s.mask, level + 1).back());
    return ps;
}

void check_finite_loss(float loss) {
    if (!std::isfinite(loss)) throw NumericError("training loss is not finite");
}

}  // namespace

std::vector<EpochStats> train(PyramidNet& net, const Dataset& dataset,
                              const TrainConfig& config, const EpochCallback& on_epoch) {
    config.validate();
    net.config.validate();
    if (dataset.samples.empty()) throw ConfigError("training dataset is empty");
    for (const Sample& s : dataset.samples)
        if (s.image1.height() != net.config.base_h ||
            s.image1.width() != net.config.base_w)
            throw ConfigError("sample " + s.id + " resolution does not match model");

    const int n = static_cast<int>(dataset.samples.size());
    const int n_train = static_cast<int>(std::floor(n * config.split));
    if (n_train < 1 || n_train >= n)
        throw ConfigError("split " + std::to_string(config.split) + " leaves " +
                          std::to_string(n_train) + " train / " +
                          std::to_string(n - n_train) + " val samples");
    std::vector<int> train_idx(n_train);
    for (int i = 0; i < n_train; ++i) train_idx[i] = i;
    std::vector<int> val_idx(n - n_train);
    for (int i = n_train; i < n; ++i) val_idx[i - n_train] = i;

    const int K = net.config.levels;
    std::vector<EpochStats> history;

    if (config.mode == TrainConfig::Mode::sequential) {
        for (int level = K - 1; level >= 0; --level) {
            if (config.epochs_per_level == 0) break;
            // Coarser levels are frozen for this whole phase, so their
            // contribution per sample is a constant and is computed once.
            std::vector<PhaseSample> phase;
            phase.reserve(n_train);
            for (int i : train_idx)
                phase.push_back(build_phase_sample(net, dataset.samples[i], level));

            auto& layers = net.levels[level];
            std::vector<AdamState> state_w(layers.size()), state_b(layers.size());
            int t = 0;
            for (int epoch = 0; epoch < config.epochs_per_level; ++epoch) {
                const auto t0 = Clock::now();
                std::vector<int> order(n_train);
                for (int i = 0; i < n_train; ++i) order[i] = i;
                Rng rng(stream_seed(config.seed, 0xE90C, level, epoch));
                rng.shuffle(order);

                double loss_sum = 0.0;
                for (int b0 = 0; b0 < n_train; b0 += config.batch_size) {
                    const int b1 = std::min(b0 + config.batch_size, n_train);
                    auto grads = zero_grads(layers);
                    for (int bi = b0; bi < b1; ++bi) {
                        const PhaseSample& ps = phase[order[bi]];
                        const auto acts = predictor_forward(layers, ps.input);
                        const FlowField flow = add(ps.flow_up, acts.back());
                        EpeResult er = epe_loss(flow, ps.target, ps.mask, config.epe_eps);
                        check_finite_loss(er.loss);
                        loss_sum += er.loss;
                        predictor_backward_acc(layers, ps.input, acts, er.grad, grads);
                    }
                    const float inv = 1.0f / static_cast<float>(b1 - b0);
                    ++t;
                    for (std::size_t li = 0; li < layers.size(); ++li) {
                        for (float& g : grads[li].weights) g *= inv;
                        for (float& g : grads[li].bias) g *= inv;
                        adam_step(layers[li].weights, grads[li].weights, state_w[li], t,
                                  config);
                        adam_step(layers[li].bias, grads[li].bias, state_b[li], t,
                                  config);
                    }
                }
                EpochStats st;
                st.level = level;
                st.epoch = epoch;
                st.train_loss = static_cast<float>(loss_sum / n_train);
                st.val_epe = full_res_val_epe(net, dataset, val_idx);
                st.wall_ms = ms_since(t0);
                history.push_back(st);
                if (on_epoch) on_epoch(st);
            }
        }
        return history;
    }

    // End-to-end: one phase, finest-level loss through all levels.
    std::vector<std::vector<AdamState>> state_w(K), state_b(K);
    for (int l = 0; l < K; ++l) {
        state_w[l].resize(net.levels[l].size());
        state_b[l].resize(net.levels[l].size());
    }
    int t = 0;
    for (int epoch = 0; epoch < config.epochs_per_level; ++epoch) {
        const auto t0 = Clock::now();
        std::vector<int> order(n_train);
        for (int i = 0; i < n_train; ++i) order[i] = i;
        Rng rng(stream_seed(config.seed, 0xE90C, 0, epoch));
        rng.shuffle(order);

        double loss_sum = 0.0;
        for (int b0 = 0; b0 < n_train; b0 += config.batch_size) {
            const int b1 = std::min(b0 + config.batch_size, n_train);
            NetGrads grads = NetGrads::zeros_like(net);
            for (int bi = b0; bi < b1; ++bi) {
                const Sample& s = dataset.samples[train_idx[order[bi]]];
                ForwardCache cache;
                const auto flows = forward(net, s.image1, s.image2, &cache);
                EpeResult er = epe_loss(flows[0], s.flow, s.mask, config.epe_eps);
                check_finite_loss(er.loss);
                loss_sum += er.loss;
                grads.add(backward_full(net, cache, er.grad));
            }
            grads.scale(1.0f / static_cast<float>(b1 - b0));
            ++t;
            for (int l = 0; l < K; ++l)
                for (std::size_t li = 0; li < net.levels[l].size(); ++li) {
                    adam_step(net.levels[l][li].weights, grads.levels[l][li].weights,
                              state_w[l][li], t, config);
                    adam_step(net.levels[l][li].bias, grads.levels[l][li].bias,
                              state_b[l][li], t, config);
                }
        }
        EpochStats st;
        st.level = -1;
        st.epoch = epoch;
        st.train_loss = static_cast<float>(loss_sum / n_train);
        st.val_epe = full_res_val_epe(net, dataset, val_idx);
        st.wall_ms = ms_since(t0);
        history.push_back(st);
        if (on_epoch) on_epoch(st);
    }
    return history;
}

}  // namespace pyraflow
