#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "pyraflow/tensor.hpp"

namespace pyraflow {

// Per-level residual predictor: conv stack with one kernel size and the
// listed output widths. The first layer always takes 8 input channels
// (3 image-1 + 3 warped image-2 + 2 flow); the last width must be 2 and
// runs without activation.
struct PredictorSpec {
    std::vector<int> widths{16, 32, 16, 8, 2};
    int kernel = 7;
};

struct PyramidConfig {
    int levels = 3;
    int base_h = 64;
    int base_w = 64;
    std::vector<PredictorSpec> predictors;  // one per level, index 0 = finest
    std::uint64_t seed = 1;

    // Desk-scale default: 3 levels at 64x64, 7x7 kernels, 8->16->32->16->8->2.
    static PyramidConfig defaults();

    std::pair<int, int> level_size(int level) const;
    void validate() const;
};

struct PyramidNet {
    PyramidConfig config;
    std::vector<std::vector<ConvLayer>> levels;  // [level][layer], 0 = finest
};

struct LayerGrads {
    std::vector<float> weights;
    std::vector<float> bias;
};

struct NetGrads {
    std::vector<std::vector<LayerGrads>> levels;

    static NetGrads zeros_like(const PyramidNet& net);
    void add(const NetGrads& o);
    void scale(float s);
};

// Everything forward() computed, kept for the backward pass.
struct LevelCache {
    Tensor img1, img2;        // pyramid images at this level
    FlowField flow_up;        // 2x-scaled upsampled coarser flow (zero at coarsest)
    Tensor input;             // 8-channel predictor input
    std::vector<Tensor> acts; // per-layer outputs; acts.back() is the residual flow
    FlowField flow;           // flow_up + residual
};

struct ForwardCache {
    std::vector<LevelCache> levels;  // index 0 = finest
};

// Weights uniform in (-1/sqrt(fan_in), 1/sqrt(fan_in)), biases zero, fully
// determined by config.seed.
PyramidNet init_net(const PyramidConfig& config);

// element 0 is the input; element l+1 = avg_downsample2x(element l)
std::vector<Tensor> build_pyramid(const Tensor& image, int levels);

// [img1_l | warp(img2_l, flow_up) | flow_up], 8 channels
Tensor level_input(const Tensor& img1_l, const Tensor& img2_l,
                   const FlowField& flow_up);

std::vector<Tensor> predictor_forward(const std::vector<ConvLayer>& layers,
                                      const Tensor& input);

// Coarse-to-fine residual estimation. Returns one flow per level, index 0 =
// finest. With finest_level > 0 only levels [finest_level, K) are run and
// finer entries stay empty.
std::vector<FlowField> forward(const PyramidNet& net, const Tensor& img1,
                               const Tensor& img2, ForwardCache* cache = nullptr,
                               int finest_level = 0);

// Gradients of a loss on flow `level` with respect to that level's predictor
// only; the upsampled coarser flow is treated as constant. Levels other than
// `level` come back zero.
NetGrads backward_level(const PyramidNet& net, const ForwardCache& cache,
                        int level, const FlowField& grad_flow);

// Gradients of a loss on the finest flow with respect to every weight of
// every level (through warp, upsampling and the residual connections).
NetGrads backward_full(const PyramidNet& net, const ForwardCache& cache,
                       const FlowField& grad_flow0);

std::size_t count_params(const PyramidNet& net);

}  // namespace pyraflow
