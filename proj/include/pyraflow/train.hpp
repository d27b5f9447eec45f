#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "pyraflow/pyramid.hpp"
#include "pyraflow/synth.hpp"

namespace pyraflow {

struct TrainConfig {
    enum class Mode { sequential, end_to_end };

    int epochs_per_level = 30;
    int batch_size = 8;
    float learning_rate = 1e-3f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float adam_eps = 1e-8f;
    float epe_eps = 1e-8f;
    std::uint64_t seed = 1;
    float split = 0.9f;  // leading fraction of samples used for training
    Mode mode = Mode::sequential;

    void validate() const;
};

struct EpeResult {
    float loss = 0.0f;
    FlowField grad;  // d loss / d pred
};

// Mean over mask=1 pixels of sqrt(du^2 + dv^2 + eps). eps keeps the
// gradient defined at exact zero error, so loss >= sqrt(eps) always.
EpeResult epe_loss(const FlowField& pred, const FlowField& gt, const Tensor& mask,
                   float eps = 1e-8f);

struct AdamState {
    std::vector<float> m, v;  // first/second moment accumulators
};

// Standard Adam with bias correction; t counts steps from 1.
void adam_step(std::span<float> params, std::span<const float> grads,
               AdamState& state, int t, const TrainConfig& config);

// Level-l supervision target: gt downsampled l times with values halved per
// level (displacements shrink with resolution).
std::vector<FlowField> flow_pyramid_targets(const FlowField& gt, int levels);

// Validity masks for the targets: downsampled and re-binarized (block
// fraction >= 0.5 counts as valid) per level.
std::vector<Tensor> mask_pyramid(const Tensor& mask, int levels);

struct EpochStats {
    int level = 0;  // -1: all levels at once (end-to-end mode)
    int epoch = 0;
    float train_loss = 0.0f;
    float val_epe = 0.0f;
    double wall_ms = 0.0;
};

using EpochCallback = std::function<void(const EpochStats&)>;

// Trains net in place and returns per-epoch history. Sequential mode runs
// one phase per level from coarsest to finest with the other levels frozen;
// end-to-end mode optimizes the finest-level loss through the whole net.
// Fully determined by (net, dataset, config).
std::vector<EpochStats> train(PyramidNet& net, const Dataset& dataset,
                              const TrainConfig& config,
                              const EpochCallback& on_epoch = nullptr);

}  // namespace pyraflow
