#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "pyraflow/error.hpp"

namespace pyraflow {

// Dense [channels, height, width] float32 array, row-major. The universal
// numeric container: images, activations, flow fields, masks.
class Tensor {
public:
    Tensor() = default;

    Tensor(int channels, int height, int width, float fill = 0.0f)
        : c_(channels), h_(height), w_(width) {
        if (channels < 1 || height < 1 || width < 1)
            throw ConfigError("tensor dims must be >= 1");
        data_.assign(static_cast<std::size_t>(channels) * height * width, fill);
    }

    static Tensor from_data(int channels, int height, int width,
                            std::vector<float> data) {
        Tensor t(channels, height, width);
        if (data.size() != t.size())
            throw ConfigError("tensor data length does not match shape");
        t.data_ = std::move(data);
        return t;
    }

    int channels() const { return c_; }
    int height() const { return h_; }
    int width() const { return w_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    float& at(int c, int y, int x) {
        return data_[(static_cast<std::size_t>(c) * h_ + y) * w_ + x];
    }
    float at(int c, int y, int x) const {
        return data_[(static_cast<std::size_t>(c) * h_ + y) * w_ + x];
    }

    float* plane(int c) { return data_.data() + static_cast<std::size_t>(c) * h_ * w_; }
    const float* plane(int c) const {
        return data_.data() + static_cast<std::size_t>(c) * h_ * w_;
    }

    float* data() { return data_.data(); }
    const float* data() const { return data_.data(); }
    std::span<float> flat() { return data_; }
    std::span<const float> flat() const { return data_; }

    bool same_shape(const Tensor& o) const {
        return c_ == o.c_ && h_ == o.h_ && w_ == o.w_;
    }

    bool all_finite() const;

private:
    int c_ = 0, h_ = 0, w_ = 0;
    std::vector<float> data_;
};

// 2-channel Tensor: channel 0 = u (+x, pixels), channel 1 = v (+y, pixels).
// Pixel (x, y) of frame 1 corresponds to (x + u, y + v) of frame 2.
using FlowField = Tensor;

enum class Activation { none, relu };

// Square-kernel convolution layer, "same" zero padding. Weights are
// [out_channels, in_channels, k, k] flattened row-major.
struct ConvLayer {
    int in_channels = 0;
    int out_channels = 0;
    int kernel = 0;
    Activation activation = Activation::none;
    std::vector<float> weights;
    std::vector<float> bias;

    std::size_t weight_index(int o, int c, int dy, int dx) const {
        return ((static_cast<std::size_t>(o) * in_channels + c) * kernel + dy) * kernel + dx;
    }

    std::size_t param_count() const {
        return static_cast<std::size_t>(out_channels) *
               (static_cast<std::size_t>(in_channels) * kernel * kernel + 1);
    }

    void validate() const;
};

struct ConvGrads {
    Tensor input;                 // empty when not requested
    std::vector<float> weights;   // same layout as ConvLayer::weights
    std::vector<float> bias;
};

struct WarpGrads {
    Tensor image;                 // empty when not requested
    FlowField flow;
};

Tensor conv2d(const Tensor& input, const ConvLayer& layer);

// Analytic gradients of conv2d. `output` must be the forward result for
// `input` (the relu gate is recovered from its sign; gate at 0 is 0).
ConvGrads conv2d_backward(const Tensor& input, const ConvLayer& layer,
                          const Tensor& output, const Tensor& grad_out,
                          bool need_input_grad = true);

// 2x2 block mean; odd edges average the truncated block.
Tensor avg_downsample2x(const Tensor& input);
Tensor avg_downsample2x_backward(const Tensor& grad_out, int in_h, int in_w);

// Align-corners bilinear resize to the caller's exact finer-level size.
Tensor bilinear_upsample2x(const Tensor& input, int out_h, int out_w);
Tensor bilinear_upsample2x_backward(const Tensor& grad_out, int in_h, int in_w);

// Samples image at (x + u, y + v), bilinear, coordinates clamped to the
// border (replicate padding).
Tensor warp(const Tensor& image, const FlowField& flow);
WarpGrads warp_backward(const Tensor& image, const FlowField& flow,
                        const Tensor& grad_out, bool need_image_grad = true);

}  // namespace pyraflow
