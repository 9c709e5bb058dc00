#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "mqn/tensor.hpp"

namespace mqn {

enum class Padding { same, valid };

struct ConvSpec {
    int kernel_h = 1;
    int kernel_w = 1;
    int stride = 1;
    Padding padding = Padding::same;
    int groups = 1; ///< 1 for a dense convolution, C_in for depthwise

    static ConvSpec pointwise() { return {}; }
    static ConvSpec square(int k, int stride = 1, int groups = 1) { return {k, k, stride, Padding::same, groups}; }
};

/// Output size and leading padding of one spatial axis. With same padding the
/// odd pixel of the total pad goes to the bottom/right.
struct AxisGeometry {
    std::int64_t out = 0;
    std::int64_t pad_before = 0;
};
AxisGeometry conv_axis(std::int64_t in, int kernel, int stride, Padding padding);

/// Dense cross-correlation. Weights are (kh, kw, Cin, Cout); bias has Cout entries.
/// Each output sums over kernel row, kernel column, then input channel, in f32,
/// and adds the bias last.
Tensor conv2d(const Tensor& input, const Tensor& weights, std::span<const float> bias, const ConvSpec& spec);

/// Per-channel convolution. Weights are (kh, kw, C, 1).
Tensor depthwise_conv2d(const Tensor& input, const Tensor& weights, std::span<const float> bias,
                        const ConvSpec& spec);

/// MACs of one convolution: kh*kw*Cin*Cout*Hout*Wout/groups.
std::int64_t conv_macs(std::int64_t in_c, std::int64_t out_c, const ConvSpec& spec, std::int64_t out_h,
                       std::int64_t out_w);

struct BatchNorm {
    std::vector<float> gamma, beta, mean, var;
    float eps = 1e-5f;
};

/// Folds inference batch norm into the preceding convolution. The per-channel
/// factor applies to the last weight axis (dense) or, for (kh, kw, C, 1)
/// depthwise kernels, to axis 2.
std::pair<Tensor, std::vector<float>> fold_batch_norm(const Tensor& weights, std::span<const float> bias,
                                                      const BatchNorm& bn);

enum class Activation { none, relu, relu6, sigmoid, tanh };

const char* activation_name(Activation a);
float activate(float x, Activation a);
Tensor activation(const Tensor& input, Activation kind);

Tensor upsample_nearest(const Tensor& input, int factor);
Tensor concat_channels(const Tensor& a, const Tensor& b);
Tensor global_avg_pool(const Tensor& input);

/// Per-sample, per-channel standardization with population variance, then affine.
Tensor instance_norm(const Tensor& input, std::span<const float> gamma, std::span<const float> beta,
                     float eps = 1e-5f);

Tensor add(const Tensor& a, const Tensor& b);

/// Element-wise product. `gate` is either the same shape as `x`, (N,H,W,1)
/// broadcast over channels, or (N,1,1,C) broadcast over space.
Tensor multiply(const Tensor& x, const Tensor& gate);

} // namespace mqn
