#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "mqn/ops.hpp"
#include "mqn/tensor.hpp"

namespace mqn {

std::int32_t qmin(DType t);
std::int32_t qmax(DType t);

/// Affine map between reals and integers: x = scale * (q - zero_point).
/// Per-channel parameters (axis >= 0) carry one pair per channel along `axis`.
struct QuantParams {
    std::vector<float> scales{1.0f};
    std::vector<std::int32_t> zero_points{0};
    int axis = -1;
    DType dtype = DType::i8;

    static QuantParams per_tensor(float scale, std::int32_t zero_point, DType dtype);

    bool per_channel() const { return axis >= 0; }
    std::size_t channels() const { return scales.size(); }
    float scale(std::size_t ch = 0) const { return scales[per_channel() ? ch : 0]; }
    std::int32_t zero_point(std::size_t ch = 0) const { return zero_points[per_channel() ? ch : 0]; }

    /// Throws ShapeError when an invariant does not hold.
    void validate() const;

    bool operator==(const QuantParams&) const = default;
};

/// Range-derived parameters. The range is widened to include zero first.
/// Asymmetric: scale=(max-min)/(qmax-qmin), zp=round(qmin-min/scale).
/// Symmetric: scale=max(|min|,|max|)/qmax, zp=0. A zero range gives scale 1, zp 0.
QuantParams affine_params_from_range(float min, float max, DType dtype, bool symmetric);

/// Symmetric per-channel parameters for a weight tensor along `axis`.
QuantParams per_channel_symmetric(const Tensor& weights, int axis, DType dtype = DType::i8);

/// q = clamp(round(x/scale) + zp), ties away from zero.
Tensor quantize_tensor(const Tensor& x, const QuantParams& p);
Tensor dequantize_tensor(const Tensor& q, const QuantParams& p);

/// Integer values together with their affine parameters.
struct QTensor {
    Tensor values;
    QuantParams params;

    Tensor dequantize() const { return dequantize_tensor(values, params); }
};

QTensor quantize(const Tensor& x, const QuantParams& p);

/// Round-half-away-from-zero arithmetic right shift.
std::int64_t rounding_shift_right(__int128 value, int shift);

/// A positive real multiplier stored as a 31-fractional-bit int32 mantissa and
/// an exponent: real = mantissa * 2^-(shift).
struct FixedMultiplier {
    std::int32_t mantissa = 0;
    int shift = 0;

    static FixedMultiplier from_real(double multiplier);
    std::int64_t apply(std::int64_t acc) const { return rounding_shift_right(static_cast<__int128>(acc) * mantissa, shift); }
    double real() const;
};

/// Bias pre-quantized to int32 with scale s_in * s_w[c].
std::vector<std::int32_t> quantize_bias(std::span<const float> bias, float input_scale, const QuantParams& weight_params);

/// Integer convolution (dense or depthwise, by spec.groups). Weights are symmetric
/// per-channel i8; input i8 or i16. The accumulator is exact (int32 for i8 input,
/// int64 for i16 input) and is requantized with a FixedMultiplier per channel.
/// `fused` clamps the output to the activation's range.
QTensor quantized_conv2d(const QTensor& input, const QTensor& weights, std::span<const std::int32_t> bias,
                         const ConvSpec& spec, const QuantParams& out_params, Activation fused = Activation::none);

/// Dynamic-range convolution: the f32 input is quantized per tensor from its own
/// min/max on every call, accumulated in int32 against i8 weights, then rescaled
/// to f32 and the f32 bias added.
Tensor dynamic_conv2d(const Tensor& input, const QTensor& weights, std::span<const float> bias, const ConvSpec& spec,
                      Activation fused = Activation::none);

// Integer element-wise kernels used by the quantized graph executor.

/// Maps every integer code through f(dequantize(q)) and requantizes (lookup table).
QTensor quantized_activation(const QTensor& input, Activation kind, const QuantParams& out_params);
QTensor requantize(const QTensor& input, const QuantParams& out_params);
QTensor quantized_add(const QTensor& a, const QTensor& b, const QuantParams& out_params);
/// Broadcasting product (same rules as mqn::multiply).
QTensor quantized_multiply(const QTensor& a, const QTensor& b, const QuantParams& out_params);
QTensor quantized_concat(const QTensor& a, const QTensor& b, const QuantParams& out_params);
QTensor quantized_global_avg_pool(const QTensor& input, const QuantParams& out_params);

} // namespace mqn
