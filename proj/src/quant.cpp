#include "mqn/quant.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>

#include "mqn/parallel.hpp"

namespace mqn {

std::int32_t qmin(DType t)
{
    switch (t) {
    case DType::i8: return -128;
    case DType::i16: return -32768;
    default: throw ShapeError(std::string("no quantized range for dtype ") + dtype_name(t));
    }
}

std::int32_t qmax(DType t)
{
    switch (t) {
    case DType::i8: return 127;
    case DType::i16: return 32767;
    default: throw ShapeError(std::string("no quantized range for dtype ") + dtype_name(t));
    }
}

QuantParams QuantParams::per_tensor(float scale, std::int32_t zero_point, DType dtype)
{
    QuantParams p;
    p.scales = {scale};
    p.zero_points = {zero_point};
    p.axis = -1;
    p.dtype = dtype;
    p.validate();
    return p;
}

void QuantParams::validate() const
{
    if (dtype != DType::i8 && dtype != DType::i16)
        throw ShapeError("quantization dtype must be i8 or i16");
    if (scales.empty() || scales.size() != zero_points.size())
        throw ShapeError("quantization scales and zero points must pair up");
    if (axis < -1 || axis > 3)
        throw ShapeError("quantization axis out of range");
    if (axis == -1 && scales.size() != 1)
        throw ShapeError("per-tensor quantization carries exactly one scale");
    for (float s : scales)
        if (!(s > 0.0f) || !std::isfinite(s))
            throw ShapeError("quantization scale must be positive and finite");
    for (auto z : zero_points)
        if (z < qmin(dtype) || z > qmax(dtype))
            throw ShapeError("zero point " + std::to_string(z) + " not representable in " + dtype_name(dtype));
}

QuantParams affine_params_from_range(float min, float max, DType dtype, bool symmetric)
{
    if (min > max)
        throw ShapeError("quantization range has min > max");
    const double lo = std::min(0.0, static_cast<double>(min));
    const double hi = std::max(0.0, static_cast<double>(max));
    const std::int32_t q0 = qmin(dtype), q1 = qmax(dtype);
    if (lo == 0.0 && hi == 0.0)
        return QuantParams::per_tensor(1.0f, 0, dtype);
    if (symmetric) {
        const double m = std::max(-lo, hi);
        return QuantParams::per_tensor(static_cast<float>(m / q1), 0, dtype);
    }
    const auto scale = static_cast<float>((hi - lo) / (static_cast<double>(q1) - q0));
    auto zp = static_cast<std::int64_t>(std::round(q0 - lo / static_cast<double>(scale)));
    zp = std::clamp<std::int64_t>(zp, q0, q1);
    return QuantParams::per_tensor(scale, static_cast<std::int32_t>(zp), dtype);
}

namespace {

std::int64_t axis_stride(const Shape& s, int axis)
{
    auto d = s.dims();
    std::int64_t inner = 1;
    for (int i = axis + 1; i < 4; ++i)
        inner *= d[static_cast<std::size_t>(i)];
    return inner;
}

void check_axis(const Shape& s, const QuantParams& p)
{
    if (!p.per_channel())
        return;
    if (s.dims()[static_cast<std::size_t>(p.axis)] != static_cast<std::int64_t>(p.channels()))
        throw ShapeError("per-channel quantization axis " + std::to_string(p.axis) + " does not match shape " +
                         s.str());
}

} // namespace

QuantParams per_channel_symmetric(const Tensor& weights, int axis, DType dtype)
{
    const Shape& s = weights.shape();
    const std::int64_t channels = s.dims()[static_cast<std::size_t>(axis)];
    const std::int64_t inner = axis_stride(s, axis);
    std::vector<float> maxabs(static_cast<std::size_t>(channels), 0.0f);
    auto w = weights.data<float>();
    for (std::int64_t i = 0; i < s.elements(); ++i) {
        auto c = static_cast<std::size_t>((i / inner) % channels);
        maxabs[c] = std::max(maxabs[c], std::abs(w[static_cast<std::size_t>(i)]));
    }
    QuantParams p;
    p.axis = axis;
    p.dtype = dtype;
    p.scales.clear();
    p.zero_points.clear();
    for (float m : maxabs) {
        auto one = affine_params_from_range(-m, m, dtype, true);
        p.scales.push_back(one.scales[0]);
        p.zero_points.push_back(0);
    }
    return p;
}

Tensor quantize_tensor(const Tensor& x, const QuantParams& p)
{
    p.validate();
    check_axis(x.shape(), p);
    Tensor q(x.shape(), p.dtype);
    auto src = x.data<float>();
    const std::int64_t inner = p.per_channel() ? axis_stride(x.shape(), p.axis) : 1;
    const std::int64_t channels = static_cast<std::int64_t>(p.channels());
    const std::int32_t lo = qmin(p.dtype), hi = qmax(p.dtype);
    with_dtype(p.dtype, [&](auto tag) {
        using T = decltype(tag);
        if constexpr (std::is_integral_v<T>) {
            auto dst = q.data<T>();
            for (std::size_t i = 0; i < src.size(); ++i) {
                const std::size_t c = p.per_channel() ? static_cast<std::size_t>((static_cast<std::int64_t>(i) / inner) % channels) : 0;
                const double v = src[i];
                std::int64_t r = p.zero_points[c];
                if (!std::isnan(v)) {
                    const double scaled = std::round(v / static_cast<double>(p.scales[c]));
                    r = scaled > 4e9 ? hi : (scaled < -4e9 ? lo : static_cast<std::int64_t>(scaled) + p.zero_points[c]);
                }
                dst[i] = static_cast<T>(std::clamp<std::int64_t>(r, lo, hi));
            }
        }
    });
    return q;
}

Tensor dequantize_tensor(const Tensor& q, const QuantParams& p)
{
    p.validate();
    if (q.dtype() != p.dtype)
        throw ShapeError(std::string("dequantize: tensor dtype ") + dtype_name(q.dtype()) + " does not match params " +
                         dtype_name(p.dtype));
    check_axis(q.shape(), p);
    Tensor x(q.shape(), DType::f32);
    auto dst = x.data<float>();
    const std::int64_t inner = p.per_channel() ? axis_stride(q.shape(), p.axis) : 1;
    const std::int64_t channels = static_cast<std::int64_t>(p.channels());
    with_dtype(p.dtype, [&](auto tag) {
        using T = decltype(tag);
        auto src = q.data<T>();
        for (std::size_t i = 0; i < src.size(); ++i) {
            const std::size_t c = p.per_channel() ? static_cast<std::size_t>((static_cast<std::int64_t>(i) / inner) % channels) : 0;
            dst[i] = static_cast<float>(static_cast<double>(p.scales[c]) *
                                        (static_cast<std::int64_t>(src[i]) - p.zero_points[c]));
        }
    });
    return x;
}

QTensor quantize(const Tensor& x, const QuantParams& p)
{
    return {quantize_tensor(x, p), p};
}

std::int64_t rounding_shift_right(__int128 value, int shift)
{
    if (shift <= 0)
        return static_cast<std::int64_t>(value << -shift);
    const __int128 half = static_cast<__int128>(1) << (shift - 1);
    if (value >= 0)
        return static_cast<std::int64_t>((value + half) >> shift);
    return -static_cast<std::int64_t>((-value + half) >> shift);
}

FixedMultiplier FixedMultiplier::from_real(double multiplier)
{
    if (!(multiplier > 0.0) || !std::isfinite(multiplier))
        throw ShapeError("requantization multiplier must be positive and finite");
    int exponent = 0;
    const double frac = std::frexp(multiplier, &exponent); // multiplier = frac * 2^exponent, frac in [0.5, 1)
    auto mantissa = static_cast<std::int64_t>(std::round(std::ldexp(frac, 31)));
    if (mantissa == (std::int64_t{1} << 31)) {
        mantissa /= 2;
        ++exponent;
    }
    FixedMultiplier m;
    m.mantissa = static_cast<std::int32_t>(mantissa);
    m.shift = 31 - exponent;
    if (m.shift < 1 || m.shift > 94)
        throw ShapeError("requantization multiplier out of supported range");
    return m;
}

double FixedMultiplier::real() const
{
    return std::ldexp(static_cast<double>(mantissa), -shift);
}

std::vector<std::int32_t> quantize_bias(std::span<const float> bias, float input_scale, const QuantParams& weight_params)
{
    std::vector<std::int32_t> out(bias.size());
    for (std::size_t c = 0; c < bias.size(); ++c) {
        const double s = static_cast<double>(input_scale) * weight_params.scale(c);
        const double q = std::round(bias[c] / s);
        out[c] = static_cast<std::int32_t>(std::clamp(q, -2147483648.0, 2147483647.0));
    }
    return out;
}

namespace {

std::pair<std::int32_t, std::int32_t> activation_clamp(const QuantParams& out, Activation fused)
{
    std::int32_t lo = qmin(out.dtype), hi = qmax(out.dtype);
    const std::int32_t z = out.zero_point();
    if (fused == Activation::relu || fused == Activation::relu6)
        lo = std::max(lo, z);
    if (fused == Activation::relu6) {
        const double six = std::round(6.0 / static_cast<double>(out.scale())) + z;
        hi = static_cast<std::int32_t>(std::min<double>(hi, six));
    }
    return {lo, hi};
}

template <class TIn, class Acc>
void integer_conv(const QTensor& input, const QTensor& weights, std::span<const std::int32_t> bias,
                  const ConvSpec& spec, std::span<const FixedMultiplier> mult, std::int32_t z_out, std::int32_t lo,
                  std::int32_t hi, Tensor& out, bool depthwise)
{
    const Shape& is = input.values.shape();
    const Shape& os = out.shape();
    auto gy = conv_axis(is.h, spec.kernel_h, spec.stride, spec.padding);
    auto gx = conv_axis(is.w, spec.kernel_w, spec.stride, spec.padding);
    auto src = input.values.data<TIn>();
    auto wt = weights.values.data<std::int8_t>();
    const std::int32_t z_in = input.params.zero_point();
    const std::int64_t cin = is.c, cout = os.c;

    with_dtype(out.dtype(), [&](auto tag) {
        using TOut = decltype(tag);
        if constexpr (std::is_integral_v<TOut>) {
            auto dst = out.data<TOut>();
            parallel_for(is.n * gy.out, [&](std::int64_t begin, std::int64_t end) {
                std::vector<Acc> acc(static_cast<std::size_t>(cout));
                for (std::int64_t row = begin; row < end; ++row) {
                    const std::int64_t n = row / gy.out, oy = row % gy.out;
                    for (std::int64_t ox = 0; ox < gx.out; ++ox) {
                        std::fill(acc.begin(), acc.end(), Acc{0});
                        for (int ky = 0; ky < spec.kernel_h; ++ky) {
                            const std::int64_t iy = oy * spec.stride - gy.pad_before + ky;
                            if (iy < 0 || iy >= is.h)
                                continue;
                            for (int kx = 0; kx < spec.kernel_w; ++kx) {
                                const std::int64_t ix = ox * spec.stride - gx.pad_before + kx;
                                if (ix < 0 || ix >= is.w)
                                    continue;
                                const TIn* px = &src[static_cast<std::size_t>(((n * is.h + iy) * is.w + ix) * cin)];
                                if (depthwise) {
                                    const std::int8_t* wk = &wt[static_cast<std::size_t>((ky * spec.kernel_w + kx) * cin)];
                                    for (std::int64_t c = 0; c < cin; ++c)
                                        acc[c] += static_cast<Acc>(px[c] - z_in) * wk[c];
                                } else {
                                    const std::int8_t* wk =
                                        &wt[static_cast<std::size_t>((ky * spec.kernel_w + kx) * cin * cout)];
                                    for (std::int64_t ci = 0; ci < cin; ++ci) {
                                        const Acc a = static_cast<Acc>(px[ci] - z_in);
                                        const std::int8_t* wr = wk + ci * cout;
#ifndef NDEBUG
                                        for (std::int64_t co = 0; co < cout; ++co) {
                                            Acc prod = 0;
                                            bool bad = __builtin_mul_overflow(a, static_cast<Acc>(wr[co]), &prod) ||
                                                       __builtin_add_overflow(acc[co], prod, &acc[co]);
                                            if (bad)
                                                throw ShapeError("integer convolution accumulator overflow");
                                        }
#else
                                        for (std::int64_t co = 0; co < cout; ++co)
                                            acc[co] += a * wr[co];
#endif
                                    }
                                }
                            }
                        }
                        TOut* po = &dst[static_cast<std::size_t>(((n * gy.out + oy) * gx.out + ox) * cout)];
                        for (std::int64_t co = 0; co < cout; ++co) {
                            const std::int64_t total = static_cast<std::int64_t>(acc[co]) + bias[co];
                            const std::int64_t v = mult[co].apply(total) + z_out;
                            po[co] = static_cast<TOut>(std::clamp<std::int64_t>(v, lo, hi));
                        }
                    }
                }
            });
        }
    });
}

} // namespace

QTensor quantized_conv2d(const QTensor& input, const QTensor& weights, std::span<const std::int32_t> bias,
                         const ConvSpec& spec, const QuantParams& out_params, Activation fused)
{
    const Shape& is = input.values.shape();
    const Shape& ws = weights.values.shape();
    if (input.values.dtype() != DType::i8 && input.values.dtype() != DType::i16)
        throw ShapeError("quantized_conv2d input must be i8 or i16");
    if (weights.values.dtype() != DType::i8)
        throw ShapeError("quantized_conv2d weights must be i8");
    if (input.params.per_channel())
        throw ShapeError("activation quantization must be per tensor");
    if (ws.n != spec.kernel_h || ws.h != spec.kernel_w)
        throw ShapeError("weights " + ws.str() + " do not match kernel size");
    const bool depthwise = spec.groups != 1;
    if (depthwise && (spec.groups != is.c || ws.w != is.c || ws.c != 1))
        throw ShapeError("depthwise weights " + ws.str() + " do not match input channels");
    if (!depthwise && ws.w != is.c)
        throw ShapeError("input channels " + std::to_string(is.c) + " != weight Cin " + std::to_string(ws.w));
    const std::int64_t cout = depthwise ? is.c : ws.c;
    if (static_cast<std::int64_t>(bias.size()) != cout)
        throw ShapeError("bias length does not match output channels");
    for (auto z : weights.params.zero_points)
        if (z != 0)
            throw ShapeError("weight zero points must be 0 (symmetric)");
    out_params.validate();

    std::vector<FixedMultiplier> mult;
    mult.reserve(static_cast<std::size_t>(cout));
    for (std::int64_t c = 0; c < cout; ++c)
        mult.push_back(FixedMultiplier::from_real(static_cast<double>(input.params.scale()) *
                                                  weights.params.scale(static_cast<std::size_t>(c)) /
                                                  out_params.scale()));
    auto [lo, hi] = activation_clamp(out_params, fused);

    auto gy = conv_axis(is.h, spec.kernel_h, spec.stride, spec.padding);
    auto gx = conv_axis(is.w, spec.kernel_w, spec.stride, spec.padding);
    Tensor out({is.n, gy.out, gx.out, cout}, out_params.dtype);
    if (input.values.dtype() == DType::i8)
        integer_conv<std::int8_t, std::int32_t>(input, weights, bias, spec, mult, out_params.zero_point(), lo, hi, out,
                                                depthwise);
    else
        integer_conv<std::int16_t, std::int64_t>(input, weights, bias, spec, mult, out_params.zero_point(), lo, hi,
                                                 out, depthwise);
    return {std::move(out), out_params};
}

Tensor dynamic_conv2d(const Tensor& input, const QTensor& weights, std::span<const float> bias, const ConvSpec& spec,
                      Activation fused)
{
    auto x = input.data<float>();
    float lo = 0.0f, hi = 0.0f;
    if (!x.empty()) {
        auto [mn, mx] = std::minmax_element(x.begin(), x.end());
        lo = *mn;
        hi = *mx;
    }
    const QuantParams in_params = affine_params_from_range(lo, hi, DType::i8, false);
    const QTensor q = quantize(input, in_params);

    const bool depthwise = spec.groups != 1;
    const std::int64_t cout = depthwise ? input.shape().c : weights.values.shape().c;
    if (static_cast<std::int64_t>(bias.size()) != cout)
        throw ShapeError("bias length does not match output channels");

    const Shape& is = input.shape();
    const Shape& ws = weights.values.shape();
    if (ws.n != spec.kernel_h || ws.h != spec.kernel_w || (!depthwise && ws.w != is.c) ||
        (depthwise && (ws.w != is.c || ws.c != 1)))
        throw ShapeError("dynamic_conv2d weights " + ws.str() + " do not match input " + is.str());
    for (auto z : weights.params.zero_points)
        if (z != 0)
            throw ShapeError("weight zero points must be 0 (symmetric)");
    auto gy = conv_axis(is.h, spec.kernel_h, spec.stride, spec.padding);
    auto gx = conv_axis(is.w, spec.kernel_w, spec.stride, spec.padding);
    Tensor out({is.n, gy.out, gx.out, cout}, DType::f32);
    auto src = q.values.data<std::int8_t>();
    auto wt = weights.values.data<std::int8_t>();
    auto dst = out.data<float>();
    const std::int32_t z_in = in_params.zero_point();
    const std::int64_t cin = is.c;
    std::vector<float> scale(static_cast<std::size_t>(cout));
    for (std::int64_t c = 0; c < cout; ++c)
        scale[c] = in_params.scale() * weights.params.scale(static_cast<std::size_t>(c));

    parallel_for(is.n * gy.out, [&](std::int64_t begin, std::int64_t end) {
        std::vector<std::int32_t> acc(static_cast<std::size_t>(cout));
        for (std::int64_t row = begin; row < end; ++row) {
            const std::int64_t n = row / gy.out, oy = row % gy.out;
            for (std::int64_t ox = 0; ox < gx.out; ++ox) {
                std::fill(acc.begin(), acc.end(), 0);
                for (int ky = 0; ky < spec.kernel_h; ++ky) {
                    const std::int64_t iy = oy * spec.stride - gy.pad_before + ky;
                    if (iy < 0 || iy >= is.h)
                        continue;
                    for (int kx = 0; kx < spec.kernel_w; ++kx) {
                        const std::int64_t ix = ox * spec.stride - gx.pad_before + kx;
                        if (ix < 0 || ix >= is.w)
                            continue;
                        const std::int8_t* px = &src[static_cast<std::size_t>(((n * is.h + iy) * is.w + ix) * cin)];
                        if (depthwise) {
                            const std::int8_t* wk = &wt[static_cast<std::size_t>((ky * spec.kernel_w + kx) * cin)];
                            for (std::int64_t c = 0; c < cin; ++c)
                                acc[c] += (px[c] - z_in) * wk[c];
                        } else {
                            const std::int8_t* wk = &wt[static_cast<std::size_t>((ky * spec.kernel_w + kx) * cin * cout)];
                            for (std::int64_t ci = 0; ci < cin; ++ci) {
                                const std::int32_t a = px[ci] - z_in;
                                const std::int8_t* wr = wk + ci * cout;
                                for (std::int64_t co = 0; co < cout; ++co)
                                    acc[co] += a * wr[co];
                            }
                        }
                    }
                }
                float* po = &dst[static_cast<std::size_t>(((n * gy.out + oy) * gx.out + ox) * cout)];
                for (std::int64_t co = 0; co < cout; ++co)
                    po[co] = activate(static_cast<float>(acc[co]) * scale[co] + bias[co], fused);
            }
        }
    });
    return out;
}

namespace {

double activate_exact(double x, Activation a)
{
    switch (a) {
    case Activation::none: return x;
    case Activation::relu: return x < 0.0 ? 0.0 : x;
    case Activation::relu6: return x < 0.0 ? 0.0 : (x > 6.0 ? 6.0 : x);
    case Activation::sigmoid: return 1.0 / (1.0 + std::exp(-x));
    case Activation::tanh: return std::tanh(x);
    }
    return x;
}

std::int64_t quantize_real(double y, const QuantParams& p)
{
    const double r = std::round(y / static_cast<double>(p.scale())) + p.zero_point();
    return static_cast<std::int64_t>(std::clamp<double>(r, qmin(p.dtype), qmax(p.dtype)));
}

void check_activation_params(const QTensor& t)
{
    if (t.params.per_channel())
        throw ShapeError("activation quantization must be per tensor");
    if (t.values.dtype() != t.params.dtype)
        throw ShapeError("quantized tensor dtype does not match its parameters");
}

template <class F> void for_each_code(const QTensor& in, Tensor& out, F&& f)
{
    with_dtype(in.values.dtype(), [&](auto tin) {
        using TI = decltype(tin);
        if constexpr (std::is_integral_v<TI>) {
            auto src = in.values.data<TI>();
            with_dtype(out.dtype(), [&](auto tout) {
                using TO = decltype(tout);
                if constexpr (std::is_integral_v<TO>) {
                    auto dst = out.data<TO>();
                    for (std::size_t i = 0; i < src.size(); ++i)
                        dst[i] = static_cast<TO>(f(static_cast<std::int64_t>(src[i])));
                }
            });
        }
    });
}

} // namespace

QTensor quantized_activation(const QTensor& input, Activation kind, const QuantParams& out_params)
{
    check_activation_params(input);
    out_params.validate();
    const std::int32_t q0 = qmin(input.params.dtype), q1 = qmax(input.params.dtype);
    std::vector<std::int32_t> table(static_cast<std::size_t>(q1 - q0 + 1));
    for (std::int32_t q = q0; q <= q1; ++q) {
        const double x = static_cast<double>(input.params.scale()) * (q - input.params.zero_point());
        table[static_cast<std::size_t>(q - q0)] = static_cast<std::int32_t>(quantize_real(activate_exact(x, kind), out_params));
    }
    Tensor out(input.values.shape(), out_params.dtype);
    for_each_code(input, out, [&](std::int64_t q) { return table[static_cast<std::size_t>(q - q0)]; });
    return {std::move(out), out_params};
}

QTensor requantize(const QTensor& input, const QuantParams& out_params)
{
    check_activation_params(input);
    out_params.validate();
    if (input.params == out_params)
        return input;
    const auto m = FixedMultiplier::from_real(static_cast<double>(input.params.scale()) / out_params.scale());
    const std::int32_t zi = input.params.zero_point(), zo = out_params.zero_point();
    const std::int32_t lo = qmin(out_params.dtype), hi = qmax(out_params.dtype);
    Tensor out(input.values.shape(), out_params.dtype);
    for_each_code(input, out, [&](std::int64_t q) { return std::clamp<std::int64_t>(m.apply(q - zi) + zo, lo, hi); });
    return {std::move(out), out_params};
}

namespace {

std::vector<std::int64_t> widen(const QTensor& t)
{
    std::vector<std::int64_t> v(static_cast<std::size_t>(t.values.size()));
    with_dtype(t.values.dtype(), [&](auto tag) {
        using T = decltype(tag);
        if constexpr (std::is_integral_v<T>) {
            auto src = t.values.data<T>();
            for (std::size_t i = 0; i < v.size(); ++i)
                v[i] = static_cast<std::int64_t>(src[i]) - t.params.zero_point();
        }
    });
    return v;
}

Tensor narrow(const Shape& shape, const std::vector<std::int64_t>& v, const QuantParams& p)
{
    Tensor out(shape, p.dtype);
    const std::int64_t lo = qmin(p.dtype), hi = qmax(p.dtype);
    with_dtype(p.dtype, [&](auto tag) {
        using T = decltype(tag);
        if constexpr (std::is_integral_v<T>) {
            auto dst = out.data<T>();
            for (std::size_t i = 0; i < v.size(); ++i)
                dst[i] = static_cast<T>(std::clamp(v[i], lo, hi));
        }
    });
    return out;
}

} // namespace

QTensor quantized_add(const QTensor& a, const QTensor& b, const QuantParams& out_params)
{
    check_activation_params(a);
    check_activation_params(b);
    out_params.validate();
    if (a.values.shape() != b.values.shape())
        throw ShapeError("add shape mismatch: " + a.values.shape().str() + " vs " + b.values.shape().str());
    // Both inputs share one fixed-point exponent so the sum is formed before rounding.
    const double ma = static_cast<double>(a.params.scale()) / out_params.scale();
    const double mb = static_cast<double>(b.params.scale()) / out_params.scale();
    int exponent = 0;
    std::frexp(std::max(ma, mb), &exponent);
    const int shift = 31 - exponent;
    if (shift < 1 || shift > 62)
        throw ShapeError("add rescale factor out of supported range");
    const auto fa = static_cast<std::int64_t>(std::round(std::ldexp(ma, shift)));
    const auto fb = static_cast<std::int64_t>(std::round(std::ldexp(mb, shift)));
    auto va = widen(a), vb = widen(b);
    for (std::size_t i = 0; i < va.size(); ++i)
        va[i] = rounding_shift_right(static_cast<__int128>(va[i]) * fa + static_cast<__int128>(vb[i]) * fb, shift) +
                out_params.zero_point();
    return {narrow(a.values.shape(), va, out_params), out_params};
}

QTensor quantized_multiply(const QTensor& a, const QTensor& b, const QuantParams& out_params)
{
    check_activation_params(a);
    check_activation_params(b);
    out_params.validate();
    const Shape& sa = a.values.shape();
    const Shape& sb = b.values.shape();
    auto pick = [&](std::int64_t x, std::int64_t y) {
        if (x == y || y == 1)
            return x;
        if (x == 1)
            return y;
        throw ShapeError("cannot broadcast " + sa.str() + " with " + sb.str());
    };
    const Shape so{pick(sa.n, sb.n), pick(sa.h, sb.h), pick(sa.w, sb.w), pick(sa.c, sb.c)};
    const auto m = FixedMultiplier::from_real(static_cast<double>(a.params.scale()) * b.params.scale() / out_params.scale());
    auto va = widen(a), vb = widen(b);
    auto idx = [](const Shape& s, std::int64_t n, std::int64_t h, std::int64_t w, std::int64_t c) {
        return static_cast<std::size_t>(
            ((std::min(n, s.n - 1) * s.h + std::min(h, s.h - 1)) * s.w + std::min(w, s.w - 1)) * s.c +
            std::min(c, s.c - 1));
    };
    std::vector<std::int64_t> vo(static_cast<std::size_t>(so.elements()));
    std::size_t i = 0;
    for (std::int64_t n = 0; n < so.n; ++n)
        for (std::int64_t h = 0; h < so.h; ++h)
            for (std::int64_t w = 0; w < so.w; ++w)
                for (std::int64_t c = 0; c < so.c; ++c)
                    vo[i++] = m.apply(va[idx(sa, n, h, w, c)] * vb[idx(sb, n, h, w, c)]) + out_params.zero_point();
    return {narrow(so, vo, out_params), out_params};
}

QTensor quantized_concat(const QTensor& a, const QTensor& b, const QuantParams& out_params)
{
    const QTensor ra = requantize(a, out_params);
    const QTensor rb = requantize(b, out_params);
    const Shape& sa = ra.values.shape();
    const Shape& sb = rb.values.shape();
    if (sa.n != sb.n || sa.h != sb.h || sa.w != sb.w)
        throw ShapeError("concat spatial mismatch: " + sa.str() + " vs " + sb.str());
    const std::int64_t c = sa.c + sb.c;
    Tensor out({sa.n, sa.h, sa.w, c}, out_params.dtype);
    with_dtype(out_params.dtype, [&](auto tag) {
        using T = decltype(tag);
        if constexpr (std::is_integral_v<T>) {
            auto pa = ra.values.data<T>();
            auto pb = rb.values.data<T>();
            auto po = out.data<T>();
            const std::int64_t pixels = sa.n * sa.h * sa.w;
            for (std::int64_t p = 0; p < pixels; ++p) {
                std::copy_n(&pa[static_cast<std::size_t>(p * sa.c)], sa.c, &po[static_cast<std::size_t>(p * c)]);
                std::copy_n(&pb[static_cast<std::size_t>(p * sb.c)], sb.c, &po[static_cast<std::size_t>(p * c + sa.c)]);
            }
        }
    });
    return {std::move(out), out_params};
}

QTensor quantized_global_avg_pool(const QTensor& input, const QuantParams& out_params)
{
    check_activation_params(input);
    out_params.validate();
    const Shape& s = input.values.shape();
    if (s.h < 1 || s.w < 1)
        throw ShapeError("global_avg_pool on zero spatial size");
    const std::int64_t hw = s.h * s.w;
    const auto m = FixedMultiplier::from_real(static_cast<double>(input.params.scale()) /
                                              (static_cast<double>(hw) * out_params.scale()));
    auto v = widen(input);
    std::vector<std::int64_t> vo(static_cast<std::size_t>(s.n * s.c), 0);
    for (std::int64_t n = 0; n < s.n; ++n) {
        for (std::int64_t p = 0; p < hw; ++p)
            for (std::int64_t c = 0; c < s.c; ++c)
                vo[static_cast<std::size_t>(n * s.c + c)] += v[static_cast<std::size_t>((n * hw + p) * s.c + c)];
        for (std::int64_t c = 0; c < s.c; ++c) {
            auto& x = vo[static_cast<std::size_t>(n * s.c + c)];
            x = m.apply(x) + out_params.zero_point();
        }
    }
    return {narrow({s.n, 1, 1, s.c}, vo, out_params), out_params};
}

} // namespace mqn
