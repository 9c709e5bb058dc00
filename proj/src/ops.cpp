#include "mqn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mqn/parallel.hpp"

namespace mqn {

AxisGeometry conv_axis(std::int64_t in, int kernel, int stride, Padding padding)
{
    if (kernel <= 0 || stride <= 0)
        throw ShapeError("kernel and stride must be positive");
    if (in <= 0)
        throw ShapeError("zero-sized spatial input");
    AxisGeometry g;
    if (padding == Padding::same) {
        g.out = (in + stride - 1) / stride;
        std::int64_t total = std::max<std::int64_t>((g.out - 1) * stride + kernel - in, 0);
        g.pad_before = total / 2;
    } else {
        if (in < kernel)
            throw ShapeError("valid convolution with input smaller than kernel");
        g.out = (in - kernel) / stride + 1;
    }
    return g;
}

std::int64_t conv_macs(std::int64_t in_c, std::int64_t out_c, const ConvSpec& spec, std::int64_t out_h,
                       std::int64_t out_w)
{
    return std::int64_t(spec.kernel_h) * spec.kernel_w * in_c * out_c * out_h * out_w / spec.groups;
}

namespace {

void check_bias(std::span<const float> bias, std::int64_t c)
{
    if (static_cast<std::int64_t>(bias.size()) != c)
        throw ShapeError("bias length " + std::to_string(bias.size()) + " != output channels " + std::to_string(c));
}

} // namespace

Tensor conv2d(const Tensor& input, const Tensor& weights, std::span<const float> bias, const ConvSpec& spec)
{
    const Shape& is = input.shape();
    const Shape& ws = weights.shape();
    if (spec.groups != 1)
        throw ShapeError("conv2d requires groups=1");
    if (ws.n != spec.kernel_h || ws.h != spec.kernel_w)
        throw ShapeError("weights " + ws.str() + " do not match kernel size");
    if (ws.w != is.c)
        throw ShapeError("input channels " + std::to_string(is.c) + " != weight Cin " + std::to_string(ws.w));
    check_bias(bias, ws.c);
    auto gy = conv_axis(is.h, spec.kernel_h, spec.stride, spec.padding);
    auto gx = conv_axis(is.w, spec.kernel_w, spec.stride, spec.padding);

    const std::int64_t cin = is.c, cout = ws.c;
    Tensor out({is.n, gy.out, gx.out, cout}, DType::f32);
    auto src = input.data<float>();
    auto wt = weights.data<float>();
    auto dst = out.data<float>();

    parallel_for(is.n * gy.out, [&](std::int64_t begin, std::int64_t end) {
        std::vector<float> acc(static_cast<std::size_t>(cout));
        for (std::int64_t row = begin; row < end; ++row) {
            const std::int64_t n = row / gy.out, oy = row % gy.out;
            for (std::int64_t ox = 0; ox < gx.out; ++ox) {
                std::fill(acc.begin(), acc.end(), 0.0f);
                for (int ky = 0; ky < spec.kernel_h; ++ky) {
                    const std::int64_t iy = oy * spec.stride - gy.pad_before + ky;
                    if (iy < 0 || iy >= is.h)
                        continue;
                    for (int kx = 0; kx < spec.kernel_w; ++kx) {
                        const std::int64_t ix = ox * spec.stride - gx.pad_before + kx;
                        if (ix < 0 || ix >= is.w)
                            continue;
                        const float* px = &src[static_cast<std::size_t>(((n * is.h + iy) * is.w + ix) * cin)];
                        const float* wk = &wt[static_cast<std::size_t>((ky * spec.kernel_w + kx) * cin * cout)];
                        for (std::int64_t ci = 0; ci < cin; ++ci) {
                            const float a = px[ci];
                            const float* wr = wk + ci * cout;
                            for (std::int64_t co = 0; co < cout; ++co)
                                acc[co] += a * wr[co];
                        }
                    }
                }
                float* po = &dst[static_cast<std::size_t>(((n * gy.out + oy) * gx.out + ox) * cout)];
                for (std::int64_t co = 0; co < cout; ++co)
                    po[co] = acc[co] + bias[co];
            }
        }
    });
    return out;
}

Tensor depthwise_conv2d(const Tensor& input, const Tensor& weights, std::span<const float> bias,
                        const ConvSpec& spec)
{
    const Shape& is = input.shape();
    const Shape& ws = weights.shape();
    if (ws.n != spec.kernel_h || ws.h != spec.kernel_w)
        throw ShapeError("weights " + ws.str() + " do not match kernel size");
    if (ws.w != is.c || ws.c != 1)
        throw ShapeError("depthwise weights " + ws.str() + " do not match input channels " + std::to_string(is.c));
    if (spec.groups != 1 && spec.groups != is.c)
        throw ShapeError("depthwise groups must equal input channels");
    check_bias(bias, is.c);
    auto gy = conv_axis(is.h, spec.kernel_h, spec.stride, spec.padding);
    auto gx = conv_axis(is.w, spec.kernel_w, spec.stride, spec.padding);

    const std::int64_t ch = is.c;
    Tensor out({is.n, gy.out, gx.out, ch}, DType::f32);
    auto src = input.data<float>();
    auto wt = weights.data<float>();
    auto dst = out.data<float>();

    parallel_for(is.n * gy.out, [&](std::int64_t begin, std::int64_t end) {
        std::vector<float> acc(static_cast<std::size_t>(ch));
        for (std::int64_t row = begin; row < end; ++row) {
            const std::int64_t n = row / gy.out, oy = row % gy.out;
            for (std::int64_t ox = 0; ox < gx.out; ++ox) {
                std::fill(acc.begin(), acc.end(), 0.0f);
                for (int ky = 0; ky < spec.kernel_h; ++ky) {
                    const std::int64_t iy = oy * spec.stride - gy.pad_before + ky;
                    if (iy < 0 || iy >= is.h)
                        continue;
                    for (int kx = 0; kx < spec.kernel_w; ++kx) {
                        const std::int64_t ix = ox * spec.stride - gx.pad_before + kx;
                        if (ix < 0 || ix >= is.w)
                            continue;
                        const float* px = &src[static_cast<std::size_t>(((n * is.h + iy) * is.w + ix) * ch)];
                        const float* wk = &wt[static_cast<std::size_t>((ky * spec.kernel_w + kx) * ch)];
                        for (std::int64_t c = 0; c < ch; ++c)
                            acc[c] += px[c] * wk[c];
                    }
                }
                float* po = &dst[static_cast<std::size_t>(((n * gy.out + oy) * gx.out + ox) * ch)];
                for (std::int64_t c = 0; c < ch; ++c)
                    po[c] = acc[c] + bias[c];
            }
        }
    });
    return out;
}

std::pair<Tensor, std::vector<float>> fold_batch_norm(const Tensor& weights, std::span<const float> bias,
                                                      const BatchNorm& bn)
{
    const Shape& ws = weights.shape();
    std::int64_t channels = ws.c;
    bool depthwise = false;
    if (static_cast<std::int64_t>(bn.gamma.size()) != ws.c && ws.c == 1 &&
        static_cast<std::int64_t>(bn.gamma.size()) == ws.w) {
        depthwise = true;
        channels = ws.w;
    }
    auto n = static_cast<std::size_t>(channels);
    if (bn.gamma.size() != n || bn.beta.size() != n || bn.mean.size() != n || bn.var.size() != n)
        throw ShapeError("batch norm vectors must have one entry per output channel");
    check_bias(bias, channels);

    std::vector<float> factor(n);
    for (std::size_t c = 0; c < n; ++c) {
        if (bn.var[c] < 0.0f)
            throw ShapeError("negative batch norm variance at channel " + std::to_string(c));
        factor[c] = bn.gamma[c] / std::sqrt(bn.var[c] + bn.eps);
    }

    Tensor folded = weights;
    auto w = folded.data<float>();
    const std::int64_t inner = depthwise ? 1 : ws.c;
    for (std::int64_t i = 0; i < ws.elements(); ++i) {
        const std::int64_t c = depthwise ? (i % ws.w) : (i % inner);
        w[i] *= factor[static_cast<std::size_t>(c)];
    }
    std::vector<float> b(n);
    for (std::size_t c = 0; c < n; ++c)
        b[c] = (bias[c] - bn.mean[c]) * factor[c] + bn.beta[c];
    return {std::move(folded), std::move(b)};
}

const char* activation_name(Activation a)
{
    switch (a) {
    case Activation::none: return "none";
    case Activation::relu: return "relu";
    case Activation::relu6: return "relu6";
    case Activation::sigmoid: return "sigmoid";
    case Activation::tanh: return "tanh";
    }
    return "?";
}

float activate(float x, Activation a)
{
    switch (a) {
    case Activation::none: return x;
    case Activation::relu: return x < 0.0f ? 0.0f : x;
    case Activation::relu6: return x < 0.0f ? 0.0f : (x > 6.0f ? 6.0f : x);
    case Activation::sigmoid: {
        // f32 rounds sigmoid to exactly 0 or 1 for |x| > ~17; keep the open interval.
        constexpr float lo = std::numeric_limits<float>::min();
        constexpr float hi = 1.0f - 0x1p-24f;
        const float s = 1.0f / (1.0f + std::exp(-x));
        return std::min(std::max(s, lo), hi);
    }
    case Activation::tanh: return std::tanh(x);
    }
    return x;
}

Tensor activation(const Tensor& input, Activation kind)
{
    Tensor out = input;
    for (float& v : out.data<float>())
        v = activate(v, kind);
    return out;
}

Tensor upsample_nearest(const Tensor& input, int factor)
{
    if (factor < 1)
        throw ShapeError("upsample factor must be >= 1");
    const Shape& s = input.shape();
    Tensor out({s.n, s.h * factor, s.w * factor, s.c}, input.dtype());
    with_dtype(input.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto src = input.data<T>();
        auto dst = out.data<T>();
        const std::int64_t oh = s.h * factor, ow = s.w * factor;
        for (std::int64_t n = 0; n < s.n; ++n)
            for (std::int64_t y = 0; y < oh; ++y)
                for (std::int64_t x = 0; x < ow; ++x) {
                    const T* p = &src[static_cast<std::size_t>(((n * s.h + y / factor) * s.w + x / factor) * s.c)];
                    T* q = &dst[static_cast<std::size_t>(((n * oh + y) * ow + x) * s.c)];
                    std::copy(p, p + s.c, q);
                }
    });
    return out;
}

Tensor concat_channels(const Tensor& a, const Tensor& b)
{
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sa.n != sb.n || sa.h != sb.h || sa.w != sb.w)
        throw ShapeError("concat spatial mismatch: " + sa.str() + " vs " + sb.str());
    const std::int64_t c = sa.c + sb.c;
    Tensor out({sa.n, sa.h, sa.w, c}, DType::f32);
    auto pa = a.data<float>();
    auto pb = b.data<float>();
    auto po = out.data<float>();
    const std::int64_t pixels = sa.n * sa.h * sa.w;
    for (std::int64_t p = 0; p < pixels; ++p) {
        std::copy_n(&pa[static_cast<std::size_t>(p * sa.c)], sa.c, &po[static_cast<std::size_t>(p * c)]);
        std::copy_n(&pb[static_cast<std::size_t>(p * sb.c)], sb.c, &po[static_cast<std::size_t>(p * c + sa.c)]);
    }
    return out;
}

Tensor global_avg_pool(const Tensor& input)
{
    const Shape& s = input.shape();
    if (s.h < 1 || s.w < 1)
        throw ShapeError("global_avg_pool on zero spatial size");
    Tensor out({s.n, 1, 1, s.c}, DType::f32);
    auto src = input.data<float>();
    auto dst = out.data<float>();
    const std::int64_t hw = s.h * s.w;
    for (std::int64_t n = 0; n < s.n; ++n) {
        std::vector<double> sum(static_cast<std::size_t>(s.c), 0.0);
        for (std::int64_t p = 0; p < hw; ++p)
            for (std::int64_t c = 0; c < s.c; ++c)
                sum[c] += src[static_cast<std::size_t>((n * hw + p) * s.c + c)];
        for (std::int64_t c = 0; c < s.c; ++c)
            dst[static_cast<std::size_t>(n * s.c + c)] = static_cast<float>(sum[c] / static_cast<double>(hw));
    }
    return out;
}

Tensor instance_norm(const Tensor& input, std::span<const float> gamma, std::span<const float> beta, float eps)
{
    const Shape& s = input.shape();
    if (s.h < 1 || s.w < 1)
        throw ShapeError("instance_norm on zero spatial size");
    if (static_cast<std::int64_t>(gamma.size()) != s.c || static_cast<std::int64_t>(beta.size()) != s.c)
        throw ShapeError("instance_norm affine vectors must have C entries");
    if (!(eps > 0.0f))
        throw ShapeError("instance_norm eps must be positive");
    Tensor out({s.n, s.h, s.w, s.c}, DType::f32);
    auto src = input.data<float>();
    auto dst = out.data<float>();
    const std::int64_t hw = s.h * s.w;
    for (std::int64_t n = 0; n < s.n; ++n) {
        std::vector<double> mean(static_cast<std::size_t>(s.c), 0.0), var(static_cast<std::size_t>(s.c), 0.0);
        for (std::int64_t p = 0; p < hw; ++p)
            for (std::int64_t c = 0; c < s.c; ++c)
                mean[c] += src[static_cast<std::size_t>((n * hw + p) * s.c + c)];
        for (auto& m : mean)
            m /= static_cast<double>(hw);
        for (std::int64_t p = 0; p < hw; ++p)
            for (std::int64_t c = 0; c < s.c; ++c) {
                double d = src[static_cast<std::size_t>((n * hw + p) * s.c + c)] - mean[c];
                var[c] += d * d;
            }
        std::vector<float> center(static_cast<std::size_t>(s.c)), scale(static_cast<std::size_t>(s.c));
        for (std::int64_t c = 0; c < s.c; ++c) {
            center[c] = static_cast<float>(mean[c]);
            scale[c] = static_cast<float>(gamma[c] / std::sqrt(var[c] / static_cast<double>(hw) + eps));
        }
        for (std::int64_t p = 0; p < hw; ++p)
            for (std::int64_t c = 0; c < s.c; ++c) {
                auto i = static_cast<std::size_t>((n * hw + p) * s.c + c);
                dst[i] = (src[i] - center[c]) * scale[c] + beta[c];
            }
    }
    return out;
}

Tensor add(const Tensor& a, const Tensor& b)
{
    if (a.shape() != b.shape())
        throw ShapeError("add shape mismatch: " + a.shape().str() + " vs " + b.shape().str());
    Tensor out = a;
    auto po = out.data<float>();
    auto pb = b.data<float>();
    for (std::size_t i = 0; i < po.size(); ++i)
        po[i] += pb[i];
    return out;
}

namespace {

Shape broadcast_shape(const Shape& a, const Shape& b)
{
    auto pick = [&](std::int64_t x, std::int64_t y) {
        if (x == y || y == 1)
            return x;
        if (x == 1)
            return y;
        throw ShapeError("cannot broadcast " + a.str() + " with " + b.str());
    };
    return {pick(a.n, b.n), pick(a.h, b.h), pick(a.w, b.w), pick(a.c, b.c)};
}

} // namespace

Tensor multiply(const Tensor& x, const Tensor& gate)
{
    const Shape& sx = x.shape();
    const Shape& sg = gate.shape();
    Shape so = broadcast_shape(sx, sg);
    Tensor out(so, DType::f32);
    auto px = x.data<float>();
    auto pg = gate.data<float>();
    auto po = out.data<float>();
    auto idx = [](const Shape& s, std::int64_t n, std::int64_t h, std::int64_t w, std::int64_t c) {
        return static_cast<std::size_t>(
            ((std::min(n, s.n - 1) * s.h + std::min(h, s.h - 1)) * s.w + std::min(w, s.w - 1)) * s.c +
            std::min(c, s.c - 1));
    };
    std::size_t i = 0;
    for (std::int64_t n = 0; n < so.n; ++n)
        for (std::int64_t h = 0; h < so.h; ++h)
            for (std::int64_t w = 0; w < so.w; ++w)
                for (std::int64_t c = 0; c < so.c; ++c)
                    po[i++] = px[idx(sx, n, h, w, c)] * pg[idx(sg, n, h, w, c)];
    return out;
}

} // namespace mqn
