#include "mqn/blocks.hpp"

#include <algorithm>

namespace mqn {

const char* attention_name(AttentionKind k)
{
    switch (k) {
    case AttentionKind::none: return "none";
    case AttentionKind::sa: return "sa";
    case AttentionKind::csa: return "csa";
    case AttentionKind::ca: return "ca";
    }
    return "?";
}

AttentionKind parse_attention(const std::string& s)
{
    if (s == "none")
        return AttentionKind::none;
    if (s == "sa")
        return AttentionKind::sa;
    if (s == "csa")
        return AttentionKind::csa;
    if (s == "ca")
        return AttentionKind::ca;
    throw Error("unknown attention kind '" + s + "'");
}

bool has_shortcut(const BlockConfig& cfg, std::int64_t in_channels)
{
    return cfg.stride == 1 && in_channels == cfg.out_channels;
}

Tensor irlb(const Tensor& input, const BlockConfig& cfg, const IrlbWeights& w)
{
    const std::int64_t cin = input.shape().c;
    if (cfg.expansion != 1 && !w.expand)
        throw ShapeError("irlb with expansion " + std::to_string(cfg.expansion) + " needs expand weights");
    Tensor x = input;
    if (w.expand) {
        if (w.expand->kernel.shape().c != cin * cfg.expansion)
            throw ShapeError("irlb expand weights " + w.expand->kernel.shape().str() + " do not match t*Cin");
        x = activation(conv2d(x, w.expand->kernel, w.expand->bias, ConvSpec::pointwise()), cfg.inner_activation);
    }
    x = activation(depthwise_conv2d(x, w.depthwise.kernel, w.depthwise.bias,
                                    ConvSpec::square(3, cfg.stride, static_cast<int>(x.shape().c))),
                   cfg.inner_activation);
    x = conv2d(x, w.project.kernel, w.project.bias, ConvSpec::pointwise());
    if (x.shape().c != cfg.out_channels)
        throw ShapeError("irlb project weights do not produce out_channels");
    if (has_shortcut(cfg, cin))
        x = add(input, x);
    return x;
}

std::int64_t irlb_macs(const BlockConfig& cfg, std::int64_t in_channels, std::int64_t in_h, std::int64_t in_w)
{
    const std::int64_t hidden = in_channels * cfg.expansion;
    std::int64_t macs = 0;
    if (cfg.expansion != 1)
        macs += conv_macs(in_channels, hidden, ConvSpec::pointwise(), in_h, in_w);
    const auto spec = ConvSpec::square(3, cfg.stride, static_cast<int>(hidden));
    const auto gy = conv_axis(in_h, 3, cfg.stride, Padding::same);
    const auto gx = conv_axis(in_w, 3, cfg.stride, Padding::same);
    macs += conv_macs(hidden, hidden, spec, gy.out, gx.out);
    macs += conv_macs(hidden, cfg.out_channels, ConvSpec::pointwise(), gy.out, gx.out);
    return macs;
}

std::int64_t ca_hidden_channels(std::int64_t channels, int r, CaMode mode)
{
    if (r < 1)
        throw ShapeError("CA ratio must be positive");
    return mode == CaMode::divide ? std::max<std::int64_t>(1, channels / r) : channels * r;
}

Tensor sa_block(const Tensor& input, const SaWeights& w)
{
    if (w.gate.kernel.shape().c != 1)
        throw ShapeError("SA gate must produce one channel");
    Tensor gate = activation(conv2d(input, w.gate.kernel, w.gate.bias, ConvSpec::pointwise()), Activation::sigmoid);
    return multiply(input, gate);
}

Tensor csa_block(const Tensor& input, const CsaWeights& w)
{
    if (w.spatial.kernel.shape().c != 1)
        throw ShapeError("CSA spatial gate must produce one channel");
    Tensor spatial =
        activation(conv2d(input, w.spatial.kernel, w.spatial.bias, ConvSpec::pointwise()), Activation::sigmoid);
    Tensor channel = activation(depthwise_conv2d(input, w.depthwise.kernel, w.depthwise.bias,
                                                 ConvSpec::square(3, 1, static_cast<int>(input.shape().c))),
                                Activation::sigmoid);
    return multiply(multiply(input, spatial), channel);
}

Tensor ca_block(const Tensor& input, const CaWeights& w, int r, CaMode mode)
{
    const std::int64_t hidden = ca_hidden_channels(input.shape().c, r, mode);
    if (w.squeeze.kernel.shape().c != hidden || w.excite.kernel.shape().c != input.shape().c)
        throw ShapeError("CA weights do not match channels and ratio");
    Tensor pooled = global_avg_pool(input);
    Tensor z = activation(conv2d(pooled, w.squeeze.kernel, w.squeeze.bias, ConvSpec::pointwise()), Activation::relu);
    Tensor gate = activation(conv2d(z, w.excite.kernel, w.excite.bias, ConvSpec::pointwise()), Activation::sigmoid);
    return multiply(input, gate);
}

Tensor conv_bn_relu(const Tensor& input, const ConvWeights& w)
{
    return activation(conv2d(input, w.kernel, w.bias, ConvSpec::pointwise()), Activation::relu);
}

} // namespace mqn
