#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mqn/ops.hpp"
#include "mqn/tensor.hpp"

namespace mqn {

/// Convolution kernel plus bias, with batch norm already folded in.
struct ConvWeights {
    Tensor kernel;
    std::vector<float> bias;
};

enum class AttentionKind { none, sa, csa, ca };

/// How the CA bottleneck width f' derives from f and r: f/r (default) or f*r.
enum class CaMode { divide, multiply };

const char* attention_name(AttentionKind k);
AttentionKind parse_attention(const std::string& s);

struct BlockConfig {
    int expansion = 6;
    int stride = 1;
    int out_channels = 0;
    AttentionKind attention = AttentionKind::none;
    int ca_reduction = 8;
    CaMode ca_mode = CaMode::divide;
    Activation inner_activation = Activation::relu6;
};

/// The residual shortcut exists only for stride 1 and matching channel counts.
bool has_shortcut(const BlockConfig& cfg, std::int64_t in_channels);

struct IrlbWeights {
    std::optional<ConvWeights> expand; ///< absent when expansion == 1
    ConvWeights depthwise;
    ConvWeights project;
};

/// Inverted residual linear bottleneck: expand 1x1 + act, depthwise 3x3 + act,
/// linear 1x1 projection, plus the input when the shortcut applies.
Tensor irlb(const Tensor& input, const BlockConfig& cfg, const IrlbWeights& w);

std::int64_t irlb_macs(const BlockConfig& cfg, std::int64_t in_channels, std::int64_t in_h, std::int64_t in_w);

struct SaWeights {
    ConvWeights gate; ///< 1x1, C -> 1
};

struct CsaWeights {
    ConvWeights spatial;   ///< 1x1, C -> 1
    ConvWeights depthwise; ///< 3x3 depthwise, C -> C
};

struct CaWeights {
    ConvWeights squeeze; ///< 1x1, C -> f'
    ConvWeights excite;  ///< 1x1, f' -> C
};

std::int64_t ca_hidden_channels(std::int64_t channels, int r, CaMode mode);

/// O = sigmoid(C1(I)) * I, gate broadcast over channels.
Tensor sa_block(const Tensor& input, const SaWeights& w);

/// O = sigmoid(D(I)) * (sigmoid(C1(I)) * I).
Tensor csa_block(const Tensor& input, const CsaWeights& w);

/// O = sigmoid(C_f(relu(C_f'(GP(I))))) * I, gate broadcast over space.
Tensor ca_block(const Tensor& input, const CaWeights& w, int r, CaMode mode = CaMode::divide);

/// relu(conv1x1(x) + b).
Tensor conv_bn_relu(const Tensor& input, const ConvWeights& w);

} // namespace mqn
