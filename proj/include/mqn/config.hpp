#pragma once

#include <string>
#include <vector>

#include "mqn/blocks.hpp"

namespace mqn {

/// Rounds a channel count to the nearest multiple of `divisor` (floor `divisor`),
/// never dropping more than 10% below `value`.
int make_divisible(double value, int divisor = 8);

/// Architecture hyperparameters of the network. Every field has a key in the
/// plain-text config format (see to_text()).
struct MqnConfig {
    float width = 0.35f;                          ///< MobileNetV2 width multiplier
    std::vector<int> taps{1, 3, 6, 13};           ///< encoder blocks whose expand activation feeds a skip
    std::vector<int> decoder_widths{192, 96, 24, 16};
    int decoder_blocks = 2;                       ///< IRLBs per decoder stage
    int expansion = 6;                            ///< t of the second and later decoder IRLBs
    int first_expansion = 1;                      ///< t of the first IRLB after each concat
    AttentionKind attention = AttentionKind::ca;
    int ca_reduction = 8;
    CaMode ca_mode = CaMode::divide;
    int reduce_channels = 16;                     ///< ConvBnReLU 1 width
    int head_channels = 16;                       ///< ConvBnReLU 2/3 width, i.e. the head input
    bool head_relu = true;                        ///< ReLU between IN and tanh in the head
    bool relu6 = true;                            ///< IRLB inner activation: relu6 or relu
    int input_height = 256;
    int input_width = 256;

    void validate() const;

    /// key=value lines, one per field.
    std::string to_text() const;
    static MqnConfig parse(const std::string& text);

    /// "default" or a path to a key=value file.
    static MqnConfig load(const std::string& path_or_default);
};

} // namespace mqn
