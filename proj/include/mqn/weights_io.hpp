#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mqn/graph.hpp"

namespace mqn {

/// One record of an MQNW container.
struct NamedTensor {
    std::string name;
    Tensor tensor;
    std::optional<QuantParams> quant;
};

/// MQNW layout, all little-endian: magic "MQNW", u32 version (1), u32 count, then
/// per tensor: u16 name length, name bytes, u8 dtype, u8 ndim, ndim x u32 dims,
/// u8 quant flag [i8 axis, u32 count, count x f32 scale, count x i32 zero point],
/// raw row-major data. Tensors are written with ndim 4; shorter shapes are read
/// as left-padded with ones.
std::vector<std::uint8_t> write_container(const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> read_container(const std::vector<std::uint8_t>& bytes);

/// Serializes weights, the architecture config, the quantization scheme,
/// activation parameters and the calibration record.
std::vector<std::uint8_t> save_weights(const ModelGraph& graph);

/// Rebuilds the graph for `cfg` and fills it from the container. Tensors that
/// the graph does not know, shape mismatches and missing weights are FormatErrors.
ModelGraph load_weights(const std::vector<std::uint8_t>& bytes, const MqnConfig& cfg);

/// Loads with the config stored in the file (the default config if none).
ModelGraph load_weights(const std::vector<std::uint8_t>& bytes);

/// The config stored in a container, if any.
std::optional<MqnConfig> stored_config(const std::vector<std::uint8_t>& bytes);

} // namespace mqn
