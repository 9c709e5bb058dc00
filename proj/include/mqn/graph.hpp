#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mqn/config.hpp"
#include "mqn/image.hpp"
#include "mqn/ops.hpp"
#include "mqn/quant.hpp"

namespace mqn {

enum class NodeKind { input, conv, activation, add, mul, upsample, concat, global_pool, instance_norm };
enum class Partition { backbone, head };
enum class ExecMode { float32, integer, dynamic };

const char* node_kind_name(NodeKind k);

enum class QuantVariant { float32 = 0, full_int8 = 1, dynamic_range = 2, int8w_int16a = 3 };

const char* variant_name(QuantVariant v);

/// One quantization variant per partition.
struct QuantScheme {
    QuantVariant backbone = QuantVariant::float32;
    QuantVariant head = QuantVariant::float32;

    static QuantScheme float32() { return {}; }
    /// Full int8 backbone, dynamic-range head.
    static QuantScheme mixed() { return {QuantVariant::full_int8, QuantVariant::dynamic_range}; }
    static QuantScheme full_int8() { return {QuantVariant::full_int8, QuantVariant::full_int8}; }
    static QuantScheme dynamic() { return {QuantVariant::dynamic_range, QuantVariant::dynamic_range}; }
    /// int8 weights with int16 activations everywhere.
    static QuantScheme int16() { return {QuantVariant::int8w_int16a, QuantVariant::int8w_int16a}; }

    /// float32 | mixed | full_int8 | dynamic | int16
    static QuantScheme parse(const std::string& name);
    std::string name() const;
    bool is_float() const { return backbone == QuantVariant::float32 && head == QuantVariant::float32; }
    bool needs_calibration() const;
    QuantVariant variant(Partition p) const { return p == Partition::backbone ? backbone : head; }

    bool operator==(const QuantScheme&) const = default;
};

/// One layer. Every node produces exactly one output edge, identified by the
/// node index. Conv nodes may fuse none/relu/relu6; other activations are nodes.
struct Node {
    std::string name;
    NodeKind kind = NodeKind::input;
    std::vector<int> inputs;
    Partition partition = Partition::backbone;
    std::int64_t channels = 0; ///< output channels

    ConvSpec conv;                       ///< conv
    Activation act = Activation::none;   ///< conv (fused) and activation nodes
    int factor = 1;                      ///< upsample
    float eps = 1e-5f;                   ///< instance_norm

    ExecMode mode = ExecMode::float32;
    std::optional<QuantParams> out_params; ///< integer nodes

    std::string weight_name() const { return name + ".w"; }
    std::string bias_name() const { return name + ".b"; }
    std::string gamma_name() const { return name + ".gamma"; }
    std::string beta_name() const { return name + ".beta"; }
};

/// A stored parameter tensor, with its quantization when integer-valued.
struct WeightEntry {
    Tensor tensor;
    std::optional<QuantParams> quant;
};

/// Population statistics of one tensor per channel, over batch and space.
struct ChannelStats {
    std::vector<float> mean, var;
};

/// Per-edge observed ranges over a calibration set.
struct CalibrationRecord {
    std::map<std::string, std::pair<float, float>> ranges;
    /// Ranges of head edges after instance norm is replaced by folded batch norm.
    std::map<std::string, std::pair<float, float>> folded_ranges;
    /// Per-channel mean/variance of every instance-norm input.
    std::map<std::string, ChannelStats> norm_stats;
    std::size_t images = 0;

    /// Element-wise min/max of ranges; statistics pooled by image count
    /// (images are assumed to have equal pixel counts).
    void merge(const CalibrationRecord& other);
};

class ModelGraph {
public:
    MqnConfig config;
    std::vector<Node> nodes;
    std::map<std::string, WeightEntry> weights;
    int output = -1;
    int boundary = -1; ///< last backbone node; its edge is the only one crossing into the head
    QuantScheme scheme;
    std::optional<CalibrationRecord> calibration;
    std::map<std::string, std::string> taps; ///< skip name -> node name

    int index_of(const std::string& name) const;
    const Node& node(const std::string& name) const { return nodes[static_cast<std::size_t>(index_of(name))]; }
    const Tensor& weight(const std::string& name) const;
    std::span<const float> bias(const Node& n) const;
    bool quantized() const { return !scheme.is_float(); }
};

/// Builds the topology with zero conv weights and identity instance norm.
/// Throws when the config is invalid.
ModelGraph build_mqn(const MqnConfig& cfg);

/// Seeded fan-in scaled uniform initialization of every parameter (IN gets
/// gamma=1, beta=0). Only valid on a float graph.
void init_weights(ModelGraph& graph, std::uint64_t seed);

/// Sets every head parameter to zero (IN affine stays gamma=1, beta=0).
void zero_head(ModelGraph& graph);

/// Called after every float-evaluated node with its output and inputs.
using NodeObserver = std::function<void(const Node&, const Tensor& out, std::span<const Tensor* const> ins)>;

/// Float forward pass. Input is (N,H,W,3) in [0,1], H and W multiples of 32.
Tensor forward_float(const ModelGraph& graph, const Tensor& input, const NodeObserver& observer = {});

/// Forward pass of a quantized graph.
Tensor forward_mixed(const ModelGraph& graph, const Tensor& input);
Tensor forward_mixed(const ModelGraph& graph, const LdrImage& input);

struct ForwardTrace {
    std::vector<Tensor> values; ///< per node, dequantized to f32
    int dequantizations = 0;    ///< integer edges converted to f32 while running
};

/// Runs any graph (float or quantized) and keeps every edge value.
ForwardTrace forward_trace(const ModelGraph& graph, const Tensor& input);

/// Runs backbone nodes only and returns the boundary edge (dequantized when integer).
Tensor forward_backbone(const ModelGraph& graph, const Tensor& input);

/// Any-size inference: reflect-pads to a multiple of 32, runs, crops.
HdrImage infer_image(const ModelGraph& graph, const LdrImage& input);

/// Reflect padding (mirror without repeating the edge) to the given size.
Tensor pad_reflect(const Tensor& t, std::int64_t height, std::int64_t width);
Tensor crop(const Tensor& t, std::int64_t height, std::int64_t width);

struct NodeCount {
    std::string name;
    Shape output;
    std::int64_t params = 0;
    std::int64_t macs = 0;
};

struct ModelCounts {
    std::int64_t params = 0;
    std::int64_t macs = 0;
    std::vector<NodeCount> nodes;
};

/// Output shape of every node for a 1xHxWx3 input.
std::vector<Shape> infer_shapes(const ModelGraph& graph, std::int64_t height, std::int64_t width);

/// Parameters are stored tensor elements; MACs are the closed forms of conv nodes.
ModelCounts count_params_macs(const ModelGraph& graph, std::int64_t height, std::int64_t width);

/// Float forward over every image, recording per-edge min/max and instance-norm
/// statistics. Throws on an empty set.
CalibrationRecord calibrate_activations(const ModelGraph& graph, std::span<const LdrImage> images);
CalibrationRecord calibrate_activations(const ModelGraph& graph, std::span<const Tensor> inputs);

/// Returns a graph whose nodes run in the mode each partition's variant asks
/// for. Topology is unchanged; integer head variants turn instance norm into a
/// depthwise 1x1 conv carrying batch norm folded from calibration statistics.
ModelGraph quantize_model(const ModelGraph& graph, const QuantScheme& scheme, const CalibrationRecord* calib);

/// Applies the node-kind and mode changes of `scheme` without computing any
/// parameters (used when loading a quantized file).
void apply_scheme_structure(ModelGraph& graph, const QuantScheme& scheme);

/// Activation parameters of the network input for an integer consumer.
QuantParams input_params(DType dtype);

} // namespace mqn
