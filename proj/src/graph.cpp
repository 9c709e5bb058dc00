#include "mqn/graph.hpp"

#include <algorithm>
#include <cmath>

#include "mqn/random.hpp"

namespace mqn {

const char* node_kind_name(NodeKind k)
{
    switch (k) {
    case NodeKind::input: return "input";
    case NodeKind::conv: return "conv";
    case NodeKind::activation: return "activation";
    case NodeKind::add: return "add";
    case NodeKind::mul: return "mul";
    case NodeKind::upsample: return "upsample";
    case NodeKind::concat: return "concat";
    case NodeKind::global_pool: return "global_pool";
    case NodeKind::instance_norm: return "instance_norm";
    }
    return "?";
}

const char* variant_name(QuantVariant v)
{
    switch (v) {
    case QuantVariant::float32: return "float32";
    case QuantVariant::full_int8: return "full_int8";
    case QuantVariant::dynamic_range: return "dynamic_range";
    case QuantVariant::int8w_int16a: return "int8w_int16a";
    }
    return "?";
}

QuantScheme QuantScheme::parse(const std::string& name)
{
    if (name == "float32")
        return float32();
    if (name == "mixed")
        return mixed();
    if (name == "full_int8")
        return full_int8();
    if (name == "dynamic")
        return dynamic();
    if (name == "int16")
        return int16();
    throw Error("unknown quantization scheme '" + name + "'");
}

std::string QuantScheme::name() const
{
    for (const char* n : {"float32", "mixed", "full_int8", "dynamic", "int16"})
        if (parse(n) == *this)
            return n;
    return std::string(variant_name(backbone)) + "+" + variant_name(head);
}

bool QuantScheme::needs_calibration() const
{
    auto integer = [](QuantVariant v) { return v == QuantVariant::full_int8 || v == QuantVariant::int8w_int16a; };
    return integer(backbone) || integer(head);
}

int ModelGraph::index_of(const std::string& name) const
{
    for (std::size_t i = 0; i < nodes.size(); ++i)
        if (nodes[i].name == name)
            return static_cast<int>(i);
    throw Error("graph has no node '" + name + "'");
}

const Tensor& ModelGraph::weight(const std::string& name) const
{
    auto it = weights.find(name);
    if (it == weights.end())
        throw Error("graph has no weight '" + name + "'");
    return it->second.tensor;
}

std::span<const float> ModelGraph::bias(const Node& n) const
{
    return weight(n.bias_name()).data<float>();
}

namespace {

/// Incremental graph assembly with channel bookkeeping.
class Builder {
public:
    explicit Builder(ModelGraph& g) : g_(g) {}

    Partition partition = Partition::backbone;

    int input()
    {
        Node n;
        n.name = "input";
        n.kind = NodeKind::input;
        n.channels = 3;
        return push(std::move(n));
    }

    int conv(const std::string& name, int in, std::int64_t out_c, int k, int stride, Activation act,
             bool depthwise = false)
    {
        const std::int64_t in_c = channels(in);
        Node n;
        n.name = name;
        n.kind = NodeKind::conv;
        n.inputs = {in};
        n.channels = depthwise ? in_c : out_c;
        n.conv = ConvSpec::square(k, stride, depthwise ? static_cast<int>(in_c) : 1);
        n.act = act;
        const Shape ws = depthwise ? Shape{k, k, in_c, 1} : Shape{k, k, in_c, out_c};
        g_.weights[n.weight_name()] = {Tensor(ws, DType::f32), std::nullopt};
        g_.weights[n.bias_name()] = {Tensor({1, 1, 1, n.channels}, DType::f32), std::nullopt};
        return push(std::move(n));
    }

    int simple(const std::string& name, NodeKind kind, std::vector<int> inputs, std::int64_t out_c)
    {
        Node n;
        n.name = name;
        n.kind = kind;
        n.inputs = std::move(inputs);
        n.channels = out_c;
        return push(std::move(n));
    }

    int act(const std::string& name, int in, Activation a)
    {
        const int i = simple(name, NodeKind::activation, {in}, channels(in));
        g_.nodes[static_cast<std::size_t>(i)].act = a;
        return i;
    }

    int upsample(const std::string& name, int in, int factor)
    {
        const int i = simple(name, NodeKind::upsample, {in}, channels(in));
        g_.nodes[static_cast<std::size_t>(i)].factor = factor;
        return i;
    }

    int instance_norm(const std::string& name, int in)
    {
        const int i = simple(name, NodeKind::instance_norm, {in}, channels(in));
        const Node& n = g_.nodes[static_cast<std::size_t>(i)];
        g_.weights[n.gamma_name()] = {Tensor::filled({1, 1, 1, n.channels}, 1.0f), std::nullopt};
        g_.weights[n.beta_name()] = {Tensor({1, 1, 1, n.channels}, DType::f32), std::nullopt};
        return i;
    }

    int irlb(const std::string& name, int in, int expansion, int stride, std::int64_t out_c, Activation inner)
    {
        const std::int64_t in_c = channels(in);
        int x = in;
        if (expansion != 1)
            x = conv(name + ".expand", x, in_c * expansion, 1, 1, inner);
        x = conv(name + ".dw", x, 0, 3, stride, inner, true);
        x = conv(name + ".project", x, out_c, 1, 1, Activation::none);
        if (stride == 1 && in_c == out_c)
            x = simple(name + ".add", NodeKind::add, {in, x}, out_c);
        return x;
    }

    int attention(const std::string& name, int in, const MqnConfig& cfg)
    {
        const std::int64_t c = channels(in);
        switch (cfg.attention) {
        case AttentionKind::none: return in;
        case AttentionKind::sa: {
            int gate = act(name + ".sigmoid", conv(name + ".gate", in, 1, 1, 1, Activation::none), Activation::sigmoid);
            return simple(name + ".mul", NodeKind::mul, {in, gate}, c);
        }
        case AttentionKind::csa: {
            int spatial = act(name + ".spatial_sigmoid", conv(name + ".spatial", in, 1, 1, 1, Activation::none),
                              Activation::sigmoid);
            int channel = act(name + ".dw_sigmoid", conv(name + ".dw", in, 0, 3, 1, Activation::none, true),
                              Activation::sigmoid);
            int x = simple(name + ".mul1", NodeKind::mul, {in, spatial}, c);
            return simple(name + ".mul2", NodeKind::mul, {x, channel}, c);
        }
        case AttentionKind::ca: {
            const std::int64_t hidden = ca_hidden_channels(c, cfg.ca_reduction, cfg.ca_mode);
            int x = simple(name + ".pool", NodeKind::global_pool, {in}, c);
            x = conv(name + ".squeeze", x, hidden, 1, 1, Activation::relu);
            x = conv(name + ".excite", x, c, 1, 1, Activation::none);
            x = act(name + ".sigmoid", x, Activation::sigmoid);
            return simple(name + ".mul", NodeKind::mul, {in, x}, c);
        }
        }
        return in;
    }

    std::int64_t channels(int i) const { return g_.nodes[static_cast<std::size_t>(i)].channels; }

private:
    int push(Node n)
    {
        n.partition = partition;
        g_.nodes.push_back(std::move(n));
        return static_cast<int>(g_.nodes.size() - 1);
    }

    ModelGraph& g_;
};

struct EncoderStage {
    int expansion, channels, repeats, stride;
};

// MobileNetV2 inverted residual settings (t, c, n, s).
constexpr EncoderStage kEncoder[] = {{1, 16, 1, 1}, {6, 24, 2, 2},  {6, 32, 3, 2}, {6, 64, 4, 2},
                                     {6, 96, 3, 1}, {6, 160, 3, 2}, {6, 320, 1, 1}};

} // namespace

ModelGraph build_mqn(const MqnConfig& cfg)
{
    cfg.validate();
    ModelGraph g;
    g.config = cfg;
    Builder b(g);
    const Activation inner = cfg.relu6 ? Activation::relu6 : Activation::relu;

    const int input = b.input();
    int x = b.conv("enc.stem", input, make_divisible(32 * cfg.width), 3, 2, inner);

    // Encoder blocks are numbered as in the Keras MobileNetV2 (block 0 has no expansion).
    std::map<int, int> expand_out;
    int block = 0;
    for (const auto& st : kEncoder) {
        const int out_c = make_divisible(st.channels * cfg.width);
        for (int r = 0; r < st.repeats && block <= 16; ++r, ++block) {
            const std::string name = "enc.b" + std::to_string(block);
            const int stride = r == 0 ? st.stride : 1;
            x = b.irlb(name, x, st.expansion, stride, out_c, inner);
            if (st.expansion != 1)
                expand_out[block] = g.index_of(name + ".expand");
        }
    }

    std::vector<int> skips;
    for (int t : cfg.taps) {
        if (!expand_out.contains(t))
            throw Error("config: encoder block " + std::to_string(t) + " has no expand activation to tap");
        skips.push_back(expand_out[t]);
    }
    for (std::size_t i = 0; i < skips.size(); ++i)
        g.taps["skip" + std::to_string(i + 1)] = g.nodes[static_cast<std::size_t>(skips[i])].name;

    for (int k = 0; k < 4; ++k) {
        const std::string stage = "dec" + std::to_string(k + 1);
        const int width = cfg.decoder_widths[static_cast<std::size_t>(k)];
        const int skip = skips[static_cast<std::size_t>(3 - k)];
        x = b.upsample(stage + ".up", x, 2);
        x = b.simple(stage + ".cat", NodeKind::concat, {x, skip}, b.channels(x) + b.channels(skip));
        for (int j = 0; j < cfg.decoder_blocks; ++j)
            x = b.irlb(stage + ".irlb" + std::to_string(j + 1), x, j == 0 ? cfg.first_expansion : cfg.expansion, 1,
                       width, inner);
        x = b.attention(stage + ".att", x, cfg);
    }

    x = b.conv("cbr1", x, cfg.reduce_channels, 1, 1, Activation::relu);
    x = b.upsample("up5", x, 2);
    x = b.conv("cbr2", x, cfg.head_channels, 1, 1, Activation::relu);
    x = b.conv("cbr3", x, cfg.head_channels, 1, 1, Activation::relu);
    g.boundary = x;

    b.partition = Partition::head;
    x = b.conv("head.conv", x, 3, 3, 1, Activation::none);
    x = b.instance_norm("head.in", x);
    if (cfg.head_relu)
        x = b.act("head.relu", x, Activation::relu);
    x = b.act("head.tanh", x, Activation::tanh);
    x = b.simple("head.add", NodeKind::add, {input, x}, 3);
    x = b.act("head.sigmoid", x, Activation::sigmoid);
    g.output = x;
    return g;
}

void init_weights(ModelGraph& graph, std::uint64_t seed)
{
    if (graph.quantized())
        throw Error("init_weights needs a float graph");
    Rng rng(seed);
    for (const Node& n : graph.nodes) {
        if (n.kind == NodeKind::instance_norm) {
            auto& gamma = graph.weights.at(n.gamma_name()).tensor;
            gamma = Tensor::filled(gamma.shape(), 1.0f);
            auto& beta = graph.weights.at(n.beta_name()).tensor;
            beta = Tensor(beta.shape(), DType::f32);
            continue;
        }
        if (n.kind != NodeKind::conv)
            continue;
        auto& w = graph.weights.at(n.weight_name()).tensor;
        const Shape& s = w.shape();
        const double fan_in = static_cast<double>(s.n * s.h * (n.conv.groups == 1 ? s.w : 1));
        // He-uniform in front of rectifiers, unit-variance-preserving otherwise.
        const bool rectified = n.act == Activation::relu || n.act == Activation::relu6;
        const double bound = std::sqrt((rectified ? 6.0 : 3.0) / fan_in);
        for (float& v : w.data<float>())
            v = static_cast<float>(rng.uniform(-bound, bound));
        for (float& v : graph.weights.at(n.bias_name()).tensor.data<float>())
            v = static_cast<float>(rng.uniform(-0.05, 0.05));
    }
}

void zero_head(ModelGraph& graph)
{
    for (const Node& n : graph.nodes) {
        if (n.partition != Partition::head)
            continue;
        for (auto& [name, entry] : graph.weights) {
            if (name.rfind(n.name + ".", 0) != 0)
                continue;
            Tensor& t = entry.tensor;
            t = name == n.gamma_name() ? Tensor::filled(t.shape(), 1.0f) : Tensor(t.shape(), t.dtype());
        }
    }
}

std::vector<Shape> infer_shapes(const ModelGraph& graph, std::int64_t height, std::int64_t width)
{
    std::vector<Shape> shapes(graph.nodes.size());
    for (std::size_t i = 0; i < graph.nodes.size(); ++i) {
        const Node& n = graph.nodes[i];
        auto in = [&](std::size_t k) { return shapes[static_cast<std::size_t>(n.inputs[k])]; };
        switch (n.kind) {
        case NodeKind::input: shapes[i] = {1, height, width, 3}; break;
        case NodeKind::conv: {
            const Shape s = in(0);
            auto gy = conv_axis(s.h, n.conv.kernel_h, n.conv.stride, n.conv.padding);
            auto gx = conv_axis(s.w, n.conv.kernel_w, n.conv.stride, n.conv.padding);
            shapes[i] = {s.n, gy.out, gx.out, n.channels};
            break;
        }
        case NodeKind::upsample: {
            const Shape s = in(0);
            shapes[i] = {s.n, s.h * n.factor, s.w * n.factor, s.c};
            break;
        }
        case NodeKind::concat: {
            const Shape a = in(0), b = in(1);
            if (a.h != b.h || a.w != b.w)
                throw ShapeError("node " + n.name + ": concat of " + a.str() + " and " + b.str());
            shapes[i] = {a.n, a.h, a.w, a.c + b.c};
            break;
        }
        case NodeKind::global_pool: shapes[i] = {in(0).n, 1, 1, in(0).c}; break;
        default: shapes[i] = in(0); break;
        }
    }
    return shapes;
}

ModelCounts count_params_macs(const ModelGraph& graph, std::int64_t height, std::int64_t width)
{
    const auto shapes = infer_shapes(graph, height, width);
    ModelCounts counts;
    for (std::size_t i = 0; i < graph.nodes.size(); ++i) {
        const Node& n = graph.nodes[i];
        NodeCount nc;
        nc.name = n.name;
        nc.output = shapes[i];
        for (auto it = graph.weights.lower_bound(n.name + "."); it != graph.weights.end(); ++it) {
            if (it->first.rfind(n.name + ".", 0) != 0)
                break;
            if (it->first.find('.', n.name.size() + 1) == std::string::npos)
                nc.params += it->second.tensor.size();
        }
        if (n.kind == NodeKind::conv) {
            const Shape& in = shapes[static_cast<std::size_t>(n.inputs[0])];
            nc.macs = conv_macs(in.c, n.channels, n.conv, shapes[i].h, shapes[i].w);
        }
        counts.params += nc.params;
        counts.macs += nc.macs;
        counts.nodes.push_back(std::move(nc));
    }
    return counts;
}

QuantParams input_params(DType dtype)
{
    return QuantParams::per_tensor(1.0f / 255.0f, qmin(dtype), dtype);
}

} // namespace mqn
