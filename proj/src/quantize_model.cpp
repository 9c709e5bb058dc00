#include <algorithm>
#include <cmath>

#include "mqn/graph.hpp"

namespace mqn {

void CalibrationRecord::merge(const CalibrationRecord& other)
{
    auto merge_ranges = [](auto& into, const auto& from) {
        for (const auto& [name, r] : from) {
            auto [it, inserted] = into.try_emplace(name, r);
            if (!inserted)
                it->second = {std::min(it->second.first, r.first), std::max(it->second.second, r.second)};
        }
    };
    merge_ranges(ranges, other.ranges);
    merge_ranges(folded_ranges, other.folded_ranges);
    const double wa = static_cast<double>(images), wb = static_cast<double>(other.images);
    for (const auto& [name, s] : other.norm_stats) {
        auto [it, inserted] = norm_stats.try_emplace(name, s);
        if (inserted || wa + wb == 0.0)
            continue;
        ChannelStats& t = it->second;
        if (t.mean.size() != s.mean.size())
            throw Error("calibration records disagree on channel count of " + name);
        for (std::size_t c = 0; c < t.mean.size(); ++c) {
            const double m = (wa * t.mean[c] + wb * s.mean[c]) / (wa + wb);
            const double sq = (wa * (t.var[c] + double(t.mean[c]) * t.mean[c]) +
                               wb * (s.var[c] + double(s.mean[c]) * s.mean[c])) /
                              (wa + wb);
            t.mean[c] = static_cast<float>(m);
            t.var[c] = static_cast<float>(std::max(0.0, sq - m * m));
        }
    }
    images += other.images;
}

namespace {

bool integer_variant(QuantVariant v)
{
    return v == QuantVariant::full_int8 || v == QuantVariant::int8w_int16a;
}

DType activation_dtype(QuantVariant v)
{
    return v == QuantVariant::int8w_int16a ? DType::i16 : DType::i8;
}

ExecMode mode_of(QuantVariant v)
{
    if (integer_variant(v))
        return ExecMode::integer;
    return v == QuantVariant::dynamic_range ? ExecMode::dynamic : ExecMode::float32;
}

void record_range(std::map<std::string, std::pair<float, float>>& ranges, const std::string& name, const Tensor& t)
{
    auto v = t.data<float>();
    if (v.empty())
        return;
    auto [mn, mx] = std::minmax_element(v.begin(), v.end());
    auto [it, inserted] = ranges.try_emplace(name, *mn, *mx);
    if (!inserted)
        it->second = {std::min(it->second.first, *mn), std::max(it->second.second, *mx)};
}

struct MomentSums {
    std::vector<double> sum, sumsq;
    double count = 0;
};

/// Depthwise 1x1 kernel and bias equal to inference batch norm with the given statistics.
std::pair<Tensor, std::vector<float>> folded_norm(const ModelGraph& g, const Node& n, const ChannelStats& st)
{
    const auto gamma = g.weight(n.gamma_name()).data<float>();
    const auto beta = g.weight(n.beta_name()).data<float>();
    if (st.mean.size() != gamma.size())
        throw Error("calibration statistics of " + n.name + " do not match its channel count");
    BatchNorm bn;
    bn.gamma.assign(gamma.begin(), gamma.end());
    bn.beta.assign(beta.begin(), beta.end());
    bn.mean = st.mean;
    bn.var = st.var;
    bn.eps = n.eps;
    const Tensor identity = Tensor::filled({1, 1, static_cast<std::int64_t>(gamma.size()), 1}, 1.0f);
    const std::vector<float> zero(gamma.size(), 0.0f);
    return fold_batch_norm(identity, zero, bn);
}

/// Replaces instance norm node `i` by a depthwise 1x1 convolution with the given parameters.
void to_folded_conv(ModelGraph& g, std::size_t i, std::optional<std::pair<Tensor, std::vector<float>>> params)
{
    Node& n = g.nodes[i];
    n.kind = NodeKind::conv;
    n.conv = ConvSpec::square(1, 1, static_cast<int>(n.channels));
    n.act = Activation::none;
    if (!params)
        params.emplace(Tensor({1, 1, n.channels, 1}, DType::f32), std::vector<float>(static_cast<std::size_t>(n.channels)));
    g.weights.erase(n.gamma_name());
    g.weights.erase(n.beta_name());
    g.weights[n.weight_name()] = {std::move(params->first), std::nullopt};
    const auto c = static_cast<std::int64_t>(params->second.size());
    g.weights[n.bias_name()] = {Tensor({1, 1, 1, c}, std::move(params->second)), std::nullopt};
}

} // namespace

CalibrationRecord calibrate_activations(const ModelGraph& graph, std::span<const Tensor> inputs)
{
    if (inputs.empty())
        throw Error("calibration needs at least one image");
    if (graph.quantized())
        throw Error("calibration runs on the float graph");

    CalibrationRecord rec;
    std::map<std::string, MomentSums> moments;
    NodeObserver observe = [&](const Node& n, const Tensor& out, std::span<const Tensor* const> ins) {
        record_range(rec.ranges, n.name, out);
        if (n.kind != NodeKind::instance_norm)
            return;
        const Tensor& x = *ins[0];
        const auto c = static_cast<std::size_t>(x.shape().c);
        auto& m = moments[n.name];
        m.sum.resize(c);
        m.sumsq.resize(c);
        auto v = x.data<float>();
        for (std::size_t i = 0; i < v.size(); ++i) {
            m.sum[i % c] += v[i];
            m.sumsq[i % c] += static_cast<double>(v[i]) * v[i];
        }
        m.count += static_cast<double>(v.size() / c);
    };
    for (const Tensor& x : inputs) {
        (void)forward_float(graph, x, observe);
        record_range(rec.ranges, "input", x);
        ++rec.images;
    }
    for (const auto& [name, m] : moments) {
        ChannelStats st;
        for (std::size_t c = 0; c < m.sum.size(); ++c) {
            const double mean = m.sum[c] / m.count;
            st.mean.push_back(static_cast<float>(mean));
            st.var.push_back(static_cast<float>(std::max(0.0, m.sumsq[c] / m.count - mean * mean)));
        }
        rec.norm_stats[name] = std::move(st);
    }

    // Second pass: head ranges with instance norm replaced by its batch-norm fold.
    if (!rec.norm_stats.empty()) {
        ModelGraph folded = graph;
        for (std::size_t i = 0; i < folded.nodes.size(); ++i) {
            const Node& n = folded.nodes[i];
            if (n.kind == NodeKind::instance_norm)
                to_folded_conv(folded, i, folded_norm(folded, n, rec.norm_stats.at(n.name)));
        }
        NodeObserver head = [&](const Node& n, const Tensor& out, std::span<const Tensor* const>) {
            if (n.partition == Partition::head)
                record_range(rec.folded_ranges, n.name, out);
        };
        for (const Tensor& x : inputs)
            (void)forward_float(folded, x, head);
    }
    return rec;
}

CalibrationRecord calibrate_activations(const ModelGraph& graph, std::span<const LdrImage> images)
{
    std::vector<Tensor> inputs;
    inputs.reserve(images.size());
    for (const LdrImage& img : images)
        inputs.push_back(to_tensor(img));
    return calibrate_activations(graph, inputs);
}

void apply_scheme_structure(ModelGraph& graph, const QuantScheme& scheme)
{
    if (!integer_variant(scheme.backbone) && integer_variant(scheme.head))
        throw Error("unsupported scheme: an integer head needs an integer backbone");
    graph.scheme = scheme;
    for (std::size_t i = 0; i < graph.nodes.size(); ++i) {
        Node& n = graph.nodes[i];
        const QuantVariant v = scheme.variant(n.partition);
        n.mode = mode_of(v);
        if (n.kind == NodeKind::input)
            n.mode = integer_variant(v) ? ExecMode::integer : ExecMode::float32;
        else if (n.kind != NodeKind::conv && n.mode == ExecMode::dynamic)
            n.mode = ExecMode::float32; // dynamic range only changes weighted layers
        if (n.kind == NodeKind::instance_norm && n.mode == ExecMode::integer)
            to_folded_conv(graph, i, std::nullopt);
    }
}

ModelGraph quantize_model(const ModelGraph& graph, const QuantScheme& scheme, const CalibrationRecord* calib)
{
    if (graph.quantized())
        throw Error("quantize_model expects a float graph");
    ModelGraph q = graph;
    if (scheme.is_float())
        return q;
    if (scheme.needs_calibration() && !calib)
        throw Error("scheme " + scheme.name() + " needs a calibration record");

    // Fold instance norm from calibration statistics before the structure change drops gamma/beta.
    std::map<std::size_t, std::pair<Tensor, std::vector<float>>> folds;
    if (integer_variant(scheme.head))
        for (std::size_t i = 0; i < q.nodes.size(); ++i) {
            const Node& n = q.nodes[i];
            if (n.kind != NodeKind::instance_norm)
                continue;
            auto it = calib->norm_stats.find(n.name);
            if (it == calib->norm_stats.end())
                throw Error("calibration has no statistics for " + n.name);
            folds.emplace(i, folded_norm(q, n, it->second));
        }

    apply_scheme_structure(q, scheme);
    for (auto& [i, params] : folds) {
        const Node& n = q.nodes[i];
        q.weights[n.weight_name()].tensor = std::move(params.first);
        q.weights[n.bias_name()].tensor = Tensor({1, 1, 1, n.channels}, std::move(params.second));
    }
    if (calib)
        q.calibration = *calib;

    for (Node& n : q.nodes) {
        const QuantVariant v = scheme.variant(n.partition);
        if (n.kind == NodeKind::conv && n.mode != ExecMode::float32) {
            auto& w = q.weights.at(n.weight_name());
            const int axis = n.conv.groups == 1 ? 3 : 2;
            w.quant = per_channel_symmetric(w.tensor, axis, DType::i8);
            w.tensor = quantize_tensor(w.tensor, *w.quant);
        }
        if (n.mode != ExecMode::integer)
            continue;
        const DType dt = activation_dtype(v);
        if (n.kind == NodeKind::input) {
            n.out_params = input_params(dt);
        } else if (n.kind == NodeKind::upsample) {
            n.out_params = q.nodes[static_cast<std::size_t>(n.inputs[0])].out_params;
        } else if (&n == &q.nodes[static_cast<std::size_t>(q.output)] && n.act == Activation::sigmoid) {
            // The final sigmoid spans [0, 1]; its codes are the display grid k/qrange.
            n.out_params = affine_params_from_range(0.0f, 1.0f, dt, false);
        } else {
            const auto& ranges = n.partition == Partition::head ? calib->folded_ranges : calib->ranges;
            auto it = ranges.find(n.name);
            if (it == ranges.end())
                throw Error("calibration has no range for edge " + n.name);
            n.out_params = affine_params_from_range(it->second.first, it->second.second, dt, false);
        }
        if (n.kind == NodeKind::conv) {
            const Node& src = q.nodes[static_cast<std::size_t>(n.inputs[0])];
            if (!src.out_params)
                throw Error("integer node " + n.name + " reads an edge without quantization parameters");
            auto& b = q.weights.at(n.bias_name());
            const auto& wq = *q.weights.at(n.weight_name()).quant;
            b.tensor = Tensor(b.tensor.shape(), quantize_bias(b.tensor.data<float>(), src.out_params->scale(), wq));
        }
    }
    return q;
}

} // namespace mqn
