#include <algorithm>
#include <optional>

#include "mqn/graph.hpp"

namespace mqn {

namespace {

bool is_integer(const Node& n)
{
    return n.mode == ExecMode::integer;
}

/// Runs nodes [0, last] in order. Each edge holds a float value, a quantized
/// value, or both; conversions happen only when a consumer needs the other form.
class Executor {
public:
    Executor(const ModelGraph& g, const Tensor& input, const NodeObserver* observer, bool keep_all)
        : g_(g), observer_(observer), keep_all_(keep_all), f_(g.nodes.size()), q_(g.nodes.size()),
          last_use_(g.nodes.size(), -1)
    {
        const Shape& s = input.shape();
        if (s.c != 3 || s.h % 32 != 0 || s.w % 32 != 0 || s.h == 0 || s.w == 0)
            throw ShapeError("network input must be (N,H,W,3) with H and W multiples of 32, got " + s.str());
        if (input.dtype() != DType::f32)
            throw ShapeError("network input must be f32");
        for (std::size_t i = 0; i < g.nodes.size(); ++i)
            for (int in : g.nodes[i].inputs)
                last_use_[static_cast<std::size_t>(in)] = static_cast<int>(i);
        input_ = input;
    }

    void run(int last)
    {
        for (int i = 0; i <= last; ++i) {
            step(static_cast<std::size_t>(i));
            if (!keep_all_)
                release(i);
        }
    }

    Tensor take_float(int i)
    {
        const Node& n = g_.nodes[static_cast<std::size_t>(i)];
        if (is_integer(n) && n.kind != NodeKind::input && !f_[static_cast<std::size_t>(i)])
            ++dequantizations;
        return as_float(i);
    }

    /// Float view of every edge for tracing, not counted as a pipeline conversion.
    Tensor view_float(int i)
    {
        auto k = static_cast<std::size_t>(i);
        if (f_[k])
            return *f_[k];
        return q_[k]->dequantize();
    }

    int dequantizations = 0;

private:
    const Tensor& as_float(int i)
    {
        auto k = static_cast<std::size_t>(i);
        if (!f_[k])
            f_[k] = q_[k]->dequantize();
        return *f_[k];
    }

    const QTensor& as_quant(int i)
    {
        auto k = static_cast<std::size_t>(i);
        if (!q_[k]) {
            const Node& n = g_.nodes[k];
            if (!n.out_params)
                throw Error("node " + n.name + " feeds an integer node but has no quantization parameters");
            q_[k] = quantize(*f_[k], *n.out_params);
        }
        return *q_[k];
    }

    const Tensor& fin(const Node& n, std::size_t k)
    {
        const int src = n.inputs[k];
        const Node& p = g_.nodes[static_cast<std::size_t>(src)];
        if (!f_[static_cast<std::size_t>(src)] && is_integer(p))
            ++dequantizations;
        return as_float(src);
    }

    const QTensor& qin(const Node& n, std::size_t k) { return as_quant(n.inputs[k]); }

    void release(int i)
    {
        for (int in : g_.nodes[static_cast<std::size_t>(i)].inputs) {
            auto k = static_cast<std::size_t>(in);
            if (last_use_[k] == i && in != g_.output && in != g_.boundary) {
                f_[k].reset();
                q_[k].reset();
            }
        }
    }

    const QTensor& weight_q(const std::string& name)
    {
        auto it = g_.weights.find(name);
        if (it == g_.weights.end() || !it->second.quant)
            throw Error("weight " + name + " is not quantized");
        auto [pos, inserted] = qweights_.try_emplace(name, QTensor{it->second.tensor, *it->second.quant});
        return pos->second;
    }

    void step(std::size_t k)
    {
        const Node& n = g_.nodes[k];
        if (n.kind == NodeKind::input) {
            f_[k] = input_;
            if (is_integer(n))
                as_quant(static_cast<int>(k));
            return;
        }
        if (is_integer(n))
            step_integer(n, k);
        else
            step_float(n, k);
    }

    void step_float(const Node& n, std::size_t k)
    {
        Tensor out;
        switch (n.kind) {
        case NodeKind::conv: {
            const Tensor& x = fin(n, 0);
            if (n.mode == ExecMode::dynamic) {
                out = dynamic_conv2d(x, weight_q(n.weight_name()), g_.bias(n), n.conv, n.act);
            } else {
                const Tensor& w = g_.weight(n.weight_name());
                out = n.conv.groups == 1 ? conv2d(x, w, g_.bias(n), n.conv) : depthwise_conv2d(x, w, g_.bias(n), n.conv);
                if (n.act != Activation::none)
                    out = activation(out, n.act);
            }
            break;
        }
        case NodeKind::activation: out = activation(fin(n, 0), n.act); break;
        case NodeKind::add: out = add(fin(n, 0), fin(n, 1)); break;
        case NodeKind::mul: out = multiply(fin(n, 0), fin(n, 1)); break;
        case NodeKind::upsample: out = upsample_nearest(fin(n, 0), n.factor); break;
        case NodeKind::concat: out = concat_channels(fin(n, 0), fin(n, 1)); break;
        case NodeKind::global_pool: out = global_avg_pool(fin(n, 0)); break;
        case NodeKind::instance_norm:
            out = instance_norm(fin(n, 0), g_.weight(n.gamma_name()).data<float>(),
                                g_.weight(n.beta_name()).data<float>(), n.eps);
            break;
        case NodeKind::input: break;
        }
        if (observer_ && *observer_) {
            std::vector<const Tensor*> ins;
            for (int in : n.inputs)
                ins.push_back(&*f_[static_cast<std::size_t>(in)]);
            (*observer_)(n, out, ins);
        }
        f_[k] = std::move(out);
    }

    void step_integer(const Node& n, std::size_t k)
    {
        if (!n.out_params)
            throw Error("integer node " + n.name + " has no output quantization parameters");
        const QuantParams& op = *n.out_params;
        QTensor out;
        switch (n.kind) {
        case NodeKind::conv: {
            const auto& b = g_.weight(n.bias_name());
            out = quantized_conv2d(qin(n, 0), weight_q(n.weight_name()), b.data<std::int32_t>(), n.conv, op, n.act);
            break;
        }
        case NodeKind::activation: out = quantized_activation(qin(n, 0), n.act, op); break;
        case NodeKind::add: out = quantized_add(qin(n, 0), qin(n, 1), op); break;
        case NodeKind::mul: out = quantized_multiply(qin(n, 0), qin(n, 1), op); break;
        case NodeKind::upsample: {
            const QTensor& x = qin(n, 0);
            out = {upsample_nearest(x.values, n.factor), x.params};
            break;
        }
        case NodeKind::concat: out = quantized_concat(qin(n, 0), qin(n, 1), op); break;
        case NodeKind::global_pool: out = quantized_global_avg_pool(qin(n, 0), op); break;
        case NodeKind::instance_norm:
            throw Error("instance norm node " + n.name + " cannot run in integer mode");
        case NodeKind::input: break;
        }
        q_[k] = std::move(out);
    }

    const ModelGraph& g_;
    const NodeObserver* observer_;
    bool keep_all_;
    Tensor input_;
    std::vector<std::optional<Tensor>> f_;
    std::vector<std::optional<QTensor>> q_;
    std::vector<int> last_use_;
    std::map<std::string, QTensor> qweights_;
};

} // namespace

Tensor forward_float(const ModelGraph& graph, const Tensor& input, const NodeObserver& observer)
{
    if (graph.quantized())
        throw Error("forward_float on a quantized graph; use forward_mixed");
    Executor ex(graph, input, &observer, false);
    ex.run(graph.output);
    return ex.take_float(graph.output);
}

Tensor forward_mixed(const ModelGraph& graph, const Tensor& input)
{
    if (!graph.quantized())
        throw Error("forward_mixed needs a graph produced by quantize_model");
    Executor ex(graph, input, nullptr, false);
    ex.run(graph.output);
    return ex.take_float(graph.output);
}

Tensor forward_mixed(const ModelGraph& graph, const LdrImage& input)
{
    return forward_mixed(graph, to_tensor(input));
}

ForwardTrace forward_trace(const ModelGraph& graph, const Tensor& input)
{
    Executor ex(graph, input, nullptr, true);
    ex.run(graph.output);
    ForwardTrace trace;
    // Pipeline conversions are counted before the trace makes its own float views.
    (void)ex.take_float(graph.output);
    trace.dequantizations = ex.dequantizations;
    for (std::size_t i = 0; i < graph.nodes.size(); ++i)
        trace.values.push_back(ex.view_float(static_cast<int>(i)));
    return trace;
}

Tensor forward_backbone(const ModelGraph& graph, const Tensor& input)
{
    for (int i = 0; i <= graph.boundary; ++i)
        if (graph.nodes[static_cast<std::size_t>(i)].partition != Partition::backbone)
            throw Error("graph partition is not a prefix of the node order");
    Executor ex(graph, input, nullptr, false);
    ex.run(graph.boundary);
    return ex.take_float(graph.boundary);
}

namespace {

std::int64_t reflect(std::int64_t i, std::int64_t n)
{
    if (n == 1)
        return 0;
    const std::int64_t period = 2 * (n - 1);
    i %= period;
    if (i < 0)
        i += period;
    return i < n ? i : period - i;
}

} // namespace

Tensor pad_reflect(const Tensor& t, std::int64_t height, std::int64_t width)
{
    const Shape& s = t.shape();
    if (height < s.h || width < s.w)
        throw ShapeError("pad_reflect target smaller than input");
    Tensor out({s.n, height, width, s.c}, DType::f32);
    auto src = t.data<float>();
    auto dst = out.data<float>();
    for (std::int64_t n = 0; n < s.n; ++n)
        for (std::int64_t y = 0; y < height; ++y)
            for (std::int64_t x = 0; x < width; ++x) {
                const auto from = static_cast<std::size_t>(t.offset(n, reflect(y, s.h), reflect(x, s.w), 0));
                std::copy_n(&src[from], s.c, &dst[static_cast<std::size_t>(out.offset(n, y, x, 0))]);
            }
    return out;
}

Tensor crop(const Tensor& t, std::int64_t height, std::int64_t width)
{
    const Shape& s = t.shape();
    if (height > s.h || width > s.w)
        throw ShapeError("crop larger than input");
    Tensor out({s.n, height, width, s.c}, DType::f32);
    auto src = t.data<float>();
    auto dst = out.data<float>();
    for (std::int64_t n = 0; n < s.n; ++n)
        for (std::int64_t y = 0; y < height; ++y)
            std::copy_n(&src[static_cast<std::size_t>(t.offset(n, y, 0, 0))], width * s.c,
                        &dst[static_cast<std::size_t>(out.offset(n, y, 0, 0))]);
    return out;
}

HdrImage infer_image(const ModelGraph& graph, const LdrImage& input)
{
    if (input.width() == 0 || input.height() == 0)
        throw ShapeError("empty input image");
    const std::int64_t h = (input.height() + 31) / 32 * 32;
    const std::int64_t w = (input.width() + 31) / 32 * 32;
    const Tensor x = pad_reflect(to_tensor(input), h, w);
    const Tensor y = graph.quantized() ? forward_mixed(graph, x) : forward_float(graph, x);
    return hdr_from_tensor(crop(y, input.height(), input.width()));
}

} // namespace mqn
