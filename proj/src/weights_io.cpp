#include "mqn/weights_io.hpp"

#include <bit>
#include <cstring>

#include "mqn/io.hpp"

namespace mqn {

static_assert(std::endian::native == std::endian::little, "raw tensor data is copied as little-endian");

namespace {

constexpr std::uint8_t kMagic[4] = {0x4D, 0x51, 0x4E, 0x57};
constexpr std::uint32_t kVersion = 1;

const std::string kConfig = "__config";
const std::string kScheme = "__scheme";
const std::string kImages = "__calib_images";
const std::string kRange = "__calib.";
const std::string kFolded = "__calib_folded.";
const std::string kStats = "__calib_stats.";
const std::string kAct = ".act";

bool starts_with(const std::string& s, const std::string& p)
{
    return s.rfind(p, 0) == 0;
}

bool ends_with(const std::string& s, const std::string& p)
{
    return s.size() >= p.size() && s.compare(s.size() - p.size(), p.size(), p) == 0;
}

} // namespace

std::vector<std::uint8_t> write_container(const std::vector<NamedTensor>& tensors)
{
    ByteWriter w;
    w.bytes(kMagic, 4);
    w.u32(kVersion);
    w.u32(static_cast<std::uint32_t>(tensors.size()));
    for (const auto& t : tensors) {
        if (t.name.size() > 0xFFFF)
            throw Error("tensor name too long: " + t.name.substr(0, 40) + "...");
        w.u16(static_cast<std::uint16_t>(t.name.size()));
        w.bytes(t.name.data(), t.name.size());
        w.u8(static_cast<std::uint8_t>(t.tensor.dtype()));
        w.u8(4);
        for (auto d : t.tensor.shape().dims())
            w.u32(static_cast<std::uint32_t>(d));
        w.u8(t.quant ? 1 : 0);
        if (t.quant) {
            w.u8(static_cast<std::uint8_t>(static_cast<std::int8_t>(t.quant->axis)));
            w.u32(static_cast<std::uint32_t>(t.quant->scales.size()));
            for (float s : t.quant->scales)
                w.f32(s);
            for (auto z : t.quant->zero_points)
                w.i32(z);
        }
        auto raw = t.tensor.bytes();
        w.bytes(raw.data(), raw.size());
    }
    return std::move(w.data());
}

std::vector<NamedTensor> read_container(const std::vector<std::uint8_t>& bytes)
{
    ByteReader r(bytes);
    r.context = "header";
    std::uint8_t magic[4];
    r.bytes(magic, 4);
    if (std::memcmp(magic, kMagic, 4) != 0)
        throw FormatError("bad magic, not an MQNW weights file", 0);
    const std::uint32_t version = r.u32();
    if (version != kVersion)
        throw FormatError("unsupported MQNW version " + std::to_string(version), 4);
    const std::uint32_t count = r.u32();

    std::vector<NamedTensor> out;
    for (std::uint32_t i = 0; i < count; ++i) {
        NamedTensor t;
        r.context = "tensor #" + std::to_string(i);
        const std::uint16_t len = r.u16();
        t.name.resize(len);
        r.bytes(t.name.data(), len);
        r.context = "tensor '" + t.name + "'";
        const auto dtype_at = static_cast<std::int64_t>(r.offset());
        const std::uint8_t dt = r.u8();
        if (dt > 3)
            throw FormatError("unknown dtype " + std::to_string(dt) + " in " + r.context, dtype_at);
        const std::uint8_t ndim = r.u8();
        if (ndim > 4)
            throw FormatError("tensor '" + t.name + "' has " + std::to_string(ndim) + " dims (max 4)",
                              static_cast<std::int64_t>(r.offset()) - 1);
        std::int64_t dims[4] = {1, 1, 1, 1};
        for (int d = 4 - ndim; d < 4; ++d)
            dims[d] = r.u32();
        const std::uint8_t flag = r.u8();
        if (flag > 1)
            throw FormatError("bad quantization flag in " + r.context, static_cast<std::int64_t>(r.offset()) - 1);
        if (flag) {
            QuantParams q;
            q.dtype = static_cast<DType>(dt);
            q.axis = static_cast<std::int8_t>(r.u8());
            const std::uint32_t n = r.u32();
            if (n > r.remaining() / 8)
                throw FormatError("truncated data in " + r.context, static_cast<std::int64_t>(bytes.size()));
            q.scales.resize(n);
            q.zero_points.resize(n);
            for (auto& s : q.scales)
                s = r.f32();
            for (auto& z : q.zero_points)
                z = r.i32();
            try {
                q.validate();
            } catch (const ShapeError& e) {
                throw FormatError(r.context + ": " + e.what(), static_cast<std::int64_t>(r.offset()));
            }
            t.quant = std::move(q);
        }
        const Shape shape{dims[0], dims[1], dims[2], dims[3]};
        const auto n = static_cast<std::size_t>(shape.elements());
        const std::size_t size = n * dtype_size(static_cast<DType>(dt));
        if (n != 0 && (size / n != dtype_size(static_cast<DType>(dt)) || size > r.remaining()))
            throw FormatError("truncated data in " + r.context, static_cast<std::int64_t>(bytes.size()));
        t.tensor = Tensor(shape, static_cast<DType>(dt));
        with_dtype(t.tensor.dtype(), [&](auto tag) {
            using T = decltype(tag);
            auto dst = t.tensor.data<T>();
            if (size)
                r.bytes(dst.data(), size);
        });
        out.push_back(std::move(t));
    }
    if (r.remaining() != 0)
        throw FormatError("trailing bytes after the last tensor", static_cast<std::int64_t>(r.offset()));
    return out;
}

namespace {

Tensor pair_tensor(std::pair<float, float> r)
{
    return Tensor::f32({1, 1, 1, 2}, {r.first, r.second});
}

Tensor text_tensor(const std::string& s)
{
    const Shape shape{1, 1, 1, static_cast<std::int64_t>(s.size())};
    return Tensor(shape, std::vector<std::int8_t>(s.begin(), s.end()));
}

std::string tensor_text(const Tensor& t)
{
    auto v = t.data<std::int8_t>();
    return {v.begin(), v.end()};
}

} // namespace

std::vector<std::uint8_t> save_weights(const ModelGraph& graph)
{
    std::vector<NamedTensor> ts;
    ts.push_back({kConfig, text_tensor(graph.config.to_text()), std::nullopt});
    ts.push_back({kScheme,
                  Tensor({1, 1, 1, 2}, std::vector<std::int32_t>{static_cast<std::int32_t>(graph.scheme.backbone),
                                                                 static_cast<std::int32_t>(graph.scheme.head)}),
                  std::nullopt});
    for (const auto& [name, w] : graph.weights)
        ts.push_back({name, w.tensor, w.quant});
    for (const Node& n : graph.nodes)
        if (n.out_params)
            ts.push_back({n.name + kAct, Tensor({0, 0, 0, 0}, n.out_params->dtype), n.out_params});
    if (graph.calibration) {
        const CalibrationRecord& c = *graph.calibration;
        ts.push_back({kImages, Tensor({1, 1, 1, 1}, std::vector<std::int32_t>{static_cast<std::int32_t>(c.images)}),
                      std::nullopt});
        for (const auto& [name, r] : c.ranges)
            ts.push_back({kRange + name, pair_tensor(r), std::nullopt});
        for (const auto& [name, r] : c.folded_ranges)
            ts.push_back({kFolded + name, pair_tensor(r), std::nullopt});
        for (const auto& [name, s] : c.norm_stats) {
            std::vector<float> v = s.mean;
            v.insert(v.end(), s.var.begin(), s.var.end());
            ts.push_back({kStats + name, Tensor({1, 1, 2, static_cast<std::int64_t>(s.mean.size())}, std::move(v)),
                          std::nullopt});
        }
    }
    return write_container(ts);
}

std::optional<MqnConfig> stored_config(const std::vector<std::uint8_t>& bytes)
{
    for (const auto& t : read_container(bytes))
        if (t.name == kConfig) {
            if (t.tensor.dtype() != DType::i8)
                throw FormatError("tensor '" + kConfig + "' must be i8 text");
            return MqnConfig::parse(tensor_text(t.tensor));
        }
    return std::nullopt;
}

ModelGraph load_weights(const std::vector<std::uint8_t>& bytes)
{
    auto cfg = stored_config(bytes);
    return load_weights(bytes, cfg ? *cfg : MqnConfig{});
}

ModelGraph load_weights(const std::vector<std::uint8_t>& bytes, const MqnConfig& cfg)
{
    const auto tensors = read_container(bytes);
    ModelGraph g = build_mqn(cfg);

    QuantScheme scheme;
    for (const auto& t : tensors)
        if (t.name == kScheme) {
            if (t.tensor.dtype() != DType::i32 || t.tensor.size() != 2)
                throw FormatError("tensor '" + kScheme + "' must hold two i32 values");
            auto v = t.tensor.data<std::int32_t>();
            for (auto x : v)
                if (x < 0 || x > 3)
                    throw FormatError("tensor '" + kScheme + "' names unknown variant " + std::to_string(x));
            scheme = {static_cast<QuantVariant>(v[0]), static_cast<QuantVariant>(v[1])};
        }
    try {
        apply_scheme_structure(g, scheme);
    } catch (const Error& e) {
        throw FormatError(e.what());
    }

    std::map<std::string, bool> seen;
    CalibrationRecord calib;
    bool has_calib = false;
    auto range_of = [](const NamedTensor& t) {
        if (t.tensor.dtype() != DType::f32 || t.tensor.size() != 2)
            throw FormatError("calibration tensor '" + t.name + "' must hold two f32 values");
        auto v = t.tensor.data<float>();
        if (v[0] > v[1])
            throw FormatError("calibration tensor '" + t.name + "' has min > max");
        return std::pair{v[0], v[1]};
    };

    for (const auto& t : tensors) {
        if (t.name == kConfig || t.name == kScheme)
            continue;
        if (t.name == kImages) {
            if (t.tensor.dtype() != DType::i32 || t.tensor.size() != 1)
                throw FormatError("tensor '" + kImages + "' must hold one i32");
            calib.images = static_cast<std::size_t>(t.tensor.data<std::int32_t>()[0]);
            has_calib = true;
        } else if (starts_with(t.name, kRange)) {
            calib.ranges[t.name.substr(kRange.size())] = range_of(t);
            has_calib = true;
        } else if (starts_with(t.name, kFolded)) {
            calib.folded_ranges[t.name.substr(kFolded.size())] = range_of(t);
            has_calib = true;
        } else if (starts_with(t.name, kStats)) {
            const Shape& s = t.tensor.shape();
            if (t.tensor.dtype() != DType::f32 || s.n != 1 || s.h != 1 || s.w != 2 || s.c < 1)
                throw FormatError("calibration tensor '" + t.name + "' must be f32 (2, C)");
            auto v = t.tensor.data<float>();
            const auto c = static_cast<std::size_t>(s.c);
            ChannelStats st;
            st.mean.assign(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(c));
            st.var.assign(v.begin() + static_cast<std::ptrdiff_t>(c), v.end());
            calib.norm_stats[t.name.substr(kStats.size())] = std::move(st);
            has_calib = true;
        } else if (auto it = g.weights.find(t.name); it != g.weights.end()) {
            const Tensor& expect = it->second.tensor;
            if (t.tensor.shape() != expect.shape())
                throw FormatError("tensor '" + t.name + "' has shape " + t.tensor.shape().str() + ", expected " +
                                  expect.shape().str());
            if (t.quant && t.tensor.dtype() != t.quant->dtype)
                throw FormatError("tensor '" + t.name + "' dtype does not match its quantization");
            it->second = {t.tensor, t.quant};
            seen[t.name] = true;
        } else if (ends_with(t.name, kAct)) {
            const std::string node = t.name.substr(0, t.name.size() - kAct.size());
            int idx = -1;
            for (std::size_t i = 0; i < g.nodes.size(); ++i)
                if (g.nodes[i].name == node)
                    idx = static_cast<int>(i);
            if (idx < 0 || !t.quant)
                throw FormatError("unknown tensor '" + t.name + "'");
            g.nodes[static_cast<std::size_t>(idx)].out_params = t.quant;
        } else {
            throw FormatError("unknown tensor '" + t.name + "'");
        }
    }
    for (const auto& [name, w] : g.weights)
        if (!seen.contains(name))
            throw FormatError("missing tensor '" + name + "'");
    for (const Node& n : g.nodes)
        if (n.mode == ExecMode::integer && !n.out_params)
            throw FormatError("missing tensor '" + n.name + kAct + "'");
    if (has_calib)
        g.calibration = std::move(calib);
    return g;
}

} // namespace mqn
