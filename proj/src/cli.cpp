#include "mqn/cli.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "mqn/codecs.hpp"
#include "mqn/graph.hpp"
#include "mqn/io.hpp"
#include "mqn/metrics.hpp"
#include "mqn/random.hpp"
#include "mqn/tmo.hpp"
#include "mqn/weights_io.hpp"

namespace fs = std::filesystem;

namespace mqn {

namespace {

/// Bad flag combinations detected after parsing (exit code 2).
class UsageError : public Error {
public:
    using Error::Error;
};

/// Runs `f`, prefixing any format error with the file it concerns.
template <class F> auto on_file(const fs::path& path, F&& f)
{
    try {
        return f();
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

HdrImage load_hdr(const fs::path& p)
{
    auto bytes = read_file(p);
    return on_file(p, [&] { return read_rgbe(bytes); });
}

LdrImage load_png(const fs::path& p)
{
    auto bytes = read_file(p);
    return on_file(p, [&] { return read_png(bytes); });
}

ModelGraph load_model(const fs::path& p, const std::string& config)
{
    auto bytes = read_file(p);
    return on_file(p, [&] {
        if (config.empty())
            return load_weights(bytes);
        return load_weights(bytes, MqnConfig::load(config));
    });
}

/// Expands a file or directory argument into (input, output) path pairs.
std::vector<std::pair<fs::path, fs::path>> batch(const fs::path& in, const fs::path& out, const std::string& in_ext,
                                                 const std::string& out_ext)
{
    std::vector<std::pair<fs::path, fs::path>> jobs;
    if (fs::is_directory(in)) {
        fs::create_directories(out);
        for (const auto& f : list_files(in, in_ext))
            jobs.emplace_back(f, out / f.filename().replace_extension(out_ext));
    } else if (fs::is_directory(out)) {
        jobs.emplace_back(in, out / in.filename().replace_extension(out_ext));
    } else {
        jobs.emplace_back(in, out);
    }
    return jobs;
}

void print_resolved(const CLI::App& sub, const std::string& model_config)
{
    std::ostringstream os;
    os << "# " << sub.get_name() << "\n";
    std::istringstream opts(sub.config_to_str(true, false));
    for (std::string line; std::getline(opts, line);)
        if (!line.empty())
            os << "#   " << line << "\n";
    std::istringstream ex(model_config);
    for (std::string line; std::getline(ex, line);)
        os << "#   model." << line << "\n";
    std::cerr << os.str();
}

std::string fmt(double v)
{
    if (std::isinf(v))
        return v > 0 ? "inf" : "-inf";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

struct Options {
    std::string config;
    std::string weights, output, input, images, scheme, pred, gt, kind, params, tmo = "reinhard";
    std::uint64_t seed = 0;
    bool random = false, align = false;
    int height = 0, width = 0;
};

int cmd_init(const Options& o)
{
    ModelGraph g = build_mqn(MqnConfig::load(o.config.empty() ? "default" : o.config));
    init_weights(g, o.seed);
    write_file(o.output, save_weights(g));
    return 0;
}

int cmd_calibrate(const Options& o)
{
    ModelGraph g = load_model(o.weights, o.config);
    if (g.quantized())
        throw Error(o.weights + ": already quantized; calibrate the float model");
    std::vector<Tensor> inputs;
    for (const auto& f : list_files(o.images, ".png")) {
        const LdrImage img = load_png(f);
        const std::int64_t h = (img.height() + 31) / 32 * 32, w = (img.width() + 31) / 32 * 32;
        inputs.push_back(pad_reflect(to_tensor(img), h, w));
    }
    if (inputs.empty())
        throw Error(o.images + ": no .png images to calibrate on");
    g.calibration = calibrate_activations(g, inputs);
    write_file(o.output.empty() ? o.weights : o.output, save_weights(g));
    std::cerr << "calibrated on " << inputs.size() << " images, " << g.calibration->ranges.size() << " edges\n";
    return 0;
}

int cmd_quantize(const Options& o)
{
    const ModelGraph g = load_model(o.weights, o.config);
    const QuantScheme scheme = QuantScheme::parse(o.scheme);
    if (g.quantized())
        throw Error(o.weights + ": already quantized with scheme " + g.scheme.name());
    if (scheme.needs_calibration() && !g.calibration)
        throw Error(o.weights + ": no calibration record; run calibrate first");
    write_file(o.output, save_weights(quantize_model(g, scheme, g.calibration ? &*g.calibration : nullptr)));
    return 0;
}

int cmd_infer(const Options& o)
{
    ModelGraph g = load_model(o.weights, o.config);
    if (g.quantized()) {
        if (!o.scheme.empty() && QuantScheme::parse(o.scheme) != g.scheme)
            throw Error(o.weights + ": quantized with scheme " + g.scheme.name() + ", not " + o.scheme);
    } else if (!o.scheme.empty() && o.scheme != "float32") {
        const QuantScheme scheme = QuantScheme::parse(o.scheme);
        if (scheme.needs_calibration() && !g.calibration)
            throw Error(o.weights + ": no calibration record; run calibrate first");
        g = quantize_model(g, scheme, g.calibration ? &*g.calibration : nullptr);
    }
    for (const auto& [in, out] : batch(o.input, o.output, ".png", ".hdr"))
        write_file(out, write_rgbe(infer_image(g, load_png(in))));
    return 0;
}

Tensor display(const HdrImage& img, const std::string& tmo)
{
    if (tmo == "none") {
        Tensor t = to_tensor(img);
        for (float& v : t.data<float>())
            v = std::min(v, 1.0f);
        return t;
    }
    TmoParams p;
    p.kind = parse_tmo(tmo);
    return to_tensor(tone_map(img, p));
}

int cmd_eval(const Options& o)
{
    std::vector<std::pair<fs::path, fs::path>> pairs;
    if (fs::is_directory(o.gt)) {
        if (!fs::is_directory(o.pred))
            throw UsageError("--pred must be a directory when --gt is");
        for (const auto& g : list_files(o.gt, ".hdr")) {
            const fs::path p = fs::path(o.pred) / g.filename();
            if (!fs::exists(p))
                throw Error(p.string() + ": missing prediction for " + g.filename().string());
            pairs.emplace_back(p, g);
        }
        if (pairs.empty())
            throw Error(o.gt + ": no .hdr images");
    } else {
        pairs.emplace_back(o.pred, o.gt);
    }

    const FeatureExtractor fx = toy_extractor();
    const LossWeights lw;
    std::cout << "image,psnr,ssim,l1,l2,cosine,fr,combined\n";
    std::vector<double> sums(7, 0.0);
    for (const auto& [pp, gp] : pairs) {
        HdrImage pred = load_hdr(pp);
        const HdrImage gt = load_hdr(gp);
        if (pred.width() != gt.width() || pred.height() != gt.height())
            throw Error(pp.string() + ": size differs from " + gp.string());
        if (o.align) {
            auto a = percentile_align(pred, gt);
            if (a.degenerate)
                std::cerr << "warning: " << pp.string() << ": degenerate percentiles, alignment skipped\n";
            pred = std::move(a.image);
        }
        const Tensor tp = to_tensor(pred), tg = to_tensor(gt);
        const Tensor dp = display(pred, o.tmo), dg = display(gt, o.tmo);
        const double row[7] = {psnr(dg, dp),    ssim(dg, dp),        l1_loss(tg, tp),    l2_loss(tg, tp),
                               cosine_loss(tg, tp), fr_loss(tg, tp, fx), combined_loss(tg, tp, fx, lw)};
        std::cout << gp.filename().string();
        for (std::size_t i = 0; i < 7; ++i) {
            std::cout << ',' << fmt(row[i]);
            sums[i] += row[i];
        }
        std::cout << '\n';
    }
    std::cout << "mean";
    for (double s : sums)
        std::cout << ',' << fmt(s / static_cast<double>(pairs.size()));
    std::cout << '\n';
    return 0;
}

int cmd_tmo(const Options& o)
{
    TmoParams fixed;
    if (!o.random) {
        if (!o.params.empty())
            fixed = TmoParams::parse(o.params);
        if (!o.kind.empty())
            fixed.kind = parse_tmo(o.kind);
    }
    const auto jobs = batch(o.input, o.output, ".hdr", ".png");
    for (std::size_t i = 0; i < jobs.size(); ++i) {
        const auto& [in, out] = jobs[i];
        const TmoParams p = o.random ? random_tmo_params(mix_seed(o.seed, i)) : fixed;
        const TmoResult r = tmo_apply(load_hdr(in), p);
        if (r.all_zero)
            std::cerr << "warning: " << in.string() << ": all-zero image, output is black\n";
        write_file(out, write_png(r.image));
        fs::path sidecar = out;
        write_text(sidecar.replace_extension(".tmo"), p.to_text());
    }
    return 0;
}

int cmd_inspect(const Options& o)
{
    const ModelGraph g = o.weights.empty() ? build_mqn(MqnConfig::load(o.config.empty() ? "default" : o.config))
                                           : load_model(o.weights, o.config);
    const std::int64_t h = o.height ? o.height : g.config.input_height;
    const std::int64_t w = o.width ? o.width : g.config.input_width;
    if (h % 32 || w % 32 || h <= 0 || w <= 0)
        throw UsageError("--height and --width must be positive multiples of 32");
    const ModelCounts counts = count_params_macs(g, h, w);
    auto mode = [](ExecMode m) { return m == ExecMode::integer ? "int" : m == ExecMode::dynamic ? "dynamic" : "f32"; };

    std::printf("%-28s %-13s %-9s %-7s %-12s %9s %11s  %s\n", "layer", "kind", "partition", "mode", "output", "params",
                "MACs", "dtypes");
    for (std::size_t i = 0; i < g.nodes.size(); ++i) {
        const Node& n = g.nodes[i];
        const NodeCount& c = counts.nodes[i];
        std::string dt = "-";
        if (n.kind == NodeKind::conv)
            dt = std::string("w:") + dtype_name(g.weight(n.weight_name()).dtype()) + " b:" +
                 dtype_name(g.weight(n.bias_name()).dtype());
        else if (n.kind == NodeKind::instance_norm)
            dt = "affine:f32";
        if (n.out_params)
            dt += std::string(" act:") + dtype_name(n.out_params->dtype);
        const std::string shape =
            std::to_string(c.output.h) + "x" + std::to_string(c.output.w) + "x" + std::to_string(c.output.c);
        std::printf("%-28s %-13s %-9s %-7s %-12s %9lld %11lld  %s\n", n.name.c_str(), node_kind_name(n.kind),
                    n.partition == Partition::backbone ? "backbone" : "head", mode(n.mode), shape.c_str(),
                    static_cast<long long>(c.params), static_cast<long long>(c.macs), dt.c_str());
        if (static_cast<int>(i) == g.boundary)
            std::printf("---------------- partition boundary: backbone above, head below ----------------\n");
    }
    const Node& b = g.nodes[static_cast<std::size_t>(g.boundary)];
    const Shape& bs = counts.nodes[static_cast<std::size_t>(g.boundary)].output;
    std::printf("scheme: %s\n", g.scheme.name().c_str());
    std::printf("boundary: %s %lldx%lldx%lld\n", b.name.c_str(), static_cast<long long>(bs.h),
                static_cast<long long>(bs.w), static_cast<long long>(bs.c));
    std::printf("input: %lldx%lld\n", static_cast<long long>(h), static_cast<long long>(w));
    std::printf("total params: %lld\n", static_cast<long long>(counts.params));
    std::printf("total MACs: %lld\n", static_cast<long long>(counts.macs));
    return 0;
}

} // namespace

int dispatch(int argc, const char* const* argv)
{
    CLI::App app{"Mixed-quantization inverse tone mapping toolkit", "mqn"};
    app.require_subcommand(1);
    app.option_defaults()->always_capture_default();
    Options o;

    const std::vector<std::string> schemes{"float32", "mixed", "full_int8", "dynamic", "int16"};
    auto* init = app.add_subcommand("init-weights", "Write a seeded random-initialized weights file");
    init->add_option("--seed", o.seed, "RNG seed")->required();
    init->add_option("--config", o.config, "Config file or 'default'");
    init->add_option("--output,-o", o.output, "Output .mqnw")->required();

    auto* calib = app.add_subcommand("calibrate", "Record activation ranges over a PNG directory");
    calib->add_option("--weights", o.weights, "Float weights file")->required();
    calib->add_option("--images", o.images, "Directory of .png calibration images")
        ->required();
    calib->add_option("--output,-o", o.output, "Output .mqnw (default: update --weights)");
    calib->add_option("--config", o.config, "Config file or 'default' (default: stored in the weights)");

    auto* quant = app.add_subcommand("quantize", "Write a quantized weights file");
    quant->add_option("--weights", o.weights, "Calibrated float weights")->required();
    quant->add_option("--scheme", o.scheme, "Quantization scheme")->required()->check(CLI::IsMember(schemes));
    quant->add_option("--output,-o", o.output, "Output .mqnw")->required();
    quant->add_option("--config", o.config, "Config file or 'default'");

    auto* infer = app.add_subcommand("infer", "Predict HDR (.hdr) from LDR (.png) images");
    infer->add_option("--weights", o.weights, "Weights file")->required();
    infer->add_option("--input,-i", o.input, "PNG file or directory")->required();
    infer->add_option("--output,-o", o.output, "HDR file or directory")->required();
    infer->add_option("--scheme", o.scheme, "Quantize a float model on load")->check(CLI::IsMember(schemes));
    infer->add_option("--config", o.config, "Config file or 'default'");

    auto* eval = app.add_subcommand("eval", "Metrics CSV between predicted and ground-truth .hdr images");
    eval->add_option("--pred", o.pred, "Prediction file or directory")->required();
    eval->add_option("--gt", o.gt, "Ground-truth file or directory")->required();
    eval->add_flag("--align", o.align, "Align 1st/99th luminance percentiles of predictions first");
    eval->add_option("--tmo", o.tmo, "Tone mapping before PSNR/SSIM")
        ->check(CLI::IsMember({"reinhard", "drago", "exposure", "none"}));

    auto* tmo = app.add_subcommand("tmo", "Tone-map .hdr images to 8-bit PNG");
    tmo->add_option("--input,-i", o.input, "HDR file or directory")->required();
    tmo->add_option("--output,-o", o.output, "PNG file or directory")->required();
    auto* kind = tmo->add_option("--kind", o.kind, "Operator")->check(CLI::IsMember({"drago", "reinhard", "exposure"}));
    auto* params = tmo->add_option("--params", o.params, "key=value list, e.g. bias=0.85,gamma=2.2");
    auto* random = tmo->add_flag("--random", o.random, "Random operator and parameters");
    tmo->add_option("--seed", o.seed, "Seed for --random");
    random->excludes(kind)->excludes(params);

    auto* inspect = app.add_subcommand("inspect", "Per-layer parameters, MACs, dtypes and partition");
    inspect->add_option("--config", o.config, "Config file or 'default'");
    inspect->add_option("--weights", o.weights, "Weights file (shows stored dtypes)");
    inspect->add_option("--height", o.height, "Input height (default from config)");
    inspect->add_option("--width", o.width, "Input width (default from config)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    }

    try {
        CLI::App* sub = app.get_subcommands().front();
        std::string cfg;
        if (!o.config.empty())
            cfg = MqnConfig::load(o.config).to_text();
        else if (!o.weights.empty())
            cfg = load_model(o.weights, "").config.to_text();
        else if (sub == init || sub == inspect)
            cfg = MqnConfig{}.to_text();
        print_resolved(*sub, cfg);
        if (sub == init)
            return cmd_init(o);
        if (sub == calib)
            return cmd_calibrate(o);
        if (sub == quant)
            return cmd_quantize(o);
        if (sub == infer)
            return cmd_infer(o);
        if (sub == eval)
            return cmd_eval(o);
        if (sub == tmo)
            return cmd_tmo(o);
        return cmd_inspect(o);
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

} // namespace mqn
