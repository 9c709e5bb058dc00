#include "mqn/tmo.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "mqn/error.hpp"
#include "mqn/metrics.hpp"
#include "mqn/random.hpp"

namespace mqn {

const char* tmo_name(TmoKind k)
{
    switch (k) {
    case TmoKind::drago: return "drago";
    case TmoKind::reinhard: return "reinhard";
    case TmoKind::exposure: return "exposure";
    }
    return "?";
}

TmoKind parse_tmo(const std::string& s)
{
    for (TmoKind k : {TmoKind::drago, TmoKind::reinhard, TmoKind::exposure})
        if (s == tmo_name(k))
            return k;
    throw Error("unknown tone mapping operator '" + s + "'");
}

void TmoParams::validate() const
{
    if (!(bias > 0.0 && bias <= 1.0))
        throw Error("tmo: drago bias must be in (0, 1]");
    if (!(key > 0.0))
        throw Error("tmo: reinhard key must be positive");
    if (!(gamma > 0.0))
        throw Error("tmo: gamma must be positive");
    if (!std::isfinite(exposure))
        throw Error("tmo: exposure must be finite");
}

std::string TmoParams::to_text() const
{
    char buf[256];
    std::snprintf(buf, sizeof buf, "kind=%s\nbias=%.17g\nkey=%.17g\nexposure=%.17g\ngamma=%.17g\n", tmo_name(kind), bias,
                  key, exposure, gamma);
    return buf;
}

TmoParams TmoParams::parse(const std::string& text)
{
    TmoParams p;
    std::string norm = text;
    std::replace(norm.begin(), norm.end(), ',', '\n');
    std::istringstream in(norm);
    std::string line;
    while (std::getline(in, line)) {
        line.erase(0, line.find_first_not_of(" \t\r"));
        line.erase(line.find_last_not_of(" \t\r") + 1);
        if (line.empty() || line[0] == '#')
            continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw Error("tmo params: expected key=value, got '" + line + "'");
        const std::string k = line.substr(0, eq), v = line.substr(eq + 1);
        try {
            if (k == "kind")
                p.kind = parse_tmo(v);
            else if (k == "bias")
                p.bias = std::stod(v);
            else if (k == "key")
                p.key = std::stod(v);
            else if (k == "exposure")
                p.exposure = std::stod(v);
            else if (k == "gamma")
                p.gamma = std::stod(v);
            else
                throw Error("tmo params: unknown key '" + k + "'");
        } catch (const std::logic_error&) {
            throw Error("tmo params: bad number for '" + k + "'");
        }
    }
    p.validate();
    return p;
}

HdrImage tone_map(const HdrImage& h, const TmoParams& p, bool* all_zero)
{
    p.validate();
    auto px = h.pixels();
    std::vector<float> out(px.size(), 0.0f);
    const std::size_t n = px.size() / 3;

    double lmax = 0.0, log_sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double l = luminance(px[3 * i], px[3 * i + 1], px[3 * i + 2]);
        lmax = std::max(lmax, l);
        log_sum += std::log(kReinhardDelta + l);
    }
    bool zero = true;
    for (float v : px)
        zero = zero && v == 0.0f;
    if (all_zero)
        *all_zero = zero;
    if (zero || n == 0)
        return HdrImage(h.width(), h.height(), std::move(out));

    auto clamp01 = [](double v) { return static_cast<float>(std::clamp(v, 0.0, 1.0)); };
    if (p.kind == TmoKind::exposure) {
        const double gain = std::exp2(p.exposure);
        for (std::size_t i = 0; i < px.size(); ++i)
            out[i] = clamp01(std::pow(px[i] * gain, 1.0 / p.gamma));
        return HdrImage(h.width(), h.height(), std::move(out));
    }

    const double log_avg = std::exp(log_sum / static_cast<double>(n));
    const double drago_scale = 0.01 * kDragoMaxDisplay / std::log10(lmax + 1.0);
    const double drago_exp = std::log(p.bias) / std::log(0.5);
    for (std::size_t i = 0; i < n; ++i) {
        const double l = luminance(px[3 * i], px[3 * i + 1], px[3 * i + 2]);
        if (!(l > 0.0))
            continue;
        double ld = 0.0;
        if (p.kind == TmoKind::drago) {
            ld = drago_scale * std::log(l + 1.0) / std::log(2.0 + 8.0 * std::pow(l / lmax, drago_exp));
        } else {
            const double lm = p.key * l / log_avg;
            ld = lm / (1.0 + lm);
        }
        for (std::size_t k = 0; k < 3; ++k)
            out[3 * i + k] = clamp01(px[3 * i + k] * ld / l);
    }
    return HdrImage(h.width(), h.height(), std::move(out));
}

TmoResult tmo_apply(const HdrImage& h, const TmoParams& p)
{
    TmoResult r;
    const HdrImage d = tone_map(h, p, &r.all_zero);
    std::vector<std::uint8_t> rgb(d.pixels().size());
    for (std::size_t i = 0; i < rgb.size(); ++i)
        rgb[i] = static_cast<std::uint8_t>(std::round(255.0 * d.pixels()[i]));
    r.image = LdrImage(h.width(), h.height(), std::move(rgb));
    return r;
}

TmoParams random_tmo_params(std::uint64_t seed)
{
    Rng rng(seed);
    TmoParams p;
    p.kind = static_cast<TmoKind>(rng.below(3));
    switch (p.kind) {
    case TmoKind::drago: p.bias = rng.uniform(0.7, 0.95); break;
    case TmoKind::reinhard: p.key = rng.uniform(0.09, 0.36); break;
    case TmoKind::exposure:
        p.exposure = rng.uniform(-2.0, 2.0);
        p.gamma = rng.uniform(1.8, 2.4);
        break;
    }
    return p;
}

RandomTmo generate_ldr_random(const HdrImage& h, std::uint64_t seed)
{
    RandomTmo r;
    r.params = random_tmo_params(seed);
    r.image = tmo_apply(h, r.params).image;
    return r;
}

} // namespace mqn
