#include "mqn/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mqn/ops.hpp"
#include "mqn/random.hpp"

namespace mqn {

namespace {

void check_pair(const Tensor& h, const Tensor& pred)
{
    if (h.shape() != pred.shape())
        throw ShapeError("shape mismatch: " + h.shape().str() + " vs " + pred.shape().str());
    if (h.size() == 0)
        throw ShapeError("empty tensors");
}

double mse(const Tensor& h, const Tensor& pred)
{
    check_pair(h, pred);
    auto a = h.data<float>(), b = pred.data<float>();
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = static_cast<double>(a[i]) - b[i];
        s += d * d;
    }
    return s / static_cast<double>(a.size());
}

} // namespace

float l1_loss(const Tensor& h, const Tensor& pred)
{
    check_pair(h, pred);
    auto a = h.data<float>(), b = pred.data<float>();
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        s += std::abs(static_cast<double>(a[i]) - b[i]);
    return static_cast<float>(s / static_cast<double>(a.size()));
}

float l2_loss(const Tensor& h, const Tensor& pred)
{
    return static_cast<float>(std::sqrt(mse(h, pred)));
}

float cosine_loss(const Tensor& h, const Tensor& pred)
{
    check_pair(h, pred);
    auto a = h.data<float>(), b = pred.data<float>();
    const auto c = static_cast<std::size_t>(h.shape().c);
    const std::size_t pixels = a.size() / c;
    double sum = 0.0;
    for (std::size_t p = 0; p < pixels; ++p) {
        double dot = 0.0, na = 0.0, nb = 0.0;
        for (std::size_t k = p * c; k < (p + 1) * c; ++k) {
            dot += static_cast<double>(a[k]) * b[k];
            na += static_cast<double>(a[k]) * a[k];
            nb += static_cast<double>(b[k]) * b[k];
        }
        na = std::sqrt(na);
        nb = std::sqrt(nb);
        sum += (na < 1e-12 || nb < 1e-12) ? 1.0 : dot / (na * nb);
    }
    return static_cast<float>(1.0 - sum / static_cast<double>(pixels));
}

float fr_loss(const Tensor& h, const Tensor& pred, const FeatureExtractor& fx)
{
    check_pair(h, pred);
    const auto fa = fx(h);
    const auto fb = fx(pred);
    if (fa.size() != fb.size())
        throw ShapeError("feature extractor returned different stage counts");
    double total = 0.0;
    for (std::size_t i = 0; i < fa.size(); ++i)
        total += l1_loss(fa[i], fb[i]);
    return static_cast<float>(total);
}

FeatureExtractor toy_extractor(std::uint64_t seed)
{
    struct Stage {
        Tensor w;
        std::vector<float> b;
    };
    Rng rng(seed);
    std::vector<Stage> stages;
    std::int64_t cin = 3;
    for (std::int64_t cout : {8, 16, 16}) {
        Stage s{Tensor({3, 3, cin, cout}, DType::f32), std::vector<float>(static_cast<std::size_t>(cout))};
        const double bound = std::sqrt(6.0 / static_cast<double>(9 * cin));
        for (float& v : s.w.data<float>())
            v = static_cast<float>(rng.uniform(-bound, bound));
        for (float& v : s.b)
            v = static_cast<float>(rng.uniform(-0.05, 0.05));
        stages.push_back(std::move(s));
        cin = cout;
    }
    return [stages = std::move(stages)](const Tensor& x) {
        std::vector<Tensor> out;
        Tensor cur = x;
        for (const auto& s : stages) {
            cur = activation(conv2d(cur, s.w, s.b, ConvSpec::square(3, 2)), Activation::relu);
            out.push_back(cur);
        }
        return out;
    };
}

float combined_loss(const Tensor& h, const Tensor& pred, const FeatureExtractor& fx, const LossWeights& w)
{
    double total = static_cast<double>(w.l1) * l1_loss(h, pred) + static_cast<double>(w.l2) * l2_loss(h, pred) +
                   static_cast<double>(w.cosine) * cosine_loss(h, pred);
    if (w.fr != 0.0f)
        total += static_cast<double>(w.fr) * fr_loss(h, pred, fx);
    return static_cast<float>(total);
}

double psnr(const Tensor& h, const Tensor& pred, double peak)
{
    const double m = mse(h, pred);
    if (m == 0.0)
        return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(peak * peak / m);
}

namespace {

constexpr int kWindow = 11;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

double ssim_from_moments(double mx, double my, double sxx, double syy, double sxy)
{
    return ((2 * mx * my + kC1) * (2 * sxy + kC2)) / ((mx * mx + my * my + kC1) * (sxx + syy + kC2));
}

/// Mean SSIM of one channel plane (row-major h x w).
double ssim_plane(const std::vector<double>& x, const std::vector<double>& y, std::int64_t h, std::int64_t w)
{
    if (h < kWindow || w < kWindow) {
        const double n = static_cast<double>(x.size());
        double mx = 0, my = 0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            mx += x[i];
            my += y[i];
        }
        mx /= n;
        my /= n;
        double sxx = 0, syy = 0, sxy = 0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            sxx += (x[i] - mx) * (x[i] - mx);
            syy += (y[i] - my) * (y[i] - my);
            sxy += (x[i] - mx) * (y[i] - my);
        }
        return ssim_from_moments(mx, my, sxx / n, syy / n, sxy / n);
    }

    double g[kWindow];
    double gs = 0;
    for (int i = 0; i < kWindow; ++i) {
        const double d = i - kWindow / 2;
        g[i] = std::exp(-d * d / (2 * 1.5 * 1.5));
        gs += g[i];
    }
    for (double& v : g)
        v /= gs;

    const std::int64_t oh = h - kWindow + 1, ow = w - kWindow + 1;
    // Horizontal pass over the five moment planes, then vertical.
    auto blur = [&](auto&& value) {
        std::vector<double> tmp(static_cast<std::size_t>(h * ow)), out(static_cast<std::size_t>(oh * ow));
        for (std::int64_t r = 0; r < h; ++r)
            for (std::int64_t c = 0; c < ow; ++c) {
                double s = 0;
                for (int k = 0; k < kWindow; ++k)
                    s += g[k] * value(static_cast<std::size_t>(r * w + c + k));
                tmp[static_cast<std::size_t>(r * ow + c)] = s;
            }
        for (std::int64_t r = 0; r < oh; ++r)
            for (std::int64_t c = 0; c < ow; ++c) {
                double s = 0;
                for (int k = 0; k < kWindow; ++k)
                    s += g[k] * tmp[static_cast<std::size_t>((r + k) * ow + c)];
                out[static_cast<std::size_t>(r * ow + c)] = s;
            }
        return out;
    };
    const auto mx = blur([&](std::size_t i) { return x[i]; });
    const auto my = blur([&](std::size_t i) { return y[i]; });
    const auto xx = blur([&](std::size_t i) { return x[i] * x[i]; });
    const auto yy = blur([&](std::size_t i) { return y[i] * y[i]; });
    const auto xy = blur([&](std::size_t i) { return x[i] * y[i]; });
    double total = 0;
    for (std::size_t i = 0; i < mx.size(); ++i)
        total += ssim_from_moments(mx[i], my[i], xx[i] - mx[i] * mx[i], yy[i] - my[i] * my[i], xy[i] - mx[i] * my[i]);
    return total / static_cast<double>(mx.size());
}

} // namespace

double ssim(const Tensor& h, const Tensor& pred)
{
    check_pair(h, pred);
    const Shape& s = h.shape();
    auto a = h.data<float>(), b = pred.data<float>();
    double total = 0;
    for (std::int64_t n = 0; n < s.n; ++n)
        for (std::int64_t c = 0; c < s.c; ++c) {
            std::vector<double> x(static_cast<std::size_t>(s.h * s.w)), y(x.size());
            for (std::int64_t p = 0; p < s.h * s.w; ++p) {
                const auto k = static_cast<std::size_t>((n * s.h * s.w + p) * s.c + c);
                x[static_cast<std::size_t>(p)] = a[k];
                y[static_cast<std::size_t>(p)] = b[k];
            }
            total += ssim_plane(x, y, s.h, s.w);
        }
    return total / static_cast<double>(s.n * s.c);
}

double nearest_rank(std::vector<double> values, double p)
{
    if (values.empty())
        throw ShapeError("percentile of an empty sample");
    const auto n = values.size();
    auto rank = static_cast<std::size_t>(std::ceil(p * static_cast<double>(n)));
    rank = std::clamp<std::size_t>(rank, 1, n);
    std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(rank - 1), values.end());
    return values[rank - 1];
}

Alignment percentile_align(const HdrImage& pred, const HdrImage& gt)
{
    if (pred.width() * pred.height() == 0 || gt.width() * gt.height() == 0)
        throw ShapeError("percentile_align on an empty image");
    auto lum = [](const HdrImage& img) {
        std::vector<double> l;
        auto px = img.pixels();
        for (std::size_t i = 0; i < px.size(); i += 3)
            l.push_back(luminance(px[i], px[i + 1], px[i + 2]));
        return l;
    };
    const auto lp = lum(pred), lg = lum(gt);
    const double p1 = nearest_rank(lp, 0.01), p99 = nearest_rank(lp, 0.99);
    const double g1 = nearest_rank(lg, 0.01), g99 = nearest_rank(lg, 0.99);

    Alignment out;
    if (p99 == p1) {
        out.degenerate = true;
    } else {
        out.a = (g99 - g1) / (p99 - p1);
        out.b = g1 - out.a * p1;
    }
    std::vector<float> rgb(pred.pixels().begin(), pred.pixels().end());
    for (float& v : rgb)
        v = static_cast<float>(std::max(0.0, out.a * v + out.b));
    out.image = HdrImage(pred.width(), pred.height(), std::move(rgb));
    return out;
}

} // namespace mqn
