#include <doctest.h>

#include <cmath>
#include <limits>

#include "mqn/metrics.hpp"
#include "oracles.hpp"

using namespace mqn;
using oracle::Gen;

namespace {

Tensor constant(Shape s, float v)
{
    return Tensor::filled(s, v);
}

Tensor noisy(const Tensor& x, Gen& g, double amp)
{
    Tensor y = x;
    for (float& v : y.data<float>())
        v += static_cast<float>(g.val(-amp, amp));
    return y;
}

} // namespace

TEST_CASE("loss examples")
{
    const Tensor a({1, 1, 2, 2}, std::vector<float>{0, 1, 2, 3});
    const Tensor b({1, 1, 2, 2}, std::vector<float>{1, 1, 2, 5});
    CHECK(l1_loss(a, b) == doctest::Approx(0.75).epsilon(1e-7));
    CHECK(l2_loss(a, b) == doctest::Approx(std::sqrt(5.0 / 4.0)).epsilon(1e-7));
    CHECK(l1_loss(a, a) == 0.0f);
    CHECK(l2_loss(a, a) == 0.0f);
    CHECK(cosine_loss(a, a) == doctest::Approx(0.0).epsilon(1e-7));
    CHECK_THROWS_AS(l1_loss(a, constant({1, 1, 1, 4}, 0)), ShapeError);
}

TEST_CASE("losses agree with extended-precision references")
{
    Gen g(61);
    for (int i = 0; i < 100; ++i) {
        const Shape s{1, g.dim(1, 9), g.dim(1, 9), g.dim(1, 4)};
        const Tensor a = g.tensor(s, -2, 2), b = g.tensor(s, -2, 2);
        REQUIRE(std::fabs(l1_loss(a, b) - oracle::l1_ld(a, b)) <= 1e-6);
        REQUIRE(std::fabs(l2_loss(a, b) - oracle::l2_ld(a, b)) <= 1e-6);
        REQUIRE(std::fabs(cosine_loss(a, b) - oracle::cosine_ld(a, b)) <= 1e-6);
        REQUIRE(l1_loss(a, b) >= 0.0f);
        REQUIRE(l2_loss(a, b) >= 0.0f);
        REQUIRE(cosine_loss(a, b) >= -1e-7f);
        REQUIRE(cosine_loss(a, b) <= 2.0f + 1e-6f);
    }
}

TEST_CASE("cosine loss")
{
    Gen g(62);
    const Tensor a = g.tensor({1, 4, 4, 3}, 0.1, 2);
    Tensor scaled = a;
    for (float& v : scaled.data<float>())
        v *= 7.0f;
    CHECK(cosine_loss(a, scaled) == doctest::Approx(0.0).epsilon(1e-6));

    const Tensor x({1, 1, 1, 2}, std::vector<float>{1, 0});
    const Tensor y({1, 1, 1, 2}, std::vector<float>{0, 3});
    CHECK(cosine_loss(x, y) == doctest::Approx(1.0).epsilon(1e-7));

    // A zero-norm pixel counts as perfectly similar.
    const Tensor z = constant({1, 1, 1, 2}, 0.0f);
    CHECK(cosine_loss(z, y) == 0.0f);
}

TEST_CASE("feature loss")
{
    Gen g(63);
    const Tensor a = g.tensor({1, 32, 32, 3}, 0, 1), b = g.tensor({1, 32, 32, 3}, 0, 1);
    const FeatureExtractor identity = [](const Tensor& x) { return std::vector<Tensor>{x}; };
    CHECK(fr_loss(a, b, identity) == l1_loss(a, b));

    const FeatureExtractor fx = toy_extractor(5);
    CHECK(fr_loss(a, a, fx) == 0.0f);
    const auto fa = fx(a), fb = fx(b);
    REQUIRE(fa.size() == 3);
    CHECK(fa[0].shape() == Shape{1, 16, 16, 8});
    CHECK(fa[1].shape() == Shape{1, 8, 8, 16});
    CHECK(fa[2].shape() == Shape{1, 4, 4, 16});
    double expect = 0;
    for (std::size_t i = 0; i < 3; ++i)
        expect += oracle::l1_ld(fa[i], fb[i]);
    CHECK(std::fabs(fr_loss(a, b, fx) - expect) <= 1e-5);
    // Same seed, same extractor.
    CHECK(toy_extractor(5)(a)[2] == fa[2]);
}

TEST_CASE("combined loss")
{
    Gen g(64);
    const FeatureExtractor fx = toy_extractor(1);
    const Tensor a = g.tensor({1, 24, 24, 3}, 0, 1), b = g.tensor({1, 24, 24, 3}, 0, 1);
    CHECK(combined_loss(a, a, fx) == doctest::Approx(0.0).epsilon(1e-7));
    CHECK(combined_loss(a, b, fx, {1, 0, 0, 0}) == l1_loss(a, b));

    const double l1 = oracle::l1_ld(a, b), l2 = oracle::l2_ld(a, b), cs = oracle::cosine_ld(a, b);
    const double fr = fr_loss(a, b, fx);
    CHECK(std::fabs(combined_loss(a, b, fx) - (l1 + l2 + 0.1 * cs + 0.05 * fr)) <= 1e-6);

    const LossWeights w1{0.3f, 0.7f, 0.2f, 0.1f}, w2{0.5f, 0.25f, 1.0f, 0.4f};
    const LossWeights sum{w1.l1 + w2.l1, w1.l2 + w2.l2, w1.cosine + w2.cosine, w1.fr + w2.fr};
    CHECK(std::fabs(combined_loss(a, b, fx, sum) - (combined_loss(a, b, fx, w1) + combined_loss(a, b, fx, w2))) <=
          1e-5);
}

TEST_CASE("psnr")
{
    Gen g(65);
    const Tensor a = g.tensor({1, 8, 8, 3}, 0, 1);
    CHECK(psnr(a, a) == std::numeric_limits<double>::infinity());

    const Tensor z = constant({1, 4, 4, 1}, 0.0f), p = constant({1, 4, 4, 1}, 0.1f);
    CHECK(psnr(z, p) == doctest::Approx(20.0).epsilon(1e-6));
    CHECK(psnr(z, p, 2.0) == doctest::Approx(20.0 + 20.0 * std::log10(2.0)).epsilon(1e-6));

    for (int i = 0; i < 100; ++i) {
        const Tensor b = noisy(a, g, g.val(1e-3, 0.3));
        REQUIRE(std::fabs(psnr(a, b) - oracle::psnr_ld(a, b)) <= 1e-6);
    }

    // More noise, lower PSNR.
    double prev = std::numeric_limits<double>::infinity();
    for (double amp : {0.001, 0.01, 0.05, 0.1, 0.3}) {
        Gen same(66);
        Tensor b = a;
        auto v = b.data<float>();
        for (float& x : v)
            x += static_cast<float>(amp * same.val(-1, 1));
        const double q = psnr(a, b);
        CHECK(q < prev);
        prev = q;
    }
}

TEST_CASE("ssim")
{
    Gen g(67);
    const Tensor a = oracle::random_ldr_tensor(24, 20, 3);
    CHECK(ssim(a, a) == doctest::Approx(1.0).epsilon(1e-12));

    // Constant images: variance terms cancel and only the luminance term remains.
    const double u = 0.2, w = 0.7;
    const double closed = (2 * u * w + 1e-4) / (u * u + w * w + 1e-4);
    CHECK(ssim(constant({1, 16, 16, 2}, 0.2f), constant({1, 16, 16, 2}, 0.7f)) ==
          doctest::Approx(closed).epsilon(1e-6));

    for (int i = 0; i < 20; ++i) {
        const Tensor x = g.tensor({1, g.dim(11, 24), g.dim(11, 24), g.dim(1, 3)}, 0, 1);
        const Tensor y = noisy(x, g, g.val(0.01, 0.5));
        const double s = ssim(x, y);
        REQUIRE(std::fabs(s - oracle::ssim_ld(x, y)) <= 1e-4);
        REQUIRE(s == doctest::Approx(ssim(y, x)).epsilon(1e-12));
        REQUIRE(s <= 1.0 + 1e-12);
        REQUIRE(s >= -1.0 - 1e-12);
    }

    // Smaller than the window: one uniform window over the whole plane.
    const Tensor x = g.tensor({1, 5, 7, 1}, 0, 1), y = g.tensor({1, 5, 7, 1}, 0, 1);
    long double mx = 0, my = 0;
    for (std::int64_t i = 0; i < 35; ++i)
        mx += x.data<float>()[static_cast<std::size_t>(i)], my += y.data<float>()[static_cast<std::size_t>(i)];
    mx /= 35, my /= 35;
    long double vx = 0, vy = 0, cxy = 0;
    for (std::size_t i = 0; i < 35; ++i) {
        const long double p = x.data<float>()[i] - mx, q = y.data<float>()[i] - my;
        vx += p * p, vy += q * q, cxy += p * q;
    }
    vx /= 35, vy /= 35, cxy /= 35;
    const long double expect =
        ((2 * mx * my + 1e-4L) * (2 * cxy + 9e-4L)) / ((mx * mx + my * my + 1e-4L) * (vx + vy + 9e-4L));
    CHECK(ssim(x, y) == doctest::Approx(static_cast<double>(expect)).epsilon(1e-9));
}

TEST_CASE("nearest rank percentile")
{
    const std::vector<double> v{5, 1, 4, 2, 3};
    CHECK(nearest_rank(v, 0.01) == 1);
    CHECK(nearest_rank(v, 0.2) == 1);
    CHECK(nearest_rank(v, 0.21) == 2);
    CHECK(nearest_rank(v, 0.99) == 5);
    CHECK(nearest_rank(v, 1.0) == 5);
    CHECK_THROWS_AS(nearest_rank({}, 0.5), ShapeError);
}

TEST_CASE("percentile alignment")
{
    const HdrImage gt = oracle::synthetic_hdr(40, 30, 8);
    const Alignment same = percentile_align(gt, gt);
    CHECK(same.a == 1.0);
    CHECK(same.b == 0.0);
    CHECK(same.image == gt);

    std::vector<float> twice(gt.pixels().begin(), gt.pixels().end());
    for (float& v : twice)
        v *= 2.0f;
    const Alignment half = percentile_align(HdrImage(40, 30, twice), gt);
    CHECK(half.a == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(std::fabs(half.b) <= 1e-9);
    CHECK_FALSE(half.degenerate);

    // A positive affine distortion is undone up to float rounding.
    std::vector<float> warped(gt.pixels().begin(), gt.pixels().end());
    for (float& v : warped)
        v = 3.0f * v + 0.1f;
    const Alignment back = percentile_align(HdrImage(40, 30, warped), gt);
    auto out = back.image.pixels(), ref = gt.pixels();
    for (std::size_t i = 0; i < out.size(); ++i)
        REQUIRE(std::fabs(out[i] - ref[i]) <= 1e-5 * (1.0 + ref[i]));

    const Alignment flat = percentile_align(HdrImage(4, 4, std::vector<float>(48, 0.3f)), gt);
    CHECK(flat.degenerate);
    CHECK(flat.a == 1.0);
    CHECK(flat.b == 0.0);

    // Negative results clamp at zero.
    const Alignment shifted = percentile_align(gt, HdrImage(40, 30, warped));
    for (float v : shifted.image.pixels())
        REQUIRE(v >= 0.0f);
}
