#include <doctest.h>

#include <cmath>

#include "mqn/blocks.hpp"
#include "oracles.hpp"

using namespace mqn;
using oracle::Gen;

namespace {

ConvWeights conv_w(Gen& g, Shape s, double scale = 1.0)
{
    const std::int64_t cout = s.c == 1 && s.n == 3 && s.h == 3 ? s.w : s.c;
    ConvWeights w{g.tensor(s, -scale, scale), g.vec(static_cast<std::size_t>(cout), -scale, scale)};
    return w;
}

ConvWeights zero_w(Shape s, std::int64_t cout)
{
    return {Tensor(s, DType::f32), std::vector<float>(static_cast<std::size_t>(cout), 0.0f)};
}

IrlbWeights irlb_w(Gen& g, std::int64_t cin, const BlockConfig& cfg)
{
    const std::int64_t hidden = cin * cfg.expansion;
    IrlbWeights w;
    if (cfg.expansion != 1)
        w.expand = conv_w(g, {1, 1, cin, hidden});
    w.depthwise = conv_w(g, {3, 3, hidden, 1});
    w.project = conv_w(g, {1, 1, hidden, cfg.out_channels});
    return w;
}

} // namespace

TEST_CASE("irlb examples")
{
    Gen g(41);
    const Tensor x = g.tensor({1, 6, 5, 4});
    BlockConfig cfg{6, 1, 4};
    IrlbWeights zw{zero_w({1, 1, 4, 24}, 24), zero_w({3, 3, 24, 1}, 24), zero_w({1, 1, 24, 4}, 4)};
    CHECK(irlb(x, cfg, zw) == x);

    BlockConfig s2{6, 2, 8};
    const Tensor y = irlb(x, s2, irlb_w(g, 4, s2));
    CHECK(y.shape() == Shape{1, 3, 3, 8});
    CHECK_FALSE(has_shortcut(s2, 4));
    CHECK(has_shortcut(cfg, 4));
    CHECK_FALSE(has_shortcut(BlockConfig{6, 1, 5}, 4));

    CHECK(irlb_macs(BlockConfig{6, 1, 8}, 8, 16, 16) == 1 * 1 * 8 * 48 * 256 + 3 * 3 * 48 * 256 + 1 * 1 * 48 * 8 * 256);
    CHECK(irlb_macs(BlockConfig{1, 1, 8}, 8, 16, 16) == 3 * 3 * 8 * 256 + 8 * 8 * 256);
}

TEST_CASE("irlb matches the naive composition")
{
    Gen g(42);
    for (int i = 0; i < 150; ++i) {
        BlockConfig cfg;
        cfg.expansion = g.dim(1, 4);
        cfg.stride = g.dim(1, 2);
        const std::int64_t cin = g.dim(1, 4);
        cfg.out_channels = static_cast<int>(g.coin() ? cin : g.dim(1, 6));
        cfg.inner_activation = g.coin() ? Activation::relu6 : Activation::relu;
        const Tensor x = g.tensor({g.dim(1, 2), g.dim(1, 8), g.dim(1, 8), cin}, -3, 3);
        const IrlbWeights w = irlb_w(g, cin, cfg);
        REQUIRE(irlb(x, cfg, w) == oracle::irlb_naive(x, cfg, w));
    }
}

TEST_CASE("attention blocks with zero weights scale by one half per gate")
{
    Gen g(43);
    const Tensor x = g.tensor({2, 5, 4, 6}, -10, 10);
    const Tensor sa = sa_block(x, {zero_w({1, 1, 6, 1}, 1)});
    const Tensor csa = csa_block(x, {zero_w({1, 1, 6, 1}, 1), zero_w({3, 3, 6, 1}, 6)});
    const Tensor ca = ca_block(x, {zero_w({1, 1, 6, 1}, 1), zero_w({1, 1, 1, 6}, 6)}, 8);
    for (std::size_t i = 0; i < x.data<float>().size(); ++i) {
        const float v = x.data<float>()[i];
        CHECK(sa.data<float>()[i] == v * 0.5f);
        CHECK(csa.data<float>()[i] == v * 0.25f);
        CHECK(ca.data<float>()[i] == v * 0.5f);
    }
}

TEST_CASE("attention blocks are contractions and preserve shape")
{
    Gen g(44);
    for (int i = 0; i < 100; ++i) {
        const std::int64_t c = g.dim(1, 8);
        const Tensor x = g.tensor({1, g.dim(1, 8), g.dim(1, 8), c}, -50, 50);
        const double scale = g.val(0.1, 20);
        const int r = g.dim(1, 4);
        const CaMode mode = g.coin() ? CaMode::divide : CaMode::multiply;
        const std::int64_t hidden = ca_hidden_channels(c, r, mode);
        const Tensor outs[3] = {
            sa_block(x, {conv_w(g, {1, 1, c, 1}, scale)}),
            csa_block(x, {conv_w(g, {1, 1, c, 1}, scale), conv_w(g, {3, 3, c, 1}, scale)}),
            ca_block(x, {conv_w(g, {1, 1, c, hidden}, scale), conv_w(g, {1, 1, hidden, c}, scale)}, r, mode)};
        for (const Tensor& o : outs) {
            REQUIRE(o.shape() == x.shape());
            for (std::size_t j = 0; j < o.data<float>().size(); ++j)
                REQUIRE(std::fabs(o.data<float>()[j]) <= std::fabs(x.data<float>()[j]));
        }
    }
}

TEST_CASE("attention blocks match the naive composition")
{
    Gen g(45);
    for (int i = 0; i < 150; ++i) {
        const std::int64_t c = g.dim(1, 8);
        const Tensor x = g.tensor({g.dim(1, 2), g.dim(1, 8), g.dim(1, 8), c}, -4, 4);
        const SaWeights sa{conv_w(g, {1, 1, c, 1})};
        const CsaWeights csa{conv_w(g, {1, 1, c, 1}), conv_w(g, {3, 3, c, 1})};
        const int r = g.dim(1, 4);
        const std::int64_t hidden = ca_hidden_channels(c, r, CaMode::divide);
        const CaWeights ca{conv_w(g, {1, 1, c, hidden}), conv_w(g, {1, 1, hidden, c})};
        REQUIRE(sa_block(x, sa) == oracle::sa_naive(x, sa));
        REQUIRE(csa_block(x, csa) == oracle::csa_naive(x, csa));
        REQUIRE(ca_block(x, ca, r) == oracle::ca_naive(x, ca));
    }
}

TEST_CASE("CA on a constant-per-channel map gates like a one-pixel image")
{
    Gen g(46);
    const std::int64_t c = 8;
    Tensor x({1, 6, 7, c}, DType::f32), one({1, 1, 1, c}, DType::f32);
    for (std::int64_t k = 0; k < c; ++k) {
        const float v = g.val(-2, 2);
        one.at(0, 0, 0, k) = v;
        for (std::int64_t p = 0; p < 42; ++p)
            x.at(0, p / 7, p % 7, k) = v;
    }
    const CaWeights w{conv_w(g, {1, 1, c, 2}), conv_w(g, {1, 1, 2, c})};
    const Tensor big = ca_block(x, w, 4), small = ca_block(one, w, 4);
    for (std::int64_t k = 0; k < c; ++k)
        CHECK(big.at(0, 3, 4, k) == small.at(0, 0, 0, k));
}

TEST_CASE("CA hidden width")
{
    CHECK(ca_hidden_channels(16, 8, CaMode::divide) == 2);
    CHECK(ca_hidden_channels(4, 8, CaMode::divide) == 1);
    CHECK(ca_hidden_channels(16, 2, CaMode::multiply) == 32);
    CHECK_THROWS_AS(ca_hidden_channels(16, 0, CaMode::divide), ShapeError);
    CHECK(parse_attention("csa") == AttentionKind::csa);
    CHECK_THROWS(parse_attention("dense"));
}

TEST_CASE("conv_bn_relu")
{
    Gen g(47);
    const Tensor x = g.tensor({1, 4, 4, 3});
    const Tensor cut = conv_bn_relu(x, {Tensor({1, 1, 3, 2}, DType::f32), {-1.0f, -1.0f}});
    for (float v : cut.data<float>())
        CHECK(v == 0.0f);
    const Tensor pos = g.tensor({1, 4, 4, 3}, 0, 2);
    Tensor eye({1, 1, 3, 3}, DType::f32);
    for (std::int64_t k = 0; k < 3; ++k)
        eye.at(0, 0, k, k) = 1.0f;
    CHECK(conv_bn_relu(pos, {eye, {0, 0, 0}}) == pos);
    for (int i = 0; i < 50; ++i) {
        const ConvWeights w = conv_w(g, {1, 1, 3, 5});
        REQUIRE(conv_bn_relu(x, w) == oracle::map_naive(oracle::conv_naive(x, w.kernel, w.bias, 1), Activation::relu));
    }
}
