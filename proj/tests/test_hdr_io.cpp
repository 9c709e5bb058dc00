#include <doctest.h>

#include <cmath>
#include <cstring>

#include "mqn/codecs.hpp"
#include "mqn/metrics.hpp"
#include "mqn/tmo.hpp"
#include "oracles.hpp"

using namespace mqn;
using oracle::Gen;

namespace {

std::vector<std::uint8_t> bytes_of(const std::string& s)
{
    return {s.begin(), s.end()};
}

std::string error_of(auto&& fn)
{
    try {
        fn();
    } catch (const FormatError& e) {
        return e.what();
    }
    return "";
}

// PNG fixture writer: stored deflate blocks, bitwise CRC-32 and Adler-32.
std::uint32_t crc32_ref(const std::uint8_t* p, std::size_t n)
{
    std::uint32_t c = 0xffffffffu;
    for (std::size_t i = 0; i < n; ++i) {
        c ^= p[i];
        for (int k = 0; k < 8; ++k)
            c = (c >> 1) ^ (0xedb88320u & (0u - (c & 1u)));
    }
    return ~c;
}

void be32(std::vector<std::uint8_t>& out, std::uint32_t v)
{
    for (int s = 24; s >= 0; s -= 8)
        out.push_back(static_cast<std::uint8_t>(v >> s));
}

void chunk(std::vector<std::uint8_t>& out, const std::string& type, const std::vector<std::uint8_t>& data)
{
    be32(out, static_cast<std::uint32_t>(data.size()));
    std::vector<std::uint8_t> body(type.begin(), type.end());
    body.insert(body.end(), data.begin(), data.end());
    out.insert(out.end(), body.begin(), body.end());
    be32(out, crc32_ref(body.data(), body.size()));
}

std::vector<std::uint8_t> zlib_stored(const std::vector<std::uint8_t>& raw)
{
    std::vector<std::uint8_t> z{0x78, 0x01};
    std::size_t i = 0;
    do {
        const std::size_t n = std::min<std::size_t>(65535, raw.size() - i);
        z.push_back(i + n == raw.size() ? 1 : 0);
        z.push_back(static_cast<std::uint8_t>(n & 0xff));
        z.push_back(static_cast<std::uint8_t>(n >> 8));
        z.push_back(static_cast<std::uint8_t>(~n & 0xff));
        z.push_back(static_cast<std::uint8_t>((~n >> 8) & 0xff));
        z.insert(z.end(), raw.begin() + static_cast<std::ptrdiff_t>(i), raw.begin() + static_cast<std::ptrdiff_t>(i + n));
        i += n;
    } while (i < raw.size());
    std::uint32_t a = 1, b = 0;
    for (std::uint8_t v : raw) {
        a = (a + v) % 65521;
        b = (b + a) % 65521;
    }
    be32(z, (b << 16) | a);
    return z;
}

int paeth_ref(int a, int b, int c)
{
    const int p = a + b - c;
    const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    return pa <= pb && pa <= pc ? a : (pb <= pc ? b : c);
}

/// Encodes `px` (channels per pixel) with the given filter on each row, cycling through `filters`.
std::vector<std::uint8_t> png_fixture(int w, int h, int colour, const std::vector<std::uint8_t>& px,
                                      const std::vector<int>& filters = {0})
{
    const int ch = colour == 2 ? 3 : colour == 6 ? 4 : 1;
    const std::size_t stride = static_cast<std::size_t>(w * ch);
    std::vector<std::uint8_t> raw;
    for (int y = 0; y < h; ++y) {
        const int f = filters[static_cast<std::size_t>(y) % filters.size()];
        raw.push_back(static_cast<std::uint8_t>(f));
        for (std::size_t i = 0; i < stride; ++i) {
            const std::size_t k = static_cast<std::size_t>(y) * stride + i;
            const int a = i >= static_cast<std::size_t>(ch) ? px[k - static_cast<std::size_t>(ch)] : 0;
            const int b = y ? px[k - stride] : 0;
            const int c = (y && i >= static_cast<std::size_t>(ch)) ? px[k - stride - static_cast<std::size_t>(ch)] : 0;
            const int pred = f == 0 ? 0 : f == 1 ? a : f == 2 ? b : f == 3 ? (a + b) / 2 : paeth_ref(a, b, c);
            raw.push_back(static_cast<std::uint8_t>(px[k] - pred));
        }
    }
    std::vector<std::uint8_t> out{0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
    std::vector<std::uint8_t> ihdr;
    be32(ihdr, static_cast<std::uint32_t>(w));
    be32(ihdr, static_cast<std::uint32_t>(h));
    ihdr.insert(ihdr.end(), {8, static_cast<std::uint8_t>(colour), 0, 0, 0});
    chunk(out, "IHDR", ihdr);
    chunk(out, "IDAT", zlib_stored(raw));
    chunk(out, "IEND", {});
    return out;
}

HdrImage random_hdr(Gen& g, int w, int h)
{
    std::vector<float> rgb(static_cast<std::size_t>(w * h * 3));
    for (float& v : rgb)
        v = g.coin() ? static_cast<float>(std::exp2(g.val(-20, 20)) * g.val(0, 1)) : 0.25f;
    return HdrImage(w, h, std::move(rgb));
}

} // namespace

TEST_CASE("rgbe pixel examples")
{
    CHECK(rgbe_encode(0, 0, 0) == std::array<std::uint8_t, 4>{0, 0, 0, 0});
    CHECK(rgbe_encode(1, 1, 1) == std::array<std::uint8_t, 4>{128, 128, 128, 129});
    CHECK(rgbe_decode({128, 128, 128, 129}) == std::array<float, 3>{1, 1, 1});
    CHECK(rgbe_decode({0, 0, 0, 0}) == std::array<float, 3>{0, 0, 0});
    CHECK(rgbe_decode({255, 10, 0, 0}) == std::array<float, 3>{0, 0, 0});
    // 0.999 * 256 rounds up past the mantissa range and bumps the exponent.
    CHECK(rgbe_encode(0.999f, 0, 0) == std::array<std::uint8_t, 4>{128, 0, 0, 129});
    CHECK(rgbe_encode(-1, 0.5f, 0) == std::array<std::uint8_t, 4>{0, 128, 0, 128});
}

TEST_CASE("rgbe decode then encode is the identity on normalised pixels")
{
    for (int e : {0, 100, 120, 128, 136, 150, 160})
        for (int m = 0; m < 256; ++m) {
            if (e == 0 && m > 0)
                break;
            for (int lo : {0, 1, 77, 127}) {
                const std::array<std::uint8_t, 4> p{static_cast<std::uint8_t>(e ? 128 + m / 2 : 0),
                                                    static_cast<std::uint8_t>(e ? lo : 0),
                                                    static_cast<std::uint8_t>(e ? (m * 7) % 256 : 0),
                                                    static_cast<std::uint8_t>(e)};
                const auto d = rgbe_decode(p);
                REQUIRE(rgbe_encode(d[0], d[1], d[2]) == p);
            }
        }
}

TEST_CASE("rgbe round trip error")
{
    Gen g(71);
    for (int i = 0; i < 20000; ++i) {
        const double scale = std::exp2(g.val(-30, 30));
        const float c[3] = {static_cast<float>(scale * g.val(0, 1)), static_cast<float>(scale * g.val(0, 1)),
                            static_cast<float>(scale * g.val(0, 1))};
        const double m = std::max({c[0], c[1], c[2]});
        const auto d = rgbe_decode(rgbe_encode(c[0], c[1], c[2]));
        for (int k = 0; k < 3; ++k)
            REQUIRE(std::fabs(d[static_cast<std::size_t>(k)] - c[k]) <= m / 256.0);
    }
}

TEST_CASE("rgbe encode of decode of encode is encode")
{
    Gen g(75);
    for (int i = 0; i < 20000; ++i) {
        const double scale = std::exp2(g.val(-60, 60));
        const auto e = rgbe_encode(static_cast<float>(scale * g.val(0, 1)), static_cast<float>(scale * g.val(0, 1)),
                                   static_cast<float>(scale * g.val(0, 1)));
        const auto d = rgbe_decode(e);
        REQUIRE(rgbe_encode(d[0], d[1], d[2]) == e);
    }
}

TEST_CASE("rgbe file round trip in both layouts")
{
    Gen g(72);
    for (int i = 0; i < 30; ++i) {
        const int w = g.dim(8, 40), h = g.dim(1, 6);
        const HdrImage img = random_hdr(g, w, h);
        const auto rle = write_rgbe(img, RgbeLayout::rle), flat = write_rgbe(img, RgbeLayout::flat);
        const HdrImage a = read_rgbe(rle), b = read_rgbe(flat);
        REQUIRE(a == b);
        REQUIRE(a.width() == w);
        // Decoded values are fixed points of the codec.
        REQUIRE(read_rgbe(write_rgbe(a)) == a);
        REQUIRE(write_rgbe(read_rgbe(rle)) == rle);
        REQUIRE(write_rgbe(read_rgbe(flat), RgbeLayout::flat) == flat);
        CHECK(rle.size() < flat.size() + static_cast<std::size_t>(h * 4 * 3));
    }
    const HdrImage narrow = random_hdr(g, 5, 3);
    CHECK(read_rgbe(write_rgbe(narrow)) == read_rgbe(write_rgbe(narrow, RgbeLayout::flat)));
    CHECK_THROWS_AS(write_rgbe(narrow, RgbeLayout::rle), ShapeError);
}

TEST_CASE("rgbe hand-written scanlines")
{
    const std::string header = "#?RADIANCE\nFORMAT=32-bit_rle_rgbe\n\n";
    // Old-style repeat: P then (1,1,1,3) then Q.
    auto old = bytes_of(header + "-Y 1 +X 5\n");
    old.insert(old.end(), {128, 64, 0, 129, 1, 1, 1, 3, 0, 0, 128, 130});
    const HdrImage o = read_rgbe(old);
    for (int x = 0; x < 4; ++x) {
        CHECK(o.at(x, 0, 0) == 1.0f);
        CHECK(o.at(x, 0, 1) == 0.5f);
    }
    CHECK(o.at(4, 0, 2) == 2.0f);

    // New-style RLE: a run in red, literals in green, runs elsewhere.
    auto rle = bytes_of(header + "-Y 1 +X 8\n");
    rle.insert(rle.end(), {2, 2, 0, 8});
    rle.insert(rle.end(), {128 + 8, 128});
    rle.insert(rle.end(), {8, 0, 16, 32, 48, 64, 80, 96, 112});
    rle.insert(rle.end(), {128 + 8, 0});
    rle.insert(rle.end(), {128 + 8, 136});
    const HdrImage r = read_rgbe(rle);
    for (int x = 0; x < 8; ++x) {
        CHECK(r.at(x, 0, 0) == 128.0f);
        CHECK(r.at(x, 0, 1) == static_cast<float>(16 * x));
        CHECK(r.at(x, 0, 2) == 0.0f);
    }
}

TEST_CASE("rgbe malformed inputs")
{
    const std::string header = "#?RADIANCE\nFORMAT=32-bit_rle_rgbe\n\n";
    CHECK(error_of([] { read_rgbe(bytes_of("P6\n")); }).find("bad magic") != std::string::npos);
    CHECK(error_of([] { read_rgbe(bytes_of("#?RADIANCE\nFORMAT=32-bit_rle_xyze\n\n-Y 1 +X 1\n")); })
              .find("unsupported format") != std::string::npos);
    CHECK(error_of([&] { read_rgbe(bytes_of(header + "+Y 1 +X 1\n")); }).find("orientation") != std::string::npos);
    CHECK(error_of([&] { read_rgbe(bytes_of(header + "-Y one +X 1\n")); }).find("resolution") != std::string::npos);
    CHECK(error_of([&] { read_rgbe(bytes_of(header + "-Y 0 +X 1\n")); }).find("dimension") != std::string::npos);

    auto truncated = bytes_of(header + "-Y 2 +X 1\n");
    truncated.insert(truncated.end(), {1, 2, 3, 130});
    CHECK(error_of([&] { read_rgbe(truncated); }).find("unexpected end") != std::string::npos);
    truncated.insert(truncated.end(), {1, 2, 3, 130, 9});
    CHECK(error_of([&] { read_rgbe(truncated); }).find("dimension mismatch") != std::string::npos);

    auto overrun = bytes_of(header + "-Y 1 +X 8\n");
    overrun.insert(overrun.end(), {2, 2, 0, 8, 128 + 9, 1});
    CHECK(error_of([&] { read_rgbe(overrun); }).find("overrun") != std::string::npos);
}

TEST_CASE("png examples and fixtures")
{
    const auto white = write_png(LdrImage(1, 1, {255, 255, 255}));
    CHECK(read_png(white) == LdrImage(1, 1, {255, 255, 255}));
    CHECK(std::memcmp(white.data(), "\x89PNG\r\n\x1a\n", 8) == 0);

    // 4x4 checkerboard, every filter type.
    std::vector<std::uint8_t> px;
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x)
            for (int c = 0; c < 3; ++c)
                px.push_back((x + y) % 2 ? static_cast<std::uint8_t>(200 + c) : static_cast<std::uint8_t>(10 * c));
    const LdrImage board(4, 4, px);
    CHECK(read_png(png_fixture(4, 4, 2, px)) == board);
    CHECK(read_png(png_fixture(4, 4, 2, px, {1, 2, 3, 4})) == board);
    CHECK(read_png(png_fixture(4, 4, 2, px, {4, 3, 2, 1})) == board);

    std::vector<std::uint8_t> gray{0, 50, 100, 150, 200, 250};
    const LdrImage g = read_png(png_fixture(3, 2, 0, gray, {4}));
    for (int i = 0; i < 6; ++i)
        for (int c = 0; c < 3; ++c)
            CHECK(g.at(i % 3, i / 3, c) == gray[static_cast<std::size_t>(i)]);

    std::vector<std::uint8_t> rgba{1, 2, 3, 255, 4, 5, 6, 0};
    CHECK(read_png(png_fixture(2, 1, 6, rgba, {3})) == LdrImage(2, 1, {1, 2, 3, 4, 5, 6}));
}

TEST_CASE("png round trip")
{
    Gen g(73);
    for (int i = 0; i < 30; ++i) {
        const int w = g.dim(1, 40), h = g.dim(1, 40);
        std::vector<std::uint8_t> px(static_cast<std::size_t>(w * h * 3));
        for (auto& v : px)
            v = static_cast<std::uint8_t>(g.dim(0, 255));
        const LdrImage img(w, h, px);
        REQUIRE(read_png(write_png(img)) == img);
    }
}

TEST_CASE("png malformed inputs")
{
    const auto good = png_fixture(2, 2, 2, std::vector<std::uint8_t>(12, 9));
    CHECK(error_of([] { read_png(bytes_of("GIF89a..")); }).find("bad magic") != std::string::npos);
    auto bad = good;
    bad[20] ^= 1; // inside IHDR data
    CHECK(error_of([&] { read_png(bad); }).find("CRC mismatch") != std::string::npos);
    bad.assign(good.begin(), good.end() - 12); // drop IEND
    CHECK(error_of([&] { read_png(bad); }).find("IEND") != std::string::npos);
    bad.assign(good.begin(), good.begin() + 20);
    CHECK(error_of([&] { read_png(bad); }).find("truncated") != std::string::npos);
    CHECK(error_of([] { read_png(png_fixture(1, 1, 3, {0})); }).find("palette") != std::string::npos);
    CHECK(error_of([] { read_png(png_fixture(1, 1, 2, {1, 2, 3}, {7})); }).find("filter") != std::string::npos);
    CHECK_THROWS_AS(write_png(LdrImage()), ShapeError);
}

TEST_CASE("tone mapping operators")
{
    // Exposure 0 with gamma 1 passes values through.
    const HdrImage ramp(4, 1, {0.0f, 0.1f, 0.2f, 0.3f, 0.4f, 0.5f, 0.6f, 0.7f, 0.8f, 0.9f, 1.0f, 0.05f});
    TmoParams ex;
    ex.kind = TmoKind::exposure;
    ex.gamma = 1.0;
    CHECK(tone_map(ramp, ex) == ramp);

    // A uniform image maps to the key over one plus the key under Reinhard.
    TmoParams rh;
    rh.key = 1.0;
    const HdrImage flat(3, 3, std::vector<float>(27, 4.0f));
    const HdrImage mapped = tone_map(flat, rh);
    for (float v : mapped.pixels())
        CHECK(v == doctest::Approx(0.5).epsilon(1e-6));

    // Drago on two pixels against the formula in long double.
    const HdrImage two(2, 1, {0.5f, 1.0f, 2.0f, 8.0f, 4.0f, 1.0f});
    TmoParams dr;
    dr.kind = TmoKind::drago;
    dr.bias = 0.8;
    const HdrImage out = tone_map(two, dr);
    auto lum = [](long double r, long double g, long double b) { return 0.2126L * r + 0.7152L * g + 0.0722L * b; };
    const long double l0 = lum(0.5L, 1.0L, 2.0L), l1 = lum(8.0L, 4.0L, 1.0L), lmax = std::max(l0, l1);
    for (int x = 0; x < 2; ++x) {
        const long double l = x ? l1 : l0;
        const long double ld = 100.0L * 0.01L / std::log10(lmax + 1) * std::log(l + 1) /
                               std::log(2 + 8 * std::pow(l / lmax, std::log(0.8L) / std::log(0.5L)));
        for (int c = 0; c < 3; ++c) {
            const long double expect = std::clamp(two.at(x, 0, c) * ld / l, 0.0L, 1.0L);
            CHECK(std::fabs(out.at(x, 0, c) - static_cast<double>(expect)) <= 1e-6);
        }
    }

    bool zero = false;
    const HdrImage black(2, 2);
    for (TmoKind k : {TmoKind::drago, TmoKind::reinhard, TmoKind::exposure}) {
        TmoParams p;
        p.kind = k;
        CHECK(tone_map(black, p, &zero) == black);
        CHECK(zero);
        CHECK(tmo_apply(black, p).all_zero);
    }
    (void)tone_map(ramp, rh, &zero);
    CHECK_FALSE(zero);
}

TEST_CASE("tone mapping is monotone in luminance and bounded")
{
    Gen g(74);
    for (int i = 0; i < 60; ++i) {
        std::vector<float> rgb;
        float v = static_cast<float>(g.val(1e-4, 0.01));
        for (int x = 0; x < 32; ++x, v *= static_cast<float>(g.val(1.0, 2.0)))
            rgb.insert(rgb.end(), {v, v, v});
        const HdrImage img(32, 1, rgb);
        const TmoParams p = random_tmo_params(static_cast<std::uint64_t>(i));
        const HdrImage out = tone_map(img, p);
        for (int x = 1; x < 32; ++x)
            REQUIRE(out.at(x, 0, 1) >= out.at(x - 1, 0, 1));
        for (float o : out.pixels())
            REQUIRE((o >= 0.0f && o <= 1.0f));
    }
}

TEST_CASE("extreme dynamic range stays finite")
{
    Gen g(76);
    std::vector<float> rgb;
    for (int i = 0; i < 64 * 3; ++i)
        rgb.push_back(g.coin() ? 0.0f : static_cast<float>(std::exp2(g.val(-120, 120))));
    const HdrImage img(8, 8, rgb);
    for (std::uint64_t s = 0; s < 30; ++s) {
        const HdrImage out = tone_map(img, random_tmo_params(s));
        for (float v : out.pixels())
            REQUIRE((std::isfinite(v) && v >= 0.0f && v <= 1.0f));
        CHECK(tmo_apply(img, random_tmo_params(s)).image.pixels().size() == 192);
    }
}

TEST_CASE("tmo_apply quantizes to bytes")
{
    TmoParams ex;
    ex.kind = TmoKind::exposure;
    ex.gamma = 1.0;
    const HdrImage img(2, 1, {0.5f / 255, 1.5f / 255, 2.0f, 0.0f, 0.25f, 127.5f / 255});
    const LdrImage out = tmo_apply(img, ex).image;
    CHECK(out.pixels()[0] == 1);
    CHECK(out.pixels()[1] == 2);
    CHECK(out.pixels()[2] == 255);
    CHECK(out.pixels()[3] == 0);
    CHECK(out.pixels()[4] == 64);
    CHECK(out.pixels()[5] == 128);
}

TEST_CASE("random tone mapping")
{
    const HdrImage img = oracle::synthetic_hdr(16, 12, 3);
    CHECK(generate_ldr_random(img, 42).image == generate_ldr_random(img, 42).image);
    CHECK(generate_ldr_random(img, 42).params.to_text() == random_tmo_params(42).to_text());

    int counts[3] = {0, 0, 0};
    for (std::uint64_t s = 0; s < 1000; ++s) {
        const TmoParams p = random_tmo_params(s);
        ++counts[static_cast<int>(p.kind)];
        switch (p.kind) {
        case TmoKind::drago: REQUIRE((p.bias >= 0.7 && p.bias <= 0.95)); break;
        case TmoKind::reinhard: REQUIRE((p.key >= 0.09 && p.key <= 0.36)); break;
        case TmoKind::exposure:
            REQUIRE((p.exposure >= -2.0 && p.exposure <= 2.0));
            REQUIRE((p.gamma >= 1.8 && p.gamma <= 2.4));
            break;
        }
    }
    for (int c : counts)
        CHECK(std::fabs(c / 1000.0 - 1.0 / 3.0) <= 0.05);
}

TEST_CASE("tmo parameter text")
{
    TmoParams p;
    p.kind = TmoKind::drago;
    p.bias = 0.123456789012345;
    const TmoParams back = TmoParams::parse(p.to_text());
    CHECK(back.kind == TmoKind::drago);
    CHECK(back.bias == p.bias);
    CHECK(back.to_text() == p.to_text());

    const TmoParams q = TmoParams::parse("kind=exposure, exposure=-1.5,gamma=2");
    CHECK(q.kind == TmoKind::exposure);
    CHECK(q.exposure == -1.5);
    CHECK(q.gamma == 2.0);
    CHECK(q.key == 0.18);

    CHECK_THROWS(TmoParams::parse("kind=filmic"));
    CHECK_THROWS(TmoParams::parse("bias=2"));
    CHECK_THROWS(TmoParams::parse("key=abc"));
    CHECK_THROWS(TmoParams::parse("colour=1"));
    CHECK_THROWS(TmoParams::parse("gamma"));
}
