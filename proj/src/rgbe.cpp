#include <algorithm>
#include <cmath>
#include <sstream>

#include "mqn/codecs.hpp"
#include "mqn/error.hpp"

namespace mqn {

std::array<std::uint8_t, 4> rgbe_encode(float r, float g, float b)
{
    const double m = std::max({static_cast<double>(r), static_cast<double>(g), static_cast<double>(b)});
    if (!(m > 1e-38))
        return {0, 0, 0, 0};
    int e = 0;
    std::frexp(m, &e);
    auto mant = [&](double c) { return std::round(std::ldexp(std::max(c, 0.0), 8 - e)); };
    if (mant(m) >= 256.0)
        ++e;
    if (e + 128 < 1)
        return {0, 0, 0, 0};
    if (e + 128 > 255)
        return {255, 255, 255, 255};
    return {static_cast<std::uint8_t>(mant(r)), static_cast<std::uint8_t>(mant(g)), static_cast<std::uint8_t>(mant(b)),
            static_cast<std::uint8_t>(e + 128)};
}

std::array<float, 3> rgbe_decode(const std::array<std::uint8_t, 4>& p)
{
    if (p[3] == 0)
        return {0.0f, 0.0f, 0.0f};
    const int e = p[3] - 136;
    return {static_cast<float>(std::ldexp(p[0], e)), static_cast<float>(std::ldexp(p[1], e)),
            static_cast<float>(std::ldexp(p[2], e))};
}

namespace {

class Cursor {
public:
    explicit Cursor(const std::vector<std::uint8_t>& b) : b_(b) {}

    bool done() const { return pos_ >= b_.size(); }
    std::size_t pos() const { return pos_; }

    std::uint8_t next()
    {
        if (done())
            throw FormatError("unexpected end of RGBE data", static_cast<std::int64_t>(pos_));
        return b_[pos_++];
    }

    std::string line()
    {
        std::string s;
        while (true) {
            if (done())
                throw FormatError("unexpected end of RGBE header", static_cast<std::int64_t>(pos_));
            const char c = static_cast<char>(b_[pos_++]);
            if (c == '\n')
                return s;
            s.push_back(c);
        }
    }

private:
    const std::vector<std::uint8_t>& b_;
    std::size_t pos_ = 0;
};

void read_scanline(Cursor& in, std::vector<std::array<std::uint8_t, 4>>& row)
{
    const std::size_t width = row.size();
    const std::size_t start = in.pos();
    std::array<std::uint8_t, 4> first{};
    for (auto& v : first)
        v = in.next();

    const bool rle = width >= 8 && width <= 32767 && first[0] == 2 && first[1] == 2 && (first[2] & 0x80) == 0;
    if (rle) {
        if (static_cast<std::size_t>((first[2] << 8) | first[3]) != width)
            throw FormatError("RLE scanline width does not match image width", static_cast<std::int64_t>(start));
        for (int ch = 0; ch < 4; ++ch) {
            std::size_t x = 0;
            while (x < width) {
                const std::size_t at = in.pos();
                std::uint8_t count = in.next();
                if (count > 128) {
                    count = static_cast<std::uint8_t>(count - 128);
                    if (x + count > width)
                        throw FormatError("scanline overrun", static_cast<std::int64_t>(at));
                    const std::uint8_t v = in.next();
                    for (int k = 0; k < count; ++k)
                        row[x++][static_cast<std::size_t>(ch)] = v;
                } else {
                    if (count == 0 || x + count > width)
                        throw FormatError(count == 0 ? "zero-length RLE run" : "scanline overrun",
                                          static_cast<std::int64_t>(at));
                    for (int k = 0; k < count; ++k)
                        row[x++][static_cast<std::size_t>(ch)] = in.next();
                }
            }
        }
        return;
    }

    // Flat pixels, possibly with old-style (1,1,1,n) repeats.
    std::size_t x = 0;
    int shift = 0;
    std::array<std::uint8_t, 4> px = first;
    while (true) {
        if (px[0] == 1 && px[1] == 1 && px[2] == 1) {
            if (x == 0)
                throw FormatError("run-length repeat at start of scanline", static_cast<std::int64_t>(in.pos() - 4));
            const std::size_t n = static_cast<std::size_t>(px[3]) << shift;
            if (x + n > width)
                throw FormatError("scanline overrun", static_cast<std::int64_t>(in.pos() - 4));
            for (std::size_t k = 0; k < n; ++k, ++x)
                row[x] = row[x - 1];
            shift += 8;
        } else {
            row[x++] = px;
            shift = 0;
        }
        if (x == width)
            return;
        for (auto& v : px)
            v = in.next();
    }
}

void rle_channel(std::vector<std::uint8_t>& out, const std::vector<std::uint8_t>& v)
{
    constexpr std::size_t kMinRun = 4;
    std::size_t i = 0;
    const std::size_t n = v.size();
    while (i < n) {
        // Find the next run of at least kMinRun equal bytes.
        std::size_t run_start = i, run_len = 0;
        while (run_start < n) {
            run_len = 1;
            while (run_start + run_len < n && run_len < 127 && v[run_start + run_len] == v[run_start])
                ++run_len;
            if (run_len >= kMinRun)
                break;
            run_start += run_len;
        }
        if (run_start >= n)
            run_len = 0;
        while (i < run_start) {
            const std::size_t lit = std::min<std::size_t>(128, run_start - i);
            out.push_back(static_cast<std::uint8_t>(lit));
            out.insert(out.end(), v.begin() + static_cast<std::ptrdiff_t>(i),
                       v.begin() + static_cast<std::ptrdiff_t>(i + lit));
            i += lit;
        }
        if (run_len >= kMinRun) {
            out.push_back(static_cast<std::uint8_t>(128 + run_len));
            out.push_back(v[run_start]);
            i = run_start + run_len;
        }
    }
}

} // namespace

HdrImage read_rgbe(const std::vector<std::uint8_t>& bytes)
{
    Cursor in(bytes);
    const std::string magic = in.line();
    if (magic != "#?RADIANCE" && magic != "#?RGBE")
        throw FormatError("bad magic, not a Radiance RGBE file", 0);
    while (true) {
        const std::size_t at = in.pos();
        const std::string l = in.line();
        if (l.empty())
            break;
        if (l.rfind("FORMAT=", 0) == 0 && l != "FORMAT=32-bit_rle_rgbe")
            throw FormatError("unsupported format '" + l.substr(7) + "'", static_cast<std::int64_t>(at));
    }
    const std::size_t res_at = in.pos();
    const std::string res = in.line();
    std::istringstream rs(res);
    std::string ya, xa, extra;
    long long h = -1, w = -1;
    if (!(rs >> ya >> h >> xa >> w) || (rs >> extra))
        throw FormatError("bad resolution line '" + res + "'", static_cast<std::int64_t>(res_at));
    if (ya != "-Y" || xa != "+X")
        throw FormatError("unsupported orientation '" + res + "'", static_cast<std::int64_t>(res_at));
    if (h <= 0 || w <= 0 || h > 1'000'000 || w > 1'000'000)
        throw FormatError("dimension out of range in '" + res + "'", static_cast<std::int64_t>(res_at));

    std::vector<float> rgb;
    rgb.reserve(static_cast<std::size_t>(h * w * 3));
    std::vector<std::array<std::uint8_t, 4>> row(static_cast<std::size_t>(w));
    for (long long y = 0; y < h; ++y) {
        read_scanline(in, row);
        for (const auto& p : row)
            for (float c : rgbe_decode(p))
                rgb.push_back(c);
    }
    if (!in.done())
        throw FormatError("dimension mismatch: data continues past the last scanline",
                          static_cast<std::int64_t>(in.pos()));
    return HdrImage(static_cast<int>(w), static_cast<int>(h), std::move(rgb));
}

std::vector<std::uint8_t> write_rgbe(const HdrImage& img, RgbeLayout layout)
{
    const std::string header = "#?RADIANCE\nFORMAT=32-bit_rle_rgbe\n\n-Y " + std::to_string(img.height()) + " +X " +
                               std::to_string(img.width()) + "\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    const int w = img.width();
    bool rle = w >= 8 && w <= 32767;
    if (layout != RgbeLayout::auto_select) {
        if (layout == RgbeLayout::rle && !rle)
            throw ShapeError("RLE scanlines need a width in 8..32767");
        rle = layout == RgbeLayout::rle;
    }
    std::vector<std::array<std::uint8_t, 4>> row(static_cast<std::size_t>(w));
    std::vector<std::uint8_t> channel(static_cast<std::size_t>(w));
    for (int y = 0; y < img.height(); ++y) {
        for (int x = 0; x < w; ++x)
            row[static_cast<std::size_t>(x)] = rgbe_encode(img.at(x, y, 0), img.at(x, y, 1), img.at(x, y, 2));
        if (!rle) {
            for (const auto& p : row)
                out.insert(out.end(), p.begin(), p.end());
            continue;
        }
        out.insert(out.end(), {2, 2, static_cast<std::uint8_t>(w >> 8), static_cast<std::uint8_t>(w & 0xFF)});
        for (std::size_t ch = 0; ch < 4; ++ch) {
            for (std::size_t x = 0; x < row.size(); ++x)
                channel[x] = row[x][ch];
            rle_channel(out, channel);
        }
    }
    return out;
}

} // namespace mqn
