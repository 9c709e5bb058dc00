#include <cstdlib>
#include <cstring>
#include <string>

#include <zlib.h>

#include "mqn/codecs.hpp"
#include "mqn/error.hpp"

namespace mqn {

namespace {

constexpr std::uint8_t kSignature[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1A, '\n'};

std::uint32_t be32(const std::uint8_t* p)
{
    return (std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) | (std::uint32_t{p[2]} << 8) | p[3];
}

void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v)
{
    for (int s = 24; s >= 0; s -= 8)
        out.push_back(static_cast<std::uint8_t>(v >> s));
}

void put_chunk(std::vector<std::uint8_t>& out, const char* type, const std::vector<std::uint8_t>& data)
{
    put_be32(out, static_cast<std::uint32_t>(data.size()));
    const std::size_t start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), data.begin(), data.end());
    const auto crc = crc32(0L, out.data() + start, static_cast<uInt>(out.size() - start));
    put_be32(out, static_cast<std::uint32_t>(crc));
}

int paeth(int a, int b, int c)
{
    const int p = a + b - c;
    const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc)
        return a;
    return pb <= pc ? b : c;
}

} // namespace

LdrImage read_png(const std::vector<std::uint8_t>& bytes)
{
    if (bytes.size() < 8 || std::memcmp(bytes.data(), kSignature, 8) != 0)
        throw FormatError("bad magic, not a PNG file", 0);
    std::size_t pos = 8;
    std::uint32_t width = 0, height = 0;
    int channels = 0;
    bool have_header = false, have_end = false;
    std::vector<std::uint8_t> idat;
    while (pos < bytes.size() && !have_end) {
        if (bytes.size() - pos < 12)
            throw FormatError("truncated PNG chunk", static_cast<std::int64_t>(pos));
        const std::uint32_t len = be32(&bytes[pos]);
        if (len > bytes.size() - pos - 12)
            throw FormatError("truncated PNG chunk", static_cast<std::int64_t>(pos));
        const std::string type(reinterpret_cast<const char*>(&bytes[pos + 4]), 4);
        const std::uint8_t* data = &bytes[pos + 8];
        const auto crc = crc32(0L, &bytes[pos + 4], len + 4);
        if (static_cast<std::uint32_t>(crc) != be32(data + len))
            throw FormatError("CRC mismatch in PNG chunk " + type, static_cast<std::int64_t>(pos));
        if (type == "IHDR") {
            if (len != 13)
                throw FormatError("bad IHDR length", static_cast<std::int64_t>(pos));
            width = be32(data);
            height = be32(data + 4);
            const int depth = data[8], colour = data[9], interlace = data[12];
            if (depth != 8)
                throw FormatError("unsupported PNG bit depth " + std::to_string(depth), static_cast<std::int64_t>(pos + 16));
            if (colour == 2)
                channels = 3;
            else if (colour == 6)
                channels = 4;
            else if (colour == 0)
                channels = 1;
            else
                throw FormatError("unsupported PNG colour type " + std::to_string(colour) +
                                      (colour == 3 ? " (palette)" : ""),
                                  static_cast<std::int64_t>(pos + 17));
            if (interlace != 0)
                throw FormatError("interlaced PNG is not supported", static_cast<std::int64_t>(pos + 20));
            if (width == 0 || height == 0 || width > 65535 || height > 65535)
                throw FormatError("PNG dimensions out of range", static_cast<std::int64_t>(pos + 8));
            have_header = true;
        } else if (type == "IDAT") {
            idat.insert(idat.end(), data, data + len);
        } else if (type == "IEND") {
            have_end = true;
        } else if (type == "PLTE" && !have_header) {
            throw FormatError("PLTE before IHDR", static_cast<std::int64_t>(pos));
        }
        pos += 12 + len;
    }
    if (!have_header)
        throw FormatError("PNG without IHDR", 8);
    if (!have_end)
        throw FormatError("PNG without IEND", static_cast<std::int64_t>(bytes.size()));

    const std::size_t stride = static_cast<std::size_t>(width) * static_cast<std::size_t>(channels);
    std::vector<std::uint8_t> raw((stride + 1) * height);
    uLongf raw_len = static_cast<uLongf>(raw.size());
    const int rc = uncompress(raw.data(), &raw_len, idat.data(), static_cast<uLong>(idat.size()));
    if (rc != Z_OK || raw_len != raw.size())
        throw FormatError("corrupt PNG image data (zlib code " + std::to_string(rc) + ")");

    std::vector<std::uint8_t> px(stride * height);
    const std::size_t bpp = static_cast<std::size_t>(channels);
    for (std::size_t y = 0; y < height; ++y) {
        const std::uint8_t filter = raw[y * (stride + 1)];
        const std::uint8_t* in = &raw[y * (stride + 1) + 1];
        std::uint8_t* row = &px[y * stride];
        const std::uint8_t* up = y ? &px[(y - 1) * stride] : nullptr;
        for (std::size_t i = 0; i < stride; ++i) {
            const int a = i >= bpp ? row[i - bpp] : 0;
            const int b = up ? up[i] : 0;
            const int c = (up && i >= bpp) ? up[i - bpp] : 0;
            int v = in[i];
            switch (filter) {
            case 0: break;
            case 1: v += a; break;
            case 2: v += b; break;
            case 3: v += (a + b) / 2; break;
            case 4: v += paeth(a, b, c); break;
            default: throw FormatError("unknown PNG filter type " + std::to_string(filter));
            }
            row[i] = static_cast<std::uint8_t>(v);
        }
    }

    std::vector<std::uint8_t> rgb(static_cast<std::size_t>(width) * height * 3);
    for (std::size_t p = 0; p < static_cast<std::size_t>(width) * height; ++p)
        for (std::size_t k = 0; k < 3; ++k)
            rgb[p * 3 + k] = channels == 1 ? px[p] : px[p * bpp + k];
    return LdrImage(static_cast<int>(width), static_cast<int>(height), std::move(rgb));
}

std::vector<std::uint8_t> write_png(const LdrImage& img)
{
    if (img.width() <= 0 || img.height() <= 0)
        throw ShapeError("cannot write an empty PNG");
    std::vector<std::uint8_t> out(kSignature, kSignature + 8);
    std::vector<std::uint8_t> ihdr;
    put_be32(ihdr, static_cast<std::uint32_t>(img.width()));
    put_be32(ihdr, static_cast<std::uint32_t>(img.height()));
    ihdr.insert(ihdr.end(), {8, 2, 0, 0, 0});
    put_chunk(out, "IHDR", ihdr);

    const std::size_t stride = static_cast<std::size_t>(img.width()) * 3;
    std::vector<std::uint8_t> raw;
    raw.reserve((stride + 1) * static_cast<std::size_t>(img.height()));
    auto px = img.pixels();
    for (int y = 0; y < img.height(); ++y) {
        raw.push_back(0);
        raw.insert(raw.end(), px.begin() + static_cast<std::ptrdiff_t>(y * stride),
                   px.begin() + static_cast<std::ptrdiff_t>((y + 1) * stride));
    }
    uLongf len = compressBound(static_cast<uLong>(raw.size()));
    std::vector<std::uint8_t> z(len);
    if (compress2(z.data(), &len, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
        throw Error("zlib compression failed");
    z.resize(len);
    put_chunk(out, "IDAT", z);
    put_chunk(out, "IEND", {});
    return out;
}

} // namespace mqn
