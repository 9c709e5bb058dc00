#include "mqn/io.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cstring>
#include <fstream>
#include <iterator>

#include "mqn/error.hpp"

namespace mqn {

std::vector<std::uint8_t> read_file(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw Error(path.string() + ": cannot open for reading");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw Error(path.string() + ": cannot open for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out)
        throw Error(path.string() + ": write failed");
}

std::string read_text(const std::filesystem::path& path)
{
    auto b = read_file(path);
    return {b.begin(), b.end()};
}

void write_text(const std::filesystem::path& path, const std::string& text)
{
    write_file(path, {text.begin(), text.end()});
}

std::vector<std::filesystem::path> list_files(const std::filesystem::path& dir, const std::string& extension)
{
    std::error_code ec;
    if (!std::filesystem::is_directory(dir, ec))
        throw Error(dir.string() + ": not a directory");
    auto lower = [](std::string s) {
        std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
        return s;
    };
    std::vector<std::filesystem::path> out;
    for (const auto& e : std::filesystem::directory_iterator(dir))
        if (e.is_regular_file() && lower(e.path().extension().string()) == lower(extension))
            out.push_back(e.path());
    std::sort(out.begin(), out.end());
    return out;
}

void ByteWriter::u16(std::uint16_t v)
{
    u8(static_cast<std::uint8_t>(v));
    u8(static_cast<std::uint8_t>(v >> 8));
}

void ByteWriter::u32(std::uint32_t v)
{
    for (int i = 0; i < 4; ++i)
        u8(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::f32(float v)
{
    u32(std::bit_cast<std::uint32_t>(v));
}

void ByteWriter::bytes(const void* data, std::size_t n)
{
    auto p = static_cast<const std::uint8_t*>(data);
    out_.insert(out_.end(), p, p + n);
}

void ByteReader::need(std::size_t n)
{
    if (remaining() < n)
        throw FormatError("truncated data" + (context.empty() ? std::string() : " in " + context),
                          static_cast<std::int64_t>(data_.size()));
}

std::uint8_t ByteReader::u8()
{
    need(1);
    return data_[pos_++];
}

std::uint16_t ByteReader::u16()
{
    need(2);
    const auto v = static_cast<std::uint16_t>(data_[pos_] | (data_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
}

std::uint32_t ByteReader::u32()
{
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
        v |= static_cast<std::uint32_t>(data_[pos_ + static_cast<std::size_t>(i)]) << (8 * i);
    pos_ += 4;
    return v;
}

float ByteReader::f32()
{
    return std::bit_cast<float>(u32());
}

void ByteReader::bytes(void* dst, std::size_t n)
{
    need(n);
    std::memcpy(dst, data_.data() + pos_, n);
    pos_ += n;
}

} // namespace mqn
