#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace mqn {

/// Whole-file reads and writes; failures throw Error naming the path.
std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);
std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);

/// Regular files in `dir` with the given extension (case-insensitive), sorted by name.
std::vector<std::filesystem::path> list_files(const std::filesystem::path& dir, const std::string& extension);

/// Little-endian byte sink.
class ByteWriter {
public:
    void u8(std::uint8_t v) { out_.push_back(v); }
    void u16(std::uint16_t v);
    void u32(std::uint32_t v);
    void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
    void f32(float v);
    void bytes(const void* data, std::size_t n);

    std::vector<std::uint8_t>& data() { return out_; }

private:
    std::vector<std::uint8_t> out_;
};

/// Little-endian byte source. Running past the end throws FormatError
/// carrying `context()` and the offset.
class ByteReader {
public:
    explicit ByteReader(const std::vector<std::uint8_t>& data) : data_(data) {}

    std::uint8_t u8();
    std::uint16_t u16();
    std::uint32_t u32();
    std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
    float f32();
    void bytes(void* dst, std::size_t n);

    std::size_t offset() const { return pos_; }
    std::size_t remaining() const { return data_.size() - pos_; }
    std::string context;

private:
    void need(std::size_t n);

    const std::vector<std::uint8_t>& data_;
    std::size_t pos_ = 0;
};

} // namespace mqn
