#include "mqn/tensor.hpp"

#include <sstream>

namespace mqn {

const char* dtype_name(DType t)
{
    switch (t) {
    case DType::f32: return "f32";
    case DType::i8: return "i8";
    case DType::i16: return "i16";
    case DType::i32: return "i32";
    }
    return "?";
}

std::size_t dtype_size(DType t)
{
    switch (t) {
    case DType::f32: return 4;
    case DType::i8: return 1;
    case DType::i16: return 2;
    case DType::i32: return 4;
    }
    return 0;
}

std::string Shape::str() const
{
    std::ostringstream os;
    os << n << "x" << h << "x" << w << "x" << c;
    return os.str();
}

Tensor::Tensor(Shape shape, DType dtype) : shape_(shape)
{
    if (shape.n < 0 || shape.h < 0 || shape.w < 0 || shape.c < 0)
        throw ShapeError("negative extent in shape " + shape.str());
    auto count = static_cast<std::size_t>(shape.elements());
    switch (dtype) {
    case DType::f32: data_ = std::vector<float>(count); break;
    case DType::i8: data_ = std::vector<std::int8_t>(count); break;
    case DType::i16: data_ = std::vector<std::int16_t>(count); break;
    case DType::i32: data_ = std::vector<std::int32_t>(count); break;
    }
}

Tensor Tensor::filled(Shape shape, float value)
{
    return Tensor(shape, std::vector<float>(static_cast<std::size_t>(shape.elements()), value));
}

void Tensor::check_size() const
{
    if (shape_.n < 0 || shape_.h < 0 || shape_.w < 0 || shape_.c < 0)
        throw ShapeError("negative extent in shape " + shape_.str());
    auto len = std::visit([](const auto& v) { return v.size(); }, data_);
    if (static_cast<std::int64_t>(len) != shape_.elements())
        throw ShapeError("data length " + std::to_string(len) + " does not match shape " + shape_.str());
}

std::int64_t Tensor::offset(std::int64_t n, std::int64_t h, std::int64_t w, std::int64_t c) const
{
    if (n < 0 || n >= shape_.n || h < 0 || h >= shape_.h || w < 0 || w >= shape_.w || c < 0 || c >= shape_.c)
        throw ShapeError("index (" + std::to_string(n) + "," + std::to_string(h) + "," + std::to_string(w) + "," +
                         std::to_string(c) + ") outside shape " + shape_.str());
    return ((n * shape_.h + h) * shape_.w + w) * shape_.c + c;
}

std::span<const std::uint8_t> Tensor::bytes() const
{
    return std::visit(
        [](const auto& v) {
            return std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(v.data()),
                                                 v.size() * sizeof(v[0]));
        },
        data_);
}

Tensor slice_channels(const Tensor& t, std::int64_t begin, std::int64_t end)
{
    const auto& s = t.shape();
    if (begin < 0 || end > s.c || begin > end)
        throw ShapeError("channel slice [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") outside " + s.str());
    Tensor out({s.n, s.h, s.w, end - begin}, DType::f32);
    auto src = t.data<float>();
    auto dst = out.data<float>();
    const std::int64_t pixels = s.n * s.h * s.w;
    const std::int64_t oc = end - begin;
    for (std::int64_t p = 0; p < pixels; ++p)
        for (std::int64_t c = 0; c < oc; ++c)
            dst[p * oc + c] = src[p * s.c + begin + c];
    return out;
}

} // namespace mqn
