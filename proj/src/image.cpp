#include "mqn/image.hpp"

#include <cmath>

namespace mqn {

namespace {

void check_dims(int width, int height)
{
    if (width < 0 || height < 0)
        throw ShapeError("image dimensions must be non-negative");
}

} // namespace

HdrImage::HdrImage(int width, int height)
    : width_(width), height_(height), rgb_(static_cast<std::size_t>(width) * static_cast<std::size_t>(height) * 3, 0.0f)
{
    check_dims(width, height);
}

HdrImage::HdrImage(int width, int height, std::vector<float> rgb) : width_(width), height_(height), rgb_(std::move(rgb))
{
    check_dims(width, height);
    if (rgb_.size() != static_cast<std::size_t>(width) * static_cast<std::size_t>(height) * 3)
        throw ShapeError("HDR pixel buffer does not match dimensions");
    for (float v : rgb_) {
        if (std::isnan(v))
            throw ShapeError("HDR image contains NaN");
        if (v < 0.0f)
            throw ShapeError("HDR image contains a negative component");
    }
}

LdrImage::LdrImage(int width, int height)
    : width_(width), height_(height), rgb_(static_cast<std::size_t>(width) * static_cast<std::size_t>(height) * 3, 0)
{
    check_dims(width, height);
}

LdrImage::LdrImage(int width, int height, std::vector<std::uint8_t> rgb)
    : width_(width), height_(height), rgb_(std::move(rgb))
{
    check_dims(width, height);
    if (rgb_.size() != static_cast<std::size_t>(width) * static_cast<std::size_t>(height) * 3)
        throw ShapeError("LDR pixel buffer does not match dimensions");
}

Tensor to_tensor(const LdrImage& img)
{
    std::vector<float> v(img.pixels().size());
    for (std::size_t i = 0; i < v.size(); ++i)
        v[i] = static_cast<float>(img.pixels()[i]) / 255.0f;
    return Tensor({1, img.height(), img.width(), 3}, std::move(v));
}

Tensor to_tensor(const HdrImage& img)
{
    return Tensor({1, img.height(), img.width(), 3}, std::vector<float>(img.pixels().begin(), img.pixels().end()));
}

HdrImage hdr_from_tensor(const Tensor& t)
{
    const Shape& s = t.shape();
    if (s.c != 3 || s.n < 1)
        throw ShapeError("HDR image tensor must be (N,H,W,3), got " + s.str());
    auto src = t.data<float>();
    const auto count = static_cast<std::size_t>(s.h * s.w * 3);
    return HdrImage(static_cast<int>(s.w), static_cast<int>(s.h), std::vector<float>(src.begin(), src.begin() + count));
}

} // namespace mqn
