#pragma once

#include <cstdint>
#include <vector>

#include "mqn/tensor.hpp"

namespace mqn {

/// Linear-light RGB radiance, row-major, 3 floats per pixel, all >= 0.
class HdrImage {
public:
    HdrImage() = default;
    HdrImage(int width, int height); // black
    HdrImage(int width, int height, std::vector<float> rgb);

    int width() const { return width_; }
    int height() const { return height_; }
    std::span<const float> pixels() const { return rgb_; }
    std::span<float> pixels() { return rgb_; }
    float at(int x, int y, int c) const { return rgb_[static_cast<std::size_t>((y * width_ + x) * 3 + c)]; }
    float& at(int x, int y, int c) { return rgb_[static_cast<std::size_t>((y * width_ + x) * 3 + c)]; }

    bool operator==(const HdrImage&) const = default;

private:
    int width_ = 0, height_ = 0;
    std::vector<float> rgb_;
};

/// 8-bit display-referred RGB, row-major.
class LdrImage {
public:
    LdrImage() = default;
    LdrImage(int width, int height);
    LdrImage(int width, int height, std::vector<std::uint8_t> rgb);

    int width() const { return width_; }
    int height() const { return height_; }
    std::span<const std::uint8_t> pixels() const { return rgb_; }
    std::span<std::uint8_t> pixels() { return rgb_; }
    std::uint8_t at(int x, int y, int c) const { return rgb_[static_cast<std::size_t>((y * width_ + x) * 3 + c)]; }
    std::uint8_t& at(int x, int y, int c) { return rgb_[static_cast<std::size_t>((y * width_ + x) * 3 + c)]; }

    bool operator==(const LdrImage&) const = default;

private:
    int width_ = 0, height_ = 0;
    std::vector<std::uint8_t> rgb_;
};

/// 1xHxWx3 tensor with values u8/255.
Tensor to_tensor(const LdrImage& img);
/// 1xHxWx3 tensor of the raw radiance values.
Tensor to_tensor(const HdrImage& img);
/// Takes batch 0 of an (N,H,W,3) tensor; negative values are rejected.
HdrImage hdr_from_tensor(const Tensor& t);

} // namespace mqn
