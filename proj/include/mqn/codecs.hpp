#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "mqn/image.hpp"

namespace mqn {

/// Shared-exponent encoding of one pixel: rounded mantissas with the largest
/// in [128, 256), exponent byte e such that value = m * 2^(e - 136).
std::array<std::uint8_t, 4> rgbe_encode(float r, float g, float b);
std::array<float, 3> rgbe_decode(const std::array<std::uint8_t, 4>& rgbe);

enum class RgbeLayout { auto_select, flat, rle };

/// Radiance .hdr. Reads flat, old-style and new-style run-length scanlines.
HdrImage read_rgbe(const std::vector<std::uint8_t>& bytes);
/// `auto_select` writes new-style RLE for widths 8..32767 and flat otherwise.
std::vector<std::uint8_t> write_rgbe(const HdrImage& img, RgbeLayout layout = RgbeLayout::auto_select);

/// 8-bit non-interlaced PNG of colour type 2 (RGB), 6 (RGBA, alpha dropped) or 0 (gray).
LdrImage read_png(const std::vector<std::uint8_t>& bytes);
/// 8-bit RGB, filter type 0 on every row.
std::vector<std::uint8_t> write_png(const LdrImage& img);

} // namespace mqn
