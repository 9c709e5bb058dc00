#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "mqn/error.hpp"

namespace mqn {

enum class DType : std::uint8_t { f32 = 0, i8 = 1, i16 = 2, i32 = 3 };

const char* dtype_name(DType t);
std::size_t dtype_size(DType t);

/// Extents of an (N, H, W, C) tensor.
struct Shape {
    std::int64_t n = 0, h = 0, w = 0, c = 0;

    std::int64_t elements() const { return n * h * w * c; }
    std::array<std::int64_t, 4> dims() const { return {n, h, w, c}; }
    bool operator==(const Shape&) const = default;
    std::string str() const;
};

template <class T> constexpr DType dtype_of();
template <> constexpr DType dtype_of<float>() { return DType::f32; }
template <> constexpr DType dtype_of<std::int8_t>() { return DType::i8; }
template <> constexpr DType dtype_of<std::int16_t>() { return DType::i16; }
template <> constexpr DType dtype_of<std::int32_t>() { return DType::i32; }

/// Dense row-major NHWC tensor. The element type is fixed at construction.
class Tensor {
public:
    Tensor() : Tensor(Shape{}, DType::f32) {}
    Tensor(Shape shape, DType dtype);

    template <class T>
    Tensor(Shape shape, std::vector<T> values) : shape_(shape), data_(std::move(values))
    {
        check_size();
    }

    /// Convenience for float data given as an initializer list.
    static Tensor f32(Shape shape, std::vector<float> values) { return Tensor(shape, std::move(values)); }
    static Tensor filled(Shape shape, float value);

    const Shape& shape() const { return shape_; }
    DType dtype() const { return static_cast<DType>(data_.index()); }
    std::int64_t size() const { return shape_.elements(); }

    template <class T> std::span<const T> data() const
    {
        if (auto* v = std::get_if<std::vector<T>>(&data_))
            return {v->data(), v->size()};
        throw ShapeError(std::string("tensor dtype is ") + dtype_name(dtype()) + ", requested " +
                         dtype_name(dtype_of<T>()));
    }
    template <class T> std::span<T> data()
    {
        if (auto* v = std::get_if<std::vector<T>>(&data_))
            return {v->data(), v->size()};
        throw ShapeError(std::string("tensor dtype is ") + dtype_name(dtype()) + ", requested " +
                         dtype_name(dtype_of<T>()));
    }

    std::int64_t offset(std::int64_t n, std::int64_t h, std::int64_t w, std::int64_t c) const;

    template <class T = float> T at(std::int64_t n, std::int64_t h, std::int64_t w, std::int64_t c) const
    {
        return data<T>()[static_cast<std::size_t>(offset(n, h, w, c))];
    }
    template <class T = float> T& at(std::int64_t n, std::int64_t h, std::int64_t w, std::int64_t c)
    {
        return data<T>()[static_cast<std::size_t>(offset(n, h, w, c))];
    }

    /// Same shape, raw little-endian bytes of the element buffer.
    std::span<const std::uint8_t> bytes() const;

    bool operator==(const Tensor& o) const { return shape_ == o.shape_ && data_ == o.data_; }

private:
    void check_size() const;

    Shape shape_;
    std::variant<std::vector<float>, std::vector<std::int8_t>, std::vector<std::int16_t>,
                 std::vector<std::int32_t>>
        data_;
};

/// Calls `f(T{})` with the element type matching `t`.
template <class F> decltype(auto) with_dtype(DType t, F&& f)
{
    switch (t) {
    case DType::i8: return f(std::int8_t{});
    case DType::i16: return f(std::int16_t{});
    case DType::i32: return f(std::int32_t{});
    default: return f(float{});
    }
}

/// Copy out channels [begin, end) of a float tensor.
Tensor slice_channels(const Tensor& t, std::int64_t begin, std::int64_t end);

} // namespace mqn
