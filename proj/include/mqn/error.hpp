#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace mqn {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Tensor shape or argument contract violation.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// Malformed or unsupported file content. Carries the byte offset where the
/// problem was detected (or -1 when not applicable).
class FormatError : public Error {
public:
    FormatError(const std::string& what, std::int64_t offset = -1)
        : Error(offset >= 0 ? what + " (at byte offset " + std::to_string(offset) + ")" : what),
          offset_(offset)
    {
    }

    std::int64_t offset() const noexcept { return offset_; }

private:
    std::int64_t offset_;
};

} // namespace mqn
