#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace srfrn {

enum class ErrorCode {
  shape,      // tensor/plane dimensions disagree
  format,     // file contents do not follow the expected layout
  truncated,  // file ended before the declared payload
  io,         // could not open/read/write a path
  data,       // input data unusable (empty manifest, unsupported image)
  numeric,    // NaN/Inf or divergence
  usage,      // caller violated a precondition
};

constexpr std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::shape: return "shape";
    case ErrorCode::format: return "format";
    case ErrorCode::truncated: return "truncated";
    case ErrorCode::io: return "io";
    case ErrorCode::data: return "data";
    case ErrorCode::numeric: return "numeric";
    case ErrorCode::usage: return "usage";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + " error: " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// Process exit status: 1 usage, 2 data or I/O, 3 numeric divergence.
constexpr int exit_code(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::usage: return 1;
    case ErrorCode::numeric: return 3;
    default: return 2;
  }
}

/// Shape mismatch that names the dimension at fault ("channels", "height", ...).
class ShapeError : public Error {
 public:
  ShapeError(std::string dimension, const std::string& message)
      : Error(ErrorCode::shape, message), dimension_(std::move(dimension)) {}

  const std::string& dimension() const noexcept { return dimension_; }

 private:
  std::string dimension_;
};

}  // namespace srfrn
