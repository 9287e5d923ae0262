#pragma once

// Rank-4 NCHW tensors and the numerical kernels used by the network:
// 3x3/stride-1/pad-1 convolution (forward and adjoint), Leaky ReLU and
// elementwise addition. Convolution runs as im2col followed by a GEMM.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "srfrn/error.hpp"

namespace srfrn {

struct Shape {
  std::size_t batch = 0;
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;

  constexpr std::size_t count() const noexcept { return batch * channels * height * width; }
  constexpr std::size_t plane() const noexcept { return height * width; }
  constexpr std::size_t image() const noexcept { return channels * height * width; }

  friend constexpr bool operator==(const Shape&, const Shape&) = default;
};

inline std::string to_string(const Shape& s) {
  return "(" + std::to_string(s.batch) + "," + std::to_string(s.channels) + "," +
         std::to_string(s.height) + "," + std::to_string(s.width) + ")";
}

/// Element width tag stored in weight files: 32 for float, 64 for double.
enum class Precision : std::uint32_t { standard = 32, extended = 64 };

template <std::floating_point T>
constexpr Precision precision_of() noexcept {
  return sizeof(T) == 4 ? Precision::standard : Precision::extended;
}

template <std::floating_point T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T{0}) : shape_(shape), data_(shape.count(), fill) {}
  Tensor(Shape shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
    if (data_.size() != shape_.count()) {
      throw ShapeError("count", "tensor data length " + std::to_string(data_.size()) +
                                    " does not match shape " + to_string(shape_));
    }
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  std::vector<T>& storage() noexcept { return data_; }
  const std::vector<T>& storage() const noexcept { return data_; }

  T& operator()(std::size_t b, std::size_t c, std::size_t y, std::size_t x) noexcept {
    return data_[offset(b, c, y, x)];
  }
  T operator()(std::size_t b, std::size_t c, std::size_t y, std::size_t x) const noexcept {
    return data_[offset(b, c, y, x)];
  }
  T& operator[](std::size_t i) noexcept { return data_[i]; }
  T operator[](std::size_t i) const noexcept { return data_[i]; }

  /// All channels of one batch item.
  std::span<T> image(std::size_t b) noexcept {
    return std::span<T>(data_).subspan(b * shape_.image(), shape_.image());
  }
  std::span<const T> image(std::size_t b) const noexcept {
    return std::span<const T>(data_).subspan(b * shape_.image(), shape_.image());
  }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  template <std::floating_point U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::size_t offset(std::size_t b, std::size_t c, std::size_t y, std::size_t x) const noexcept {
    return ((b * shape_.channels + c) * shape_.height + y) * shape_.width + x;
  }

  Shape shape_{};
  std::vector<T> data_;
};

/// Dense row-major matrix; the operand type of im2col and matmul.
template <std::floating_point T>
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<T> values;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, T fill = T{0}) : rows(r), cols(c), values(r * c, fill) {}

  T& operator()(std::size_t r, std::size_t c) noexcept { return values[r * cols + c]; }
  T operator()(std::size_t r, std::size_t c) const noexcept { return values[r * cols + c]; }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = T{1};
    return m;
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;
};

namespace detail {

template <typename T>
using RowMajor = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMut = Eigen::Map<RowMajor<T>>;
template <typename T>
using MapConst = Eigen::Map<const RowMajor<T>>;

template <typename T>
inline void check_finite([[maybe_unused]] std::span<const T> values,
                         [[maybe_unused]] const char* where) {
#ifdef SRFRN_CHECK_FINITE
  for (T v : values) {
    if (!std::isfinite(v)) throw Error(ErrorCode::numeric, std::string(where) + " produced a non-finite value");
  }
#endif
}

// Writes the patch matrix for output rows [y0, y1) of one image (C x H x W)
// into `col`, shape 9*C x (y1-y0)*W. Row r = c*9 + ky*3 + kx holds
// input[c, y+ky-1, x+kx-1], zero outside the image.
template <typename T>
void im2col_rows(const T* in, std::size_t channels, std::size_t height, std::size_t width, std::size_t y0,
                 std::size_t y1, T* col) {
  const std::size_t hw = height * width;
  const std::size_t band = (y1 - y0) * width;
  for (std::size_t c = 0; c < channels; ++c) {
    const T* src = in + c * hw;
    for (std::size_t ky = 0; ky < 3; ++ky) {
      for (std::size_t kx = 0; kx < 3; ++kx) {
        T* dst = col + ((c * 9) + ky * 3 + kx) * band;
        for (std::size_t y = y0; y < y1; ++y) {
          T* row = dst + (y - y0) * width;
          const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + ky) - 1;
          if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(height)) {
            std::fill(row, row + width, T{0});
            continue;
          }
          const T* srow = src + static_cast<std::size_t>(sy) * width;
          if (kx == 0) {
            row[0] = T{0};
            std::copy(srow, srow + width - 1, row + 1);
          } else if (kx == 1) {
            std::copy(srow, srow + width, row);
          } else {
            std::copy(srow + 1, srow + width, row);
            row[width - 1] = T{0};
          }
        }
      }
    }
  }
}

// Adjoint of im2col_rows: scatter-adds the band's patch matrix onto the image.
template <typename T>
void col2im_rows(const T* col, std::size_t channels, std::size_t height, std::size_t width, std::size_t y0,
                 std::size_t y1, T* out) {
  const std::size_t hw = height * width;
  const std::size_t band = (y1 - y0) * width;
  for (std::size_t c = 0; c < channels; ++c) {
    T* dst = out + c * hw;
    for (std::size_t ky = 0; ky < 3; ++ky) {
      for (std::size_t kx = 0; kx < 3; ++kx) {
        const T* src = col + ((c * 9) + ky * 3 + kx) * band;
        for (std::size_t y = y0; y < y1; ++y) {
          const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + ky) - 1;
          if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(height)) continue;
          T* drow = dst + static_cast<std::size_t>(sy) * width;
          const T* row = src + (y - y0) * width;
          if (kx == 0) {
            for (std::size_t x = 1; x < width; ++x) drow[x - 1] += row[x];
          } else if (kx == 1) {
            for (std::size_t x = 0; x < width; ++x) drow[x] += row[x];
          } else {
            for (std::size_t x = 0; x + 1 < width; ++x) drow[x + 1] += row[x];
          }
        }
      }
    }
  }
}

// Rows per band so that one band holds roughly kBandPixels output pixels.
inline constexpr std::size_t kBandPixels = 16384;
inline std::size_t band_rows(std::size_t height, std::size_t width) {
  return std::clamp<std::size_t>(kBandPixels / std::max<std::size_t>(width, 1), 1, height);
}

template <typename T>
using BandMap = Eigen::Map<RowMajor<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using BandMapConst = Eigen::Map<const RowMajor<T>, 0, Eigen::OuterStride<>>;

template <typename T>
void require_conv_shapes(const Shape& in, const Shape& w, std::size_t bias_size, const char* op) {
  if (w.height != 3 || w.width != 3) {
    throw ShapeError("kernel", std::string(op) + ": kernel must be 3x3, got " + to_string(w));
  }
  if (in.channels != w.channels) {
    throw ShapeError("channels", std::string(op) + ": input has " + std::to_string(in.channels) +
                                     " channels but kernel expects " + std::to_string(w.channels));
  }
  if (bias_size != w.batch) {
    throw ShapeError("bias", std::string(op) + ": bias length " + std::to_string(bias_size) +
                                 " != out_ch " + std::to_string(w.batch));
  }
  if (in.height == 0 || in.width == 0) {
    throw ShapeError(in.height == 0 ? "height" : "width",
                     std::string(op) + ": zero-size spatial input " + to_string(in));
  }
}

}  // namespace detail

/// Patch matrix of shape (C*9, B*H*W); column block b covers batch item b.
template <std::floating_point T>
Matrix<T> im2col(const Tensor<T>& input) {
  const Shape& s = input.shape();
  if (s.height == 0 || s.width == 0) throw ShapeError("height", "im2col: zero-size spatial input");
  const std::size_t rows = s.channels * 9;
  const std::size_t hw = s.plane();
  Matrix<T> out(rows, s.batch * hw);
  std::vector<T> scratch(rows * hw);
  for (std::size_t b = 0; b < s.batch; ++b) {
    detail::im2col_rows(input.image(b).data(), s.channels, s.height, s.width, 0, s.height, scratch.data());
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(scratch.data() + r * hw, hw, out.values.data() + r * out.cols + b * hw);
    }
  }
  return out;
}

template <std::floating_point T>
Matrix<T> matmul(const Matrix<T>& a, const Matrix<T>& b) {
  if (a.cols != b.rows) {
    throw ShapeError("inner", "matmul: inner dimensions disagree (" + std::to_string(a.cols) + " vs " +
                                  std::to_string(b.rows) + ")");
  }
  Matrix<T> c(a.rows, b.cols);
  detail::MapMut<T>(c.values.data(), c.rows, c.cols).noalias() =
      detail::MapConst<T>(a.values.data(), a.rows, a.cols) * detail::MapConst<T>(b.values.data(), b.rows, b.cols);
  return c;
}

/// 3x3 convolution, stride 1, zero padding 1. `weights` is (out_ch, in_ch, 3, 3).
template <std::floating_point T>
Tensor<T> conv2d_forward(const Tensor<T>& input, const Tensor<T>& weights, std::span<const T> bias) {
  const Shape& s = input.shape();
  detail::require_conv_shapes<T>(s, weights.shape(), bias.size(), "conv2d_forward");
  const std::size_t out_ch = weights.shape().batch;
  const std::size_t k = s.channels * 9;
  const std::size_t hw = s.plane();

  Tensor<T> out(Shape{s.batch, out_ch, s.height, s.width});
  const Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> bvec(bias.data(), out_ch);
  const std::size_t rows = detail::band_rows(s.height, s.width);
  std::vector<T> col(k * rows * s.width);
  const detail::MapConst<T> w(weights.data().data(), out_ch, k);
  for (std::size_t b = 0; b < s.batch; ++b) {
    for (std::size_t y0 = 0; y0 < s.height; y0 += rows) {
      const std::size_t y1 = std::min(y0 + rows, s.height);
      const std::size_t n = (y1 - y0) * s.width;
      detail::im2col_rows(input.image(b).data(), s.channels, s.height, s.width, y0, y1, col.data());
      detail::BandMap<T> o(out.image(b).data() + y0 * s.width, out_ch, n, Eigen::OuterStride<>(hw));
      o.noalias() = w * detail::MapConst<T>(col.data(), k, n);
      o.colwise() += bvec;
    }
  }
  detail::check_finite<T>(out.data(), "conv2d_forward");
  return out;
}

template <std::floating_point T>
struct ConvGrads {
  Tensor<T> grad_input;
  Tensor<T> grad_weights;
  std::vector<T> grad_bias;
};

/// Analytic adjoint of conv2d_forward with respect to input, weights and bias.
template <std::floating_point T>
ConvGrads<T> conv2d_backward(const Tensor<T>& input, const Tensor<T>& weights, const Tensor<T>& grad_output,
                             bool need_grad_input = true) {
  const Shape& s = input.shape();
  const Shape& ws = weights.shape();
  detail::require_conv_shapes<T>(s, ws, ws.batch, "conv2d_backward");
  const Shape expected{s.batch, ws.batch, s.height, s.width};
  if (grad_output.shape() != expected) {
    throw ShapeError("grad_output", "conv2d_backward: grad_output shape " + to_string(grad_output.shape()) +
                                        " != forward output shape " + to_string(expected));
  }
  const std::size_t out_ch = ws.batch;
  const std::size_t k = s.channels * 9;
  const std::size_t hw = s.plane();

  ConvGrads<T> g{need_grad_input ? Tensor<T>(s) : Tensor<T>(), Tensor<T>(ws), std::vector<T>(out_ch, T{0})};
  const std::size_t rows = detail::band_rows(s.height, s.width);
  std::vector<T> col(k * rows * s.width);
  const detail::MapConst<T> w(weights.data().data(), out_ch, k);
  detail::MapMut<T> gw(g.grad_weights.data().data(), out_ch, k);
  for (std::size_t b = 0; b < s.batch; ++b) {
    for (std::size_t y0 = 0; y0 < s.height; y0 += rows) {
      const std::size_t y1 = std::min(y0 + rows, s.height);
      const std::size_t n = (y1 - y0) * s.width;
      const detail::BandMapConst<T> go(grad_output.image(b).data() + y0 * s.width, out_ch, n,
                                       Eigen::OuterStride<>(hw));
      detail::im2col_rows(input.image(b).data(), s.channels, s.height, s.width, y0, y1, col.data());
      gw.noalias() += go * detail::MapConst<T>(col.data(), k, n).transpose();
      for (std::size_t o = 0; o < out_ch; ++o) {
        const T* row = grad_output.image(b).data() + o * hw + y0 * s.width;
        T acc{0};
        for (std::size_t i = 0; i < n; ++i) acc += row[i];
        g.grad_bias[o] += acc;
      }
      if (need_grad_input) {
        detail::MapMut<T>(col.data(), k, n).noalias() = w.transpose() * go;
        detail::col2im_rows(col.data(), s.channels, s.height, s.width, y0, y1, g.grad_input.image(b).data());
      }
    }
  }
  detail::check_finite<T>(g.grad_weights.data(), "conv2d_backward");
  return g;
}

/// max(slope*x, x) for slope in (0, 1).
template <std::floating_point T>
Tensor<T> leaky_relu_forward(const Tensor<T>& x, T slope = T(0.1)) {
  Tensor<T> y(x.shape());
  auto in = x.data();
  auto out = y.data();
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] < T{0} ? slope * in[i] : in[i];
  return y;
}

template <std::floating_point T>
void leaky_relu_inplace(Tensor<T>& x, T slope = T(0.1)) {
  for (T& v : x.data()) v = v < T{0} ? slope * v : v;
}

/// Derivative is `slope` where x < 0 and 1 elsewhere (including x == 0).
/// Since slope > 0 the sign of the activation equals the sign of its input,
/// so `x` may be either the pre- or post-activation tensor.
template <std::floating_point T>
Tensor<T> leaky_relu_backward(const Tensor<T>& x, const Tensor<T>& grad_out, T slope = T(0.1)) {
  if (x.shape() != grad_out.shape()) {
    throw ShapeError("shape", "leaky_relu_backward: " + to_string(x.shape()) + " vs " + to_string(grad_out.shape()));
  }
  Tensor<T> g(x.shape());
  auto in = x.data();
  auto go = grad_out.data();
  auto out = g.data();
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] < T{0} ? slope * go[i] : go[i];
  return g;
}

template <std::floating_point T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa == sb) return;
  const char* dim = sa.batch != sb.batch ? "batch" : sa.channels != sb.channels ? "channels"
                    : sa.height != sb.height ? "height" : "width";
  throw ShapeError(dim, std::string(op) + ": shape " + to_string(sa) + " != " + to_string(sb));
}

template <std::floating_point T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "add");
  Tensor<T> out(a.shape());
  auto x = a.data();
  auto y = b.data();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] + y[i];
  return out;
}

template <std::floating_point T>
void add_inplace(Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "add_inplace");
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < x.size(); ++i) x[i] += y[i];
}

/// Multiply-add count (2 FLOPs per MAC) of one conv2d_forward call; bias ignored.
constexpr std::uint64_t conv2d_flops(std::size_t in_ch, std::size_t out_ch, std::size_t height, std::size_t width) {
  return std::uint64_t{2} * in_ch * out_ch * 9 * height * width;
}

}  // namespace srfrn
