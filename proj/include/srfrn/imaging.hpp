#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "srfrn/error.hpp"

namespace srfrn {

/// Interleaved 8-bit image, 1 (gray) or 3 (RGB) channels.
struct ImageU8 {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 0;
  std::vector<std::uint8_t> pixels;

  ImageU8() = default;
  ImageU8(std::size_t w, std::size_t h, std::size_t c) : width(w), height(h), channels(c), pixels(w * h * c, 0) {
    if (c != 1 && c != 3) throw Error(ErrorCode::usage, "ImageU8: channels must be 1 or 3");
  }

  std::uint8_t& at(std::size_t x, std::size_t y, std::size_t c) noexcept { return pixels[(y * width + x) * channels + c]; }
  std::uint8_t at(std::size_t x, std::size_t y, std::size_t c) const noexcept {
    return pixels[(y * width + x) * channels + c];
  }

  friend bool operator==(const ImageU8&, const ImageU8&) = default;
};

/// Single-channel floating-point image, nominal range [0, 255].
struct Plane {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<double> samples;

  Plane() = default;
  Plane(std::size_t w, std::size_t h, double fill = 0.0) : width(w), height(h), samples(w * h, fill) {}

  double& at(std::size_t x, std::size_t y) noexcept { return samples[y * width + x]; }
  double at(std::size_t x, std::size_t y) const noexcept { return samples[y * width + x]; }
  std::size_t size() const noexcept { return samples.size(); }

  friend bool operator==(const Plane&, const Plane&) = default;
};

// ---------------------------------------------------------------------------
// Color conversion (ITU-R BT.601, studio range)

struct YCbCr {
  Plane y, cb, cr;
};

namespace detail {

inline constexpr std::array<std::array<double, 3>, 3> kRgbToYcc{{
    {65.481, 128.553, 24.966},
    {-37.797, -74.203, 112.0},
    {112.0, -93.786, -18.214},
}};
inline constexpr std::array<double, 3> kYccOffset{16.0, 128.0, 128.0};

// Inverse of kRgbToYcc / 255, computed once by cofactor expansion.
inline const std::array<std::array<double, 3>, 3>& ycc_to_rgb_matrix() {
  static const auto inv = [] {
    std::array<std::array<double, 3>, 3> m{};
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) m[r][c] = kRgbToYcc[r][c] / 255.0;
    const double det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) -
                       m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
                       m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    std::array<std::array<double, 3>, 3> out{};
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) {
        const int r1 = (c + 1) % 3, r2 = (c + 2) % 3, c1 = (r + 1) % 3, c2 = (r + 2) % 3;
        out[r][c] = (m[r1][c1] * m[r2][c2] - m[r1][c2] * m[r2][c1]) / det;
      }
    }
    return out;
  }();
  return inv;
}

}  // namespace detail

inline std::uint8_t clip_round_u8(double v) noexcept {
  if (!(v > 0.0)) return 0;
  if (v >= 255.0) return 255;
  return static_cast<std::uint8_t>(std::lround(v));
}

/// Luminance plane. Grayscale images pass through unchanged.
inline Plane rgb_to_y(const ImageU8& img) {
  Plane y(img.width, img.height);
  const std::size_t n = img.width * img.height;
  if (img.channels == 1) {
    for (std::size_t i = 0; i < n; ++i) y.samples[i] = img.pixels[i];
    return y;
  }
  const auto& k = detail::kRgbToYcc[0];
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint8_t* p = &img.pixels[i * 3];
    y.samples[i] = 16.0 + (k[0] * p[0] + k[1] * p[1] + k[2] * p[2]) / 255.0;
  }
  return y;
}

inline YCbCr rgb_to_ycbcr(const ImageU8& img) {
  if (img.channels != 3) throw Error(ErrorCode::usage, "rgb_to_ycbcr: expected 3 channels");
  YCbCr out{Plane(img.width, img.height), Plane(img.width, img.height), Plane(img.width, img.height)};
  const std::size_t n = img.width * img.height;
  std::array<Plane*, 3> dst{&out.y, &out.cb, &out.cr};
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint8_t* p = &img.pixels[i * 3];
    for (int r = 0; r < 3; ++r) {
      const auto& k = detail::kRgbToYcc[r];
      dst[r]->samples[i] = detail::kYccOffset[r] + (k[0] * p[0] + k[1] * p[1] + k[2] * p[2]) / 255.0;
    }
  }
  return out;
}

inline ImageU8 ycbcr_to_rgb(const Plane& y, const Plane& cb, const Plane& cr) {
  if (y.width != cb.width || y.width != cr.width || y.height != cb.height || y.height != cr.height) {
    throw Error(ErrorCode::shape, "ycbcr_to_rgb: plane sizes differ");
  }
  const auto& inv = detail::ycc_to_rgb_matrix();
  ImageU8 img(y.width, y.height, 3);
  for (std::size_t i = 0; i < y.size(); ++i) {
    const std::array<double, 3> v{y.samples[i] - 16.0, cb.samples[i] - 128.0, cr.samples[i] - 128.0};
    for (int r = 0; r < 3; ++r) {
      img.pixels[i * 3 + r] = clip_round_u8(inv[r][0] * v[0] + inv[r][1] * v[1] + inv[r][2] * v[2]);
    }
  }
  return img;
}

inline ImageU8 plane_to_gray(const Plane& p) {
  ImageU8 img(p.width, p.height, 1);
  for (std::size_t i = 0; i < p.size(); ++i) img.pixels[i] = clip_round_u8(p.samples[i]);
  return img;
}

inline Plane clip(Plane p, double lo = 0.0, double hi = 255.0) {
  for (double& v : p.samples) v = std::clamp(v, lo, hi);
  return p;
}

// ---------------------------------------------------------------------------
// Bicubic resampling (Keys cubic convolution)

inline constexpr double kKeysA = -0.5;

/// Keys cubic convolution kernel.
inline double keys_kernel(double x, double a = kKeysA) noexcept {
  x = std::abs(x);
  if (x <= 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
  if (x < 2.0) return (((x - 5.0) * x + 8.0) * x - 4.0) * a;
  return 0.0;
}

/// Weights of the taps at offsets -1, 0, 1, 2 for fractional position `phi` in [0, 1).
inline std::array<double, 4> keys_weights(double phi, double a = kKeysA) noexcept {
  return {keys_kernel(1.0 + phi, a), keys_kernel(phi, a), keys_kernel(1.0 - phi, a), keys_kernel(2.0 - phi, a)};
}

struct ResizeOptions {
  /// Widen the kernel by the reduction factor when downscaling (area-aware
  /// prefilter). Off: the same 4-tap kernel serves both directions.
  bool antialias = false;
};

namespace detail {

struct Contribution {
  std::vector<std::size_t> index;  // flattened taps, `taps` per output sample
  std::vector<double> weight;
  std::size_t taps = 0;
};

inline Contribution resize_contributions(std::size_t in, std::size_t out, const ResizeOptions& opt) {
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  const bool widen = opt.antialias && ratio > 1.0;
  const double kscale = widen ? 1.0 / ratio : 1.0;
  Contribution c;
  c.taps = widen ? static_cast<std::size_t>(std::ceil(4.0 * ratio)) + 2 : 4;
  c.index.resize(out * c.taps);
  c.weight.resize(out * c.taps);
  const auto clamp_index = [in](std::ptrdiff_t i) {
    return static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(i, 0, static_cast<std::ptrdiff_t>(in) - 1));
  };
  for (std::size_t d = 0; d < out; ++d) {
    const double src = (static_cast<double>(d) + 0.5) * ratio - 0.5;
    std::size_t* idx = &c.index[d * c.taps];
    double* w = &c.weight[d * c.taps];
    if (!widen) {
      const double base = std::floor(src);
      const auto kw = keys_weights(src - base);
      for (std::size_t j = 0; j < 4; ++j) {
        idx[j] = clamp_index(static_cast<std::ptrdiff_t>(base) - 1 + static_cast<std::ptrdiff_t>(j));
        w[j] = kw[j];
      }
      continue;
    }
    const std::ptrdiff_t first = static_cast<std::ptrdiff_t>(std::floor(src - 2.0 * ratio));
    double sum = 0.0;
    for (std::size_t j = 0; j < c.taps; ++j) {
      const std::ptrdiff_t s = first + static_cast<std::ptrdiff_t>(j);
      idx[j] = clamp_index(s);
      w[j] = kscale * keys_kernel((src - static_cast<double>(s)) * kscale);
      sum += w[j];
    }
    for (std::size_t j = 0; j < c.taps; ++j) w[j] /= sum;
  }
  return c;
}

}  // namespace detail

/// Separable bicubic resize with center-aligned sampling,
/// src = (dst + 0.5) * in / out - 0.5, and edge replication at the borders.
inline Plane bicubic_resize(const Plane& p, std::size_t out_w, std::size_t out_h, const ResizeOptions& opt = {}) {
  if (out_w == 0 || out_h == 0) throw Error(ErrorCode::usage, "bicubic_resize: output size must be >= 1");
  if (p.width == 0 || p.height == 0) throw Error(ErrorCode::usage, "bicubic_resize: empty input plane");
  const auto cx = detail::resize_contributions(p.width, out_w, opt);
  const auto cy = detail::resize_contributions(p.height, out_h, opt);

  Plane horiz(out_w, p.height);
  for (std::size_t y = 0; y < p.height; ++y) {
    const double* row = &p.samples[y * p.width];
    double* dst = &horiz.samples[y * out_w];
    for (std::size_t x = 0; x < out_w; ++x) {
      double acc = 0.0;
      for (std::size_t j = 0; j < cx.taps; ++j) acc += cx.weight[x * cx.taps + j] * row[cx.index[x * cx.taps + j]];
      dst[x] = acc;
    }
  }
  Plane out(out_w, out_h);
  for (std::size_t y = 0; y < out_h; ++y) {
    double* dst = &out.samples[y * out_w];
    for (std::size_t j = 0; j < cy.taps; ++j) {
      const double w = cy.weight[y * cy.taps + j];
      const double* src = &horiz.samples[cy.index[y * cy.taps + j] * out_w];
      for (std::size_t x = 0; x < out_w; ++x) dst[x] += w * src[x];
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Cropping

inline Plane crop(const Plane& p, std::size_t x0, std::size_t y0, std::size_t w, std::size_t h) {
  if (x0 + w > p.width || y0 + h > p.height) throw Error(ErrorCode::shape, "crop: window outside plane");
  Plane out(w, h);
  for (std::size_t y = 0; y < h; ++y) {
    std::copy_n(&p.samples[(y0 + y) * p.width + x0], w, &out.samples[y * w]);
  }
  return out;
}

/// Crops bottom/right so both dimensions are multiples of `scale`.
inline Plane modcrop(const Plane& p, std::size_t scale) {
  if (scale == 0) throw Error(ErrorCode::usage, "modcrop: scale must be positive");
  const std::size_t w = p.width - p.width % scale;
  const std::size_t h = p.height - p.height % scale;
  if (w == 0 || h == 0) {
    throw Error(ErrorCode::shape, "modcrop: " + std::to_string(p.width) + "x" + std::to_string(p.height) +
                                      " has no full " + std::to_string(scale) + "-multiple");
  }
  return crop(p, 0, 0, w, h);
}

inline ImageU8 modcrop(const ImageU8& img, std::size_t scale) {
  if (scale == 0) throw Error(ErrorCode::usage, "modcrop: scale must be positive");
  const std::size_t w = img.width - img.width % scale;
  const std::size_t h = img.height - img.height % scale;
  if (w == 0 || h == 0) throw Error(ErrorCode::shape, "modcrop: image smaller than scale");
  ImageU8 out(w, h, img.channels);
  for (std::size_t y = 0; y < h; ++y) {
    std::copy_n(&img.pixels[y * img.width * img.channels], w * img.channels, &out.pixels[y * w * img.channels]);
  }
  return out;
}

/// Removes `border` pixels from every side.
inline Plane shave(const Plane& p, std::size_t border) {
  if (2 * border >= p.width || 2 * border >= p.height) {
    throw Error(ErrorCode::usage, "shave: border " + std::to_string(border) + " leaves no pixels");
  }
  return crop(p, border, border, p.width - 2 * border, p.height - 2 * border);
}

// ---------------------------------------------------------------------------
// Metrics

namespace detail {
inline void require_same_size(const Plane& a, const Plane& b, const char* op) {
  if (a.width != b.width || a.height != b.height) {
    throw ShapeError(a.width != b.width ? "width" : "height",
                     std::string(op) + ": " + std::to_string(a.width) + "x" + std::to_string(a.height) + " vs " +
                         std::to_string(b.width) + "x" + std::to_string(b.height));
  }
}
}  // namespace detail

inline double mse(const Plane& a, const Plane& b) {
  detail::require_same_size(a, b, "mse");
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a.samples[i] - b.samples[i];
    sum += d * d;
  }
  return sum / static_cast<double>(a.size());
}

/// Peak signal-to-noise ratio for peak 255 over the region left after removing
/// `shave_border` pixels on every side. Identical inputs give +infinity.
inline double psnr(const Plane& a, const Plane& b, std::size_t shave_border = 0) {
  detail::require_same_size(a, b, "psnr");
  const double e = shave_border == 0 ? mse(a, b) : mse(shave(a, shave_border), shave(b, shave_border));
  if (e == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(255.0 * 255.0 / e);
}

struct SsimParams {
  std::size_t window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 255.0;
};

namespace detail {

inline std::vector<double> gaussian_1d(std::size_t n, double sigma) {
  std::vector<double> g(n);
  const double c = (static_cast<double>(n) - 1.0) / 2.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(i) - c;
    g[i] = std::exp(-d * d / (2.0 * sigma * sigma));
    sum += g[i];
  }
  for (double& v : g) v /= sum;
  return g;
}

// Valid-region separable filtering of `src` (w x h) with a symmetric kernel.
inline std::vector<double> filter_valid(const std::vector<double>& src, std::size_t w, std::size_t h,
                                        const std::vector<double>& k) {
  const std::size_t n = k.size();
  const std::size_t ow = w - n + 1, oh = h - n + 1;
  std::vector<double> tmp(ow * h);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += k[j] * src[y * w + x + j];
      tmp[y * ow + x] = acc;
    }
  }
  std::vector<double> out(ow * oh, 0.0);
  for (std::size_t y = 0; y < oh; ++y) {
    for (std::size_t j = 0; j < n; ++j) {
      const double kj = k[j];
      const double* row = &tmp[(y + j) * ow];
      double* dst = &out[y * ow];
      for (std::size_t x = 0; x < ow; ++x) dst[x] += kj * row[x];
    }
  }
  return out;
}

}  // namespace detail

/// Mean structural similarity over every window position that fits inside the
/// image (no border padding).
inline double ssim(const Plane& a, const Plane& b, const SsimParams& params = {}) {
  detail::require_same_size(a, b, "ssim");
  if (a.width < params.window || a.height < params.window) {
    throw Error(ErrorCode::shape, "ssim: image smaller than the " + std::to_string(params.window) + "px window");
  }
  const auto g = detail::gaussian_1d(params.window, params.sigma);
  const std::size_t w = a.width, h = a.height;
  std::vector<double> aa(a.size()), bb(a.size()), ab(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    aa[i] = a.samples[i] * a.samples[i];
    bb[i] = b.samples[i] * b.samples[i];
    ab[i] = a.samples[i] * b.samples[i];
  }
  const auto mu_a = detail::filter_valid(a.samples, w, h, g);
  const auto mu_b = detail::filter_valid(b.samples, w, h, g);
  const auto e_aa = detail::filter_valid(aa, w, h, g);
  const auto e_bb = detail::filter_valid(bb, w, h, g);
  const auto e_ab = detail::filter_valid(ab, w, h, g);

  const double c1 = std::pow(params.k1 * params.dynamic_range, 2);
  const double c2 = std::pow(params.k2 * params.dynamic_range, 2);
  double sum = 0.0;
  for (std::size_t i = 0; i < mu_a.size(); ++i) {
    const double ma = mu_a[i], mb = mu_b[i];
    const double va = e_aa[i] - ma * ma;
    const double vb = e_bb[i] - mb * mb;
    const double cov = e_ab[i] - ma * mb;
    sum += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
  }
  return sum / static_cast<double>(mu_a.size());
}

}  // namespace srfrn
