#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "srfrn/imaging.hpp"
#include "srfrn/png_io.hpp"

using namespace srfrn;

namespace {

Plane random_plane(std::size_t w, std::size_t h, std::uint64_t seed, double lo = 0.0, double hi = 255.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(lo, hi);
  Plane p(w, h);
  for (double& v : p.samples) v = d(rng);
  return p;
}

ImageU8 random_image(std::size_t w, std::size_t h, std::size_t c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ImageU8 img(w, h, c);
  for (auto& v : img.pixels) v = static_cast<std::uint8_t>(rng() & 0xFF);
  return img;
}

ImageU8 solid(std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  ImageU8 img(1, 1, 3);
  img.pixels = {r, g, b};
  return img;
}

// Smooth test pattern with structure at several frequencies.
Plane pattern(std::size_t w, std::size_t h) {
  Plane p(w, h);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      p.at(x, y) = 128.0 + 60.0 * std::sin(0.21 * x + 0.13 * y) + 30.0 * std::cos(0.05 * x * y / 8.0);
  return p;
}

std::filesystem::path temp_path(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "srfrn_test_imaging";
  std::filesystem::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST(RgbToY, White) { EXPECT_NEAR(rgb_to_y(solid(255, 255, 255)).samples[0], 235.0, 1e-3); }

TEST(RgbToY, Black) { EXPECT_EQ(rgb_to_y(solid(0, 0, 0)).samples[0], 16.0); }

TEST(RgbToY, Gray) {
  EXPECT_NEAR(rgb_to_y(solid(128, 128, 128)).samples[0], 16.0 + 219.0 * 128.0 / 255.0, 1e-9);
  EXPECT_NEAR(rgb_to_y(solid(128, 128, 128)).samples[0], 125.93, 5e-3);
}

TEST(RgbToY, GrayscalePassesThrough) {
  const auto img = random_image(5, 4, 1, 3);
  const auto y = rgb_to_y(img);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) EXPECT_EQ(y.samples[i], img.pixels[i]);
}

TEST(RgbToY, RangeOverRandomColors) {
  const auto img = random_image(64, 64, 3, 4);
  for (double v : rgb_to_y(img).samples) {
    EXPECT_GE(v, 16.0 - 1e-6);
    EXPECT_LE(v, 235.0 + 1e-6);
  }
}

TEST(RgbToY, ChromaRoundTripWithinRounding) {
  const auto img = random_image(16, 16, 3, 5);
  const auto ycc = rgb_to_ycbcr(img);
  const auto back = ycbcr_to_rgb(ycc.y, ycc.cb, ycc.cr);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) EXPECT_NEAR(back.pixels[i], img.pixels[i], 1);
}

TEST(Keys, HalfPhaseWeights) {
  const auto w = keys_weights(0.5);
  EXPECT_DOUBLE_EQ(w[0], -0.0625);
  EXPECT_DOUBLE_EQ(w[1], 0.5625);
  EXPECT_DOUBLE_EQ(w[2], 0.5625);
  EXPECT_DOUBLE_EQ(w[3], -0.0625);
}

TEST(Keys, PartitionOfUnity) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> d(0.0, 1.0);
  for (int i = 0; i < 1000; ++i) {
    const auto w = keys_weights(d(rng));
    EXPECT_NEAR(w[0] + w[1] + w[2] + w[3], 1.0, 1e-12);
  }
  const auto w0 = keys_weights(0.0);
  EXPECT_EQ(w0[1], 1.0);
  EXPECT_EQ(w0[0] + w0[2] + w0[3], 0.0);
}

TEST(Keys, KernelSupport) {
  EXPECT_EQ(keys_kernel(0.0), 1.0);
  EXPECT_EQ(keys_kernel(1.0), 0.0);
  EXPECT_EQ(keys_kernel(2.0), 0.0);
  EXPECT_EQ(keys_kernel(-2.5), 0.0);
  EXPECT_EQ(keys_kernel(0.3), keys_kernel(-0.3));
}

TEST(Bicubic, ConstantStaysConstant) {
  std::mt19937_64 rng(2);
  for (int i = 0; i < 20; ++i) {
    const std::size_t w = 1 + rng() % 30, h = 1 + rng() % 30, ow = 1 + rng() % 60, oh = 1 + rng() % 60;
    for (bool aa : {false, true}) {
      const auto out = bicubic_resize(Plane(w, h, 77.25), ow, oh, {aa});
      ASSERT_EQ(out.width, ow);
      ASSERT_EQ(out.height, oh);
      for (double v : out.samples) EXPECT_NEAR(v, 77.25, 1e-9);
    }
  }
}

TEST(Bicubic, SameSizeIsIdentity) {
  const auto p = random_plane(17, 11, 6);
  const auto q = bicubic_resize(p, 17, 11);
  for (std::size_t i = 0; i < p.size(); ++i) EXPECT_NEAR(q.samples[i], p.samples[i], 1e-9);
}

TEST(Bicubic, DoublingInteriorSample) {
  // Output x = 5 maps to source 2.25; a linear ramp is reproduced exactly by
  // the cubic kernel away from the borders.
  Plane ramp(8, 1);
  for (std::size_t x = 0; x < 8; ++x) ramp.at(x, 0) = 10.0 * x;
  const auto up = bicubic_resize(ramp, 16, 1);
  for (std::size_t x = 4; x < 12; ++x) EXPECT_NEAR(up.at(x, 0), 10.0 * ((x + 0.5) / 2.0 - 0.5), 1e-9);
}

TEST(Bicubic, HalfPixelTapsByHand) {
  // Downscale by 2: output sample d maps to source 2d + 0.5, so the taps at
  // 2d-1 .. 2d+2 carry the half-phase weights.
  Plane p = random_plane(12, 1, 7);
  const auto down = bicubic_resize(p, 6, 1);
  const double w[4] = {-0.0625, 0.5625, 0.5625, -0.0625};
  for (std::size_t d = 1; d < 5; ++d) {
    double expect = 0.0;
    for (int j = 0; j < 4; ++j) expect += w[j] * p.at(2 * d - 1 + j, 0);
    EXPECT_NEAR(down.at(d, 0), expect, 1e-9);
  }
}

TEST(Bicubic, RoundTripBeatsNoise) {
  const auto img = pattern(64, 48);
  const auto lr = bicubic_resize(img, 32, 24);
  const auto back = bicubic_resize(lr, 64, 48);
  const auto noise = random_plane(64, 48, 8);
  EXPECT_GT(psnr(back, img), psnr(noise, img));
  EXPECT_GT(psnr(back, img), 30.0);
}

TEST(Bicubic, RejectsEmpty) {
  EXPECT_THROW(bicubic_resize(Plane(4, 4), 0, 3), Error);
  EXPECT_THROW(bicubic_resize(Plane(), 3, 3), Error);
}

TEST(Modcrop, Cases) {
  const auto a = modcrop(Plane(481, 321), 3);
  EXPECT_EQ(a.width, 480u);
  EXPECT_EQ(a.height, 321u);
  const auto b = modcrop(Plane(100, 100), 2);
  EXPECT_EQ(b.width, 100u);
  EXPECT_EQ(b.height, 100u);
  const auto c = modcrop(Plane(5, 5), 4);
  EXPECT_EQ(c.width, 4u);
  EXPECT_EQ(c.height, 4u);
}

TEST(Modcrop, KeepsTopLeft) {
  const auto p = random_plane(7, 9, 9);
  const auto c = modcrop(p, 3);
  for (std::size_t y = 0; y < c.height; ++y)
    for (std::size_t x = 0; x < c.width; ++x) EXPECT_EQ(c.at(x, y), p.at(x, y));
}

TEST(Modcrop, ImageMatchesPlane) {
  const auto img = random_image(11, 7, 1, 10);
  EXPECT_EQ(rgb_to_y(modcrop(img, 4)), modcrop(rgb_to_y(img), 4));
  EXPECT_THROW(modcrop(Plane(3, 3), 4), Error);
}

TEST(Psnr, IdenticalIsInfinite) {
  const auto p = random_plane(8, 8, 11);
  EXPECT_TRUE(std::isinf(psnr(p, p)));
  EXPECT_GT(psnr(p, p), 0.0);
}

TEST(Psnr, UnitMse) {
  Plane a(10, 10, 50.0), b(10, 10, 51.0);
  EXPECT_NEAR(psnr(a, b), 20.0 * std::log10(255.0), 1e-12);
  EXPECT_NEAR(psnr(a, b), 48.1308, 1e-4);
}

TEST(Psnr, FullScaleErrorIsZeroDb) {
  Plane a(6, 6, 0.0), b(6, 6, 255.0);
  EXPECT_NEAR(psnr(a, b), 0.0, 1e-12);
}

TEST(Psnr, ShaveIgnoresBorder) {
  Plane a(10, 10, 50.0), b = a;
  for (std::size_t x = 0; x < 10; ++x) b.at(x, 0) = 0.0;
  EXPECT_TRUE(std::isinf(psnr(a, b, 1)));
  EXPECT_FALSE(std::isinf(psnr(a, b, 0)));
}

TEST(Psnr, SymmetricAndDecreasingInNoise) {
  const auto a = pattern(32, 32);
  std::mt19937_64 rng(12);
  double prev = std::numeric_limits<double>::infinity();
  for (double sigma : {1.0, 4.0, 16.0}) {
    std::normal_distribution<double> n(0.0, sigma);
    Plane b = a;
    for (double& v : b.samples) v += n(rng);
    EXPECT_EQ(psnr(a, b), psnr(b, a));
    EXPECT_LT(psnr(a, b), prev);
    prev = psnr(a, b);
  }
}

TEST(Psnr, SizeMismatch) { EXPECT_THROW(psnr(Plane(4, 4), Plane(4, 5)), ShapeError); }

TEST(Ssim, IdentityIsOne) {
  const auto p = random_plane(24, 20, 13);
  EXPECT_NEAR(ssim(p, p), 1.0, 1e-9);
}

TEST(Ssim, InvertedIsWorse) {
  const auto p = pattern(32, 32);
  Plane inv = p;
  for (double& v : inv.samples) v = 255.0 - v;
  EXPECT_LT(ssim(p, inv), ssim(p, p));
}

TEST(Ssim, EqualConstants) { EXPECT_NEAR(ssim(Plane(16, 16, 100.0), Plane(16, 16, 100.0)), 1.0, 1e-12); }

TEST(Ssim, SymmetricAndBounded) {
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto a = random_plane(15, 13, 20 + s), b = random_plane(15, 13, 40 + s);
    EXPECT_NEAR(ssim(a, b), ssim(b, a), 1e-12);
    EXPECT_LE(ssim(a, b), 1.0);
    EXPECT_GE(ssim(a, b), -1.0);
  }
}

TEST(Ssim, WindowSweepByHand) {
  // 11x11 image: one window position, so SSIM is the single-window value
  // computed here from scratch.
  const auto a = random_plane(11, 11, 14), b = random_plane(11, 11, 15);
  double g[11], gs = 0.0;
  for (int i = 0; i < 11; ++i) gs += g[i] = std::exp(-(i - 5.0) * (i - 5.0) / (2.0 * 1.5 * 1.5));
  double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
  for (int y = 0; y < 11; ++y)
    for (int x = 0; x < 11; ++x) {
      const double w = g[x] * g[y] / (gs * gs);
      const double u = a.at(x, y), v = b.at(x, y);
      ma += w * u;
      mb += w * v;
      saa += w * u * u;
      sbb += w * v * v;
      sab += w * u * v;
    }
  const double c1 = std::pow(0.01 * 255, 2), c2 = std::pow(0.03 * 255, 2);
  const double expect = ((2 * ma * mb + c1) * (2 * (sab - ma * mb) + c2)) /
                        ((ma * ma + mb * mb + c1) * (saa - ma * ma + sbb - mb * mb + c2));
  EXPECT_NEAR(ssim(a, b), expect, 1e-12);
}

TEST(Ssim, TooSmall) { EXPECT_THROW(ssim(Plane(10, 12), Plane(10, 12)), Error); }

TEST(Png, RgbRoundTrip) {
  const auto img = random_image(37, 23, 3, 16);
  const auto path = temp_path("rgb.png");
  png_save(img, path);
  EXPECT_EQ(png_load(path), img);
}

TEST(Png, GrayRoundTrip) {
  const auto img = random_image(19, 31, 1, 17);
  EXPECT_EQ(png_decode(png_encode(img)), img);
}

TEST(Png, OnePixel) {
  const auto img = solid(1, 2, 3);
  EXPECT_EQ(png_decode(png_encode(img)), img);
}

TEST(Png, TruncatedFileIsError) {
  auto bytes = png_encode(random_image(32, 32, 3, 18));
  bytes.resize(bytes.size() / 2);
  const auto path = temp_path("truncated.png");
  {
    std::ofstream os(path, std::ios::binary);
    os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  }
  EXPECT_THROW(png_load(path), Error);
}

TEST(Png, SixteenBitRejected) {
  // Hand-assembled 1x1 16-bit grayscale PNG.
  const std::vector<unsigned char> bytes = {
      0x89, 0x50, 0x4E, 0x47, 0x0D, 0x0A, 0x1A, 0x0A, 0x00, 0x00, 0x00, 0x0D, 0x49, 0x48, 0x44, 0x52,
      0x00, 0x00, 0x00, 0x01, 0x00, 0x00, 0x00, 0x01, 0x10, 0x00, 0x00, 0x00, 0x00, 0x6A, 0xEE, 0x47,
      0x16, 0x00, 0x00, 0x00, 0x0B, 0x49, 0x44, 0x41, 0x54, 0x78, 0x9C, 0x63, 0x10, 0x32, 0x01, 0x00,
      0x00, 0x5B, 0x00, 0x47, 0x96, 0xFB, 0x1B, 0x65, 0x00, 0x00, 0x00, 0x00, 0x49, 0x45, 0x4E, 0x44,
      0xAE, 0x42, 0x60, 0x82};
  try {
    png_decode(bytes);
    FAIL() << "16-bit image accepted";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::data);
  }
}

TEST(Png, MissingFile) {
  try {
    png_load(temp_path("does_not_exist.png"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::io);
  }
}

TEST(Png, BundledSamplesDecode) {
  const std::filesystem::path dir = SRFRN_TEST_DATA_DIR "/natural";
  std::size_t n = 0;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.path().extension() != ".png") continue;
    const auto img = png_load(e.path());
    EXPECT_GT(img.width, 0u);
    ++n;
  }
  EXPECT_GE(n, 8u);
}
