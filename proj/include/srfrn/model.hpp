#pragma once

// Shallow residual feature-representative network:
//
//   F1  = conv(I_ILR)                      1 -> 64, no activation
//   F2  = conv(F1)                         64 -> 64, no activation
//   R_0 = F2
//   R_n = lrelu(c3(lrelu(c2(a1)))) + a1,  a1 = lrelu(c1(R_{n-1}))
//   I_C = conv(R_N)                        64 -> 1, no activation
//   out = I_ILR + I_C
//
// The input is the bicubic-upsampled luminance plane, so the network only
// learns the interpolation residual.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "srfrn/tensor.hpp"

namespace srfrn {

inline constexpr std::size_t kFeatures = 64;
inline constexpr double kLeakySlope = 0.1;

template <std::floating_point T>
struct ConvLayer {
  Tensor<T> weights;  // (out_ch, in_ch, 3, 3)
  std::vector<T> bias;
  Tensor<T> grad_weights;
  std::vector<T> grad_bias;
  // Adam first/second moments.
  std::vector<T> m_weights, v_weights, m_bias, v_bias;

  ConvLayer() = default;
  ConvLayer(std::size_t out_ch, std::size_t in_ch)
      : weights(Shape{out_ch, in_ch, 3, 3}),
        bias(out_ch, T{0}),
        grad_weights(Shape{out_ch, in_ch, 3, 3}),
        grad_bias(out_ch, T{0}),
        m_weights(out_ch * in_ch * 9, T{0}),
        v_weights(out_ch * in_ch * 9, T{0}),
        m_bias(out_ch, T{0}),
        v_bias(out_ch, T{0}) {}

  std::size_t out_channels() const noexcept { return weights.shape().batch; }
  std::size_t in_channels() const noexcept { return weights.shape().channels; }
  std::size_t param_count() const noexcept { return weights.size() + bias.size(); }

  void zero_grad() {
    grad_weights.fill(T{0});
    std::fill(grad_bias.begin(), grad_bias.end(), T{0});
  }

  void zero_params() {
    weights.fill(T{0});
    std::fill(bias.begin(), bias.end(), T{0});
  }

  Tensor<T> forward(const Tensor<T>& x) const { return conv2d_forward(x, weights, std::span<const T>(bias)); }

  /// Accumulates dL/dW, dL/dB and returns dL/dx (empty when not requested).
  Tensor<T> backward(const Tensor<T>& x, const Tensor<T>& grad_out, bool need_grad_input = true) {
    auto g = conv2d_backward(x, weights, grad_out, need_grad_input);
    add_inplace(grad_weights, g.grad_weights);
    for (std::size_t i = 0; i < grad_bias.size(); ++i) grad_bias[i] += g.grad_bias[i];
    return std::move(g.grad_input);
  }
};

template <std::floating_point T>
struct RfrBlock {
  std::array<ConvLayer<T>, 3> layers{ConvLayer<T>(kFeatures, kFeatures), ConvLayer<T>(kFeatures, kFeatures),
                                     ConvLayer<T>(kFeatures, kFeatures)};
  T slope = T(kLeakySlope);

  std::size_t param_count() const noexcept {
    return layers[0].param_count() + layers[1].param_count() + layers[2].param_count();
  }
};

struct ModelOptions {
  /// Apply Leaky ReLU after the two feature-extraction convolutions. Off by
  /// default: those layers are plain affine maps.
  bool feature_activation = false;
};

/// Parameter total for a model with `n_blocks` residual blocks.
inline std::uint64_t param_count(std::size_t n_blocks) {
  if (n_blocks == 0) throw Error(ErrorCode::usage, "param_count: n_blocks must be >= 1");
  constexpr std::uint64_t feat1 = kFeatures * 1 * 9 + kFeatures;
  constexpr std::uint64_t feat2 = kFeatures * kFeatures * 9 + kFeatures;
  constexpr std::uint64_t recon = 1 * kFeatures * 9 + 1;
  constexpr std::uint64_t block = 3 * (kFeatures * kFeatures * 9 + kFeatures);
  return feat1 + feat2 + recon + n_blocks * block;
}

/// Forward FLOPs (multiply-adds counted twice) for one H x W image.
inline std::uint64_t forward_flops(std::size_t n_blocks, std::size_t height, std::size_t width) {
  std::uint64_t total = conv2d_flops(1, kFeatures, height, width) + conv2d_flops(kFeatures, kFeatures, height, width) +
                        conv2d_flops(kFeatures, 1, height, width);
  total += n_blocks * 3 * conv2d_flops(kFeatures, kFeatures, height, width);
  return total;
}

template <std::floating_point T>
class SrfrnModel {
 public:
  explicit SrfrnModel(std::size_t n_blocks = 6, ModelOptions options = {})
      : feat1(kFeatures, 1), feat2(kFeatures, kFeatures), blocks(n_blocks), recon(1, kFeatures), options_(options) {
    if (n_blocks == 0) throw Error(ErrorCode::usage, "SrfrnModel: n_blocks must be >= 1");
  }

  ConvLayer<T> feat1;
  ConvLayer<T> feat2;
  std::vector<RfrBlock<T>> blocks;
  ConvLayer<T> recon;

  std::size_t n_blocks() const noexcept { return blocks.size(); }
  const ModelOptions& options() const noexcept { return options_; }
  void set_options(ModelOptions options) noexcept { options_ = options; }

  /// Visits layers in weight-file order: feat1, feat2, blocks[0].layers[0..2], ..., recon.
  template <typename F>
  void for_each_layer(F&& f) {
    f(feat1);
    f(feat2);
    for (auto& b : blocks)
      for (auto& l : b.layers) f(l);
    f(recon);
  }
  template <typename F>
  void for_each_layer(F&& f) const {
    f(feat1);
    f(feat2);
    for (const auto& b : blocks)
      for (const auto& l : b.layers) f(l);
    f(recon);
  }

  std::size_t param_count() const {
    std::size_t n = 0;
    for_each_layer([&](const ConvLayer<T>& l) { n += l.param_count(); });
    return n;
  }

  void zero_grad() {
    for_each_layer([](ConvLayer<T>& l) { l.zero_grad(); });
  }

  friend bool operator==(const SrfrnModel& a, const SrfrnModel& b) {
    if (a.n_blocks() != b.n_blocks()) return false;
    std::vector<const ConvLayer<T>*> la, lb;
    a.for_each_layer([&](const ConvLayer<T>& l) { la.push_back(&l); });
    b.for_each_layer([&](const ConvLayer<T>& l) { lb.push_back(&l); });
    for (std::size_t i = 0; i < la.size(); ++i) {
      if (la[i]->weights != lb[i]->weights || la[i]->bias != lb[i]->bias) return false;
    }
    return true;
  }

 private:
  ModelOptions options_;
};

/// Activations kept by `forward` for the backward pass.
template <std::floating_point T>
struct BlockTape {
  Tensor<T> input;  // R_{n-1}
  Tensor<T> act1, act2, act3;
};

template <std::floating_point T>
struct Tape {
  Tensor<T> input;  // I_ILR
  Tensor<T> f1, f2;
  std::vector<BlockTape<T>> blocks;
  Tensor<T> features;  // R_N, input of the reconstruction layer
};

template <std::floating_point T>
struct ForwardResult {
  Tensor<T> output;  // I_FRC
  Tape<T> tape;
};

namespace detail {

template <std::floating_point T>
void require_model_input(const Tensor<T>& x) {
  const Shape& s = x.shape();
  if (s.channels != 1) {
    throw ShapeError("channels", "model input must be single-channel, got " + std::to_string(s.channels));
  }
  if (s.height < 3 || s.width < 3) {
    throw ShapeError(s.height < 3 ? "height" : "width", "model input must be at least 3x3, got " + to_string(s));
  }
}

}  // namespace detail

/// One residual block: a1 = lrelu(c1 x), a2 = lrelu(c2 a1), a3 = lrelu(c3 a2), out = a3 + a1.
template <std::floating_point T>
Tensor<T> rfr_forward(const RfrBlock<T>& block, const Tensor<T>& r_prev, BlockTape<T>* tape = nullptr) {
  if (r_prev.shape().channels != kFeatures) {
    throw ShapeError("channels", "rfr_forward: expected 64 channels, got " + std::to_string(r_prev.shape().channels));
  }
  Tensor<T> a1 = block.layers[0].forward(r_prev);
  leaky_relu_inplace(a1, block.slope);
  Tensor<T> a2 = block.layers[1].forward(a1);
  leaky_relu_inplace(a2, block.slope);
  Tensor<T> a3 = block.layers[2].forward(a2);
  leaky_relu_inplace(a3, block.slope);
  Tensor<T> out = add(a3, a1);
  if (tape != nullptr) {
    tape->input = r_prev;
    tape->act1 = std::move(a1);
    tape->act2 = std::move(a2);
    tape->act3 = std::move(a3);
  }
  return out;
}

template <std::floating_point T>
ForwardResult<T> forward(const SrfrnModel<T>& model, const Tensor<T>& i_ilr) {
  detail::require_model_input(i_ilr);
  const T slope = T(kLeakySlope);
  const bool act = model.options().feature_activation;
  ForwardResult<T> r;
  r.tape.input = i_ilr;
  r.tape.f1 = model.feat1.forward(i_ilr);
  if (act) leaky_relu_inplace(r.tape.f1, slope);
  r.tape.f2 = model.feat2.forward(r.tape.f1);
  if (act) leaky_relu_inplace(r.tape.f2, slope);

  r.tape.blocks.resize(model.n_blocks());
  Tensor<T> features = r.tape.f2;
  for (std::size_t i = 0; i < model.n_blocks(); ++i) {
    features = rfr_forward(model.blocks[i], features, &r.tape.blocks[i]);
  }
  r.tape.features = std::move(features);
  r.output = add(i_ilr, model.recon.forward(r.tape.features));
  return r;
}

/// Forward pass without keeping activations.
template <std::floating_point T>
Tensor<T> infer(const SrfrnModel<T>& model, const Tensor<T>& i_ilr) {
  detail::require_model_input(i_ilr);
  const T slope = T(kLeakySlope);
  const bool act = model.options().feature_activation;
  Tensor<T> f = model.feat1.forward(i_ilr);
  if (act) leaky_relu_inplace(f, slope);
  f = model.feat2.forward(f);
  if (act) leaky_relu_inplace(f, slope);
  for (const auto& block : model.blocks) f = rfr_forward(block, f);
  Tensor<T> out = model.recon.forward(f);
  add_inplace(out, i_ilr);
  return out;
}

/// Accumulates parameter gradients into every layer and returns dL/dI_ILR.
/// The global skip passes `grad_output` straight to the input in addition to
/// the path through the convolution chain.
template <std::floating_point T>
Tensor<T> backward(SrfrnModel<T>& model, const Tape<T>& tape, const Tensor<T>& grad_output) {
  if (tape.input.empty() || tape.blocks.size() != model.n_blocks()) {
    throw Error(ErrorCode::usage, "backward: no forward tape for this model");
  }
  require_same_shape(tape.input, grad_output, "backward");
  const T slope = T(kLeakySlope);
  const bool act = model.options().feature_activation;

  Tensor<T> g = model.recon.backward(tape.features, grad_output);
  for (std::size_t i = model.n_blocks(); i-- > 0;) {
    auto& block = model.blocks[i];
    const auto& bt = tape.blocks[i];
    // out = a3 + a1: the same cotangent flows into both branches.
    Tensor<T> g_a1 = g;
    Tensor<T> g_z = leaky_relu_backward(bt.act3, g, block.slope);
    Tensor<T> g_a2 = block.layers[2].backward(bt.act2, g_z);
    g_z = leaky_relu_backward(bt.act2, g_a2, block.slope);
    add_inplace(g_a1, block.layers[1].backward(bt.act1, g_z));
    g_z = leaky_relu_backward(bt.act1, g_a1, block.slope);
    g = block.layers[0].backward(bt.input, g_z);
  }
  if (act) g = leaky_relu_backward(tape.f2, g, slope);
  g = model.feat2.backward(tape.f1, g);
  if (act) g = leaky_relu_backward(tape.f1, g, slope);
  g = model.feat1.backward(tape.input, g);
  add_inplace(g, grad_output);
  return g;
}

/// He-normal weights (std = sqrt(2 / (in_ch * 9))), zero biases.
template <std::floating_point T>
void init_params(SrfrnModel<T>& model, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  model.for_each_layer([&](ConvLayer<T>& layer) {
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / (static_cast<double>(layer.in_channels()) * 9.0)));
    for (T& w : layer.weights.data()) w = static_cast<T>(dist(rng));
    std::fill(layer.bias.begin(), layer.bias.end(), T{0});
  });
}

// ---------------------------------------------------------------------------
// Weight file: little-endian
//   "SRFRNW01" | u32 n_blocks | u32 precision (32|64)
//   per layer (feat1, feat2, blocks..., recon): u32 out | u32 in | weights | biases

inline constexpr std::array<char, 8> kWeightMagic{'S', 'R', 'F', 'R', 'N', 'W', '0', '1'};

namespace detail {

template <typename U>
void write_le(std::ostream& os, U value) {
  static_assert(std::is_trivially_copyable_v<U>);
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<char, sizeof(U)>>(value);
    std::reverse(bytes.begin(), bytes.end());
    os.write(bytes.data(), bytes.size());
  } else {
    os.write(reinterpret_cast<const char*>(&value), sizeof(U));
  }
}

template <typename U>
U read_le(std::istream& is, const std::string& what) {
  std::array<char, sizeof(U)> bytes{};
  if (!is.read(bytes.data(), bytes.size())) {
    throw Error(ErrorCode::truncated, "file ended while reading " + what);
  }
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  return std::bit_cast<U>(bytes);
}

template <typename Stored, std::floating_point T>
void write_values(std::ostream& os, std::span<const T> values) {
  for (T v : values) write_le<Stored>(os, static_cast<Stored>(v));
}

template <typename Stored, std::floating_point T>
void read_values(std::istream& is, std::span<T> values, const std::string& what) {
  for (T& v : values) v = static_cast<T>(read_le<Stored>(is, what));
}

template <std::floating_point T>
void write_layer_values(std::ostream& os, const ConvLayer<T>& layer, std::span<const T> w, std::span<const T> b) {
  write_le<std::uint32_t>(os, static_cast<std::uint32_t>(layer.out_channels()));
  write_le<std::uint32_t>(os, static_cast<std::uint32_t>(layer.in_channels()));
  write_values<T>(os, w);
  write_values<T>(os, b);
}

inline std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error(ErrorCode::io, "cannot open " + path.string() + " for writing");
  return os;
}

inline std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorCode::io, "cannot open " + path.string());
  return is;
}

inline void expect_eof(std::istream& is, const std::string& what) {
  if (is.peek() != std::char_traits<char>::eof()) {
    throw Error(ErrorCode::format, what + ": trailing bytes after last layer");
  }
}

}  // namespace detail

struct WeightHeader {
  std::uint32_t n_blocks = 0;
  Precision precision = Precision::standard;
};

inline WeightHeader read_weight_header(std::istream& is, const std::array<char, 8>& magic, const std::string& what) {
  std::array<char, 8> got{};
  if (!is.read(got.data(), got.size())) throw Error(ErrorCode::truncated, what + ": missing header");
  if (got != magic) throw Error(ErrorCode::format, what + ": bad magic bytes");
  WeightHeader h;
  h.n_blocks = detail::read_le<std::uint32_t>(is, "n_blocks");
  const auto tag = detail::read_le<std::uint32_t>(is, "precision tag");
  if (tag != 32 && tag != 64) throw Error(ErrorCode::format, what + ": unknown precision tag " + std::to_string(tag));
  if (h.n_blocks == 0 || h.n_blocks > 1024) {
    throw Error(ErrorCode::format, what + ": implausible n_blocks " + std::to_string(h.n_blocks));
  }
  h.precision = static_cast<Precision>(tag);
  return h;
}

namespace detail {

// Byte length of a weight (values_per_param = 1) or moment (2) file.
inline std::uintmax_t expected_file_size(const WeightHeader& h, std::size_t values_per_param) {
  const std::uintmax_t width = h.precision == Precision::standard ? 4 : 8;
  const std::uintmax_t layers = 3 + 3 * static_cast<std::uintmax_t>(h.n_blocks);
  return 16 + layers * 8 + param_count(h.n_blocks) * values_per_param * width;
}

inline void check_file_size(const std::filesystem::path& path, const WeightHeader& h, std::size_t values_per_param) {
  const std::uintmax_t want = expected_file_size(h, values_per_param);
  const std::uintmax_t have = std::filesystem::file_size(path);
  if (have < want) {
    throw Error(ErrorCode::truncated, path.string() + ": header describes " + std::to_string(h.n_blocks) +
                                          " blocks (" + std::to_string(want) + " bytes) but file has " +
                                          std::to_string(have) + " bytes");
  }
  if (have > want) throw Error(ErrorCode::format, path.string() + ": trailing bytes after last layer");
}

}  // namespace detail

template <std::floating_point T>
void save_weights(const SrfrnModel<T>& model, const std::filesystem::path& path) {
  auto os = detail::open_out(path);
  os.write(kWeightMagic.data(), kWeightMagic.size());
  detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(model.n_blocks()));
  detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(precision_of<T>()));
  model.for_each_layer([&](const ConvLayer<T>& l) {
    detail::write_layer_values(os, l, l.weights.data(), std::span<const T>(l.bias));
  });
  if (!os) throw Error(ErrorCode::io, "write failed for " + path.string());
}

namespace detail {

template <typename Stored, std::floating_point T>
void read_layers(std::istream& is, SrfrnModel<T>& model, bool moments) {
  std::size_t index = 0;
  model.for_each_layer([&](ConvLayer<T>& l) {
    const std::string what = "layer " + std::to_string(index++);
    const auto out = read_le<std::uint32_t>(is, what + " header");
    const auto in = read_le<std::uint32_t>(is, what + " header");
    if (out != l.out_channels() || in != l.in_channels()) {
      throw Error(ErrorCode::format, what + ": expected " + std::to_string(l.out_channels()) + "x" +
                                         std::to_string(l.in_channels()) + " got " + std::to_string(out) + "x" +
                                         std::to_string(in));
    }
    if (moments) {
      read_values<Stored>(is, std::span<T>(l.m_weights), what + " first moments");
      read_values<Stored>(is, std::span<T>(l.m_bias), what + " first moments");
      read_values<Stored>(is, std::span<T>(l.v_weights), what + " second moments");
      read_values<Stored>(is, std::span<T>(l.v_bias), what + " second moments");
    } else {
      read_values<Stored>(is, l.weights.data(), what + " weights");
      read_values<Stored>(is, std::span<T>(l.bias), what + " biases");
    }
  });
}

}  // namespace detail

/// Loads a weight file; values are converted if the file precision differs from T.
template <std::floating_point T>
SrfrnModel<T> load_weights(const std::filesystem::path& path, ModelOptions options = {}) {
  auto is = detail::open_in(path);
  const WeightHeader h = read_weight_header(is, kWeightMagic, path.string());
  detail::check_file_size(path, h, 1);
  SrfrnModel<T> model(h.n_blocks, options);
  if (h.precision == Precision::standard) {
    detail::read_layers<float>(is, model, false);
  } else {
    detail::read_layers<double>(is, model, false);
  }
  detail::expect_eof(is, path.string());
  return model;
}

// Optimizer moments use the same record layout under magic "SRFRNA01":
// per layer u32 out | u32 in | m_w | m_b | v_w | v_b.
inline constexpr std::array<char, 8> kMomentMagic{'S', 'R', 'F', 'R', 'N', 'A', '0', '1'};

template <std::floating_point T>
void save_moments(const SrfrnModel<T>& model, const std::filesystem::path& path) {
  auto os = detail::open_out(path);
  os.write(kMomentMagic.data(), kMomentMagic.size());
  detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(model.n_blocks()));
  detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(precision_of<T>()));
  model.for_each_layer([&](const ConvLayer<T>& l) {
    detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(l.out_channels()));
    detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(l.in_channels()));
    detail::write_values<T>(os, std::span<const T>(l.m_weights));
    detail::write_values<T>(os, std::span<const T>(l.m_bias));
    detail::write_values<T>(os, std::span<const T>(l.v_weights));
    detail::write_values<T>(os, std::span<const T>(l.v_bias));
  });
  if (!os) throw Error(ErrorCode::io, "write failed for " + path.string());
}

template <std::floating_point T>
void load_moments(SrfrnModel<T>& model, const std::filesystem::path& path) {
  auto is = detail::open_in(path);
  const WeightHeader h = read_weight_header(is, kMomentMagic, path.string());
  detail::check_file_size(path, h, 2);
  if (h.n_blocks != model.n_blocks()) {
    throw Error(ErrorCode::format, path.string() + ": moment file has " + std::to_string(h.n_blocks) +
                                       " blocks, model has " + std::to_string(model.n_blocks()));
  }
  if (h.precision == Precision::standard) {
    detail::read_layers<float>(is, model, true);
  } else {
    detail::read_layers<double>(is, model, true);
  }
  detail::expect_eof(is, path.string());
}

template <std::floating_point U, std::floating_point T>
SrfrnModel<U> convert(const SrfrnModel<T>& src) {
  SrfrnModel<U> dst(src.n_blocks(), src.options());
  std::vector<const ConvLayer<T>*> from;
  src.for_each_layer([&](const ConvLayer<T>& l) { from.push_back(&l); });
  std::size_t i = 0;
  dst.for_each_layer([&](ConvLayer<U>& l) {
    l.weights = from[i]->weights.template cast<U>();
    l.bias.assign(from[i]->bias.begin(), from[i]->bias.end());
    ++i;
  });
  return dst;
}

}  // namespace srfrn
