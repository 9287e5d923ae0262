#pragma once

// Dataset manifests, dihedral augmentation, patch extraction, LR/ILR pair
// synthesis and batching.

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "srfrn/imaging.hpp"
#include "srfrn/model.hpp"
#include "srfrn/optim.hpp"

namespace srfrn {

// ---------------------------------------------------------------------------
// Manifest: one "path<TAB>split<TAB>dataset" record per line.

enum class Split { train, val, test };

inline std::string_view to_string(Split s) noexcept {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

inline Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw Error(ErrorCode::format, "manifest: unknown split '" + s + "'");
}

struct ManifestEntry {
  std::filesystem::path path;
  Split split = Split::train;
  std::string dataset;
};

struct Manifest {
  std::vector<ManifestEntry> entries;
  std::size_t scale = 2;

  std::vector<ManifestEntry> select(Split s) const {
    std::vector<ManifestEntry> out;
    std::copy_if(entries.begin(), entries.end(), std::back_inserter(out),
                 [s](const ManifestEntry& e) { return e.split == s; });
    return out;
  }
};

/// Parses manifest text. Relative paths are resolved against `base_dir`.
/// Blank lines and lines starting with '#' are ignored.
inline Manifest parse_manifest(std::istream& is, const std::filesystem::path& base_dir, std::size_t scale) {
  Manifest m;
  m.scale = scale;
  std::set<std::string> seen;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, '\t')) fields.push_back(f);
    if (fields.size() != 3) {
      throw Error(ErrorCode::format, "manifest line " + std::to_string(lineno) + ": expected 3 tab-separated fields");
    }
    ManifestEntry e;
    e.path = std::filesystem::path(fields[0]);
    if (e.path.is_relative()) e.path = base_dir / e.path;
    e.path = e.path.lexically_normal();
    e.split = parse_split(fields[1]);
    e.dataset = fields[2];
    if (!seen.insert(e.path.string()).second) {
      throw Error(ErrorCode::format, "manifest line " + std::to_string(lineno) + ": duplicate path " + e.path.string());
    }
    m.entries.push_back(std::move(e));
  }
  return m;
}

inline Manifest load_manifest(const std::filesystem::path& path, std::size_t scale) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorCode::io, "cannot open manifest " + path.string());
  return parse_manifest(is, path.parent_path(), scale);
}

inline void write_manifest(const Manifest& m, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw Error(ErrorCode::io, "cannot write manifest " + path.string());
  for (const auto& e : m.entries) os << e.path.string() << '\t' << to_string(e.split) << '\t' << e.dataset << '\n';
}

/// Moves a seeded `fraction` of the train entries to val when the manifest has no val entries.
inline Manifest with_default_val_split(Manifest m, double fraction, std::uint64_t seed) {
  if (!m.select(Split::val).empty()) return m;
  std::vector<std::size_t> train;
  for (std::size_t i = 0; i < m.entries.size(); ++i)
    if (m.entries[i].split == Split::train) train.push_back(i);
  if (train.size() < 2) return m;
  std::mt19937_64 rng(seed);
  for (std::size_t i = train.size(); i > 1; --i) std::swap(train[i - 1], train[rng() % i]);
  const auto n_val = std::max<std::size_t>(1, static_cast<std::size_t>(fraction * static_cast<double>(train.size())));
  for (std::size_t i = 0; i < n_val; ++i) m.entries[train[i]].split = Split::val;
  return m;
}

// ---------------------------------------------------------------------------
// Dihedral augmentation. Variant v = rotate(v % 4 quarter turns CCW) after an
// optional horizontal flip (v >= 4).

inline Plane dihedral(const Plane& p, int variant) {
  if (variant < 0 || variant > 7) throw Error(ErrorCode::usage, "dihedral: variant must be in 0..7");
  const int rot = variant % 4;
  const bool flip = variant >= 4;
  const std::size_t w = p.width, h = p.height;
  const bool swap = rot % 2 == 1;
  Plane out(swap ? h : w, swap ? w : h);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t fx = flip ? w - 1 - x : x;
      std::size_t ox = 0, oy = 0;
      switch (rot) {
        case 0: ox = fx; oy = y; break;
        case 1: ox = y; oy = w - 1 - fx; break;
        case 2: ox = w - 1 - fx; oy = h - 1 - y; break;
        default: ox = h - 1 - y; oy = fx; break;
      }
      out.at(ox, oy) = p.at(x, y);
    }
  }
  return out;
}

/// Variant that undoes `variant`. Rotations invert to the opposite turn,
/// reflections are involutions.
constexpr int inverse_variant(int variant) noexcept { return variant >= 4 ? variant : (4 - variant) % 4; }

inline std::array<Plane, 8> augment_x8(const Plane& p) {
  std::array<Plane, 8> out;
  for (int v = 0; v < 8; ++v) out[v] = dihedral(p, v);
  return out;
}

// ---------------------------------------------------------------------------
// Patches and pairs

struct Patch {
  Plane plane;
  std::size_t y = 0;
  std::size_t x = 0;
};

inline std::size_t patch_count(std::size_t height, std::size_t width, std::size_t m, std::size_t stride) {
  if (m > height || m > width) return 0;
  return ((height - m) / stride + 1) * ((width - m) / stride + 1);
}

/// Grid-aligned m x m patches with top-left corners at multiples of `stride`.
inline std::vector<Patch> extract_patches(const Plane& hr, std::size_t m, std::size_t stride) {
  if (m == 0 || stride == 0) throw Error(ErrorCode::usage, "extract_patches: m and stride must be positive");
  if (m > hr.height || m > hr.width) {
    throw Error(ErrorCode::shape, "extract_patches: patch " + std::to_string(m) + " exceeds image " +
                                      std::to_string(hr.width) + "x" + std::to_string(hr.height));
  }
  std::vector<Patch> out;
  out.reserve(patch_count(hr.height, hr.width, m, stride));
  for (std::size_t y = 0; y + m <= hr.height; y += stride) {
    for (std::size_t x = 0; x + m <= hr.width; x += stride) out.push_back({crop(hr, x, y, m, m), y, x});
  }
  return out;
}

struct PatchSource {
  std::string image_id;
  std::size_t y = 0;
  std::size_t x = 0;
  int variant = 0;

  friend bool operator==(const PatchSource&, const PatchSource&) = default;
};

struct PatchPair {
  Plane ilr;  // bicubic-upsampled LR, same size as hr
  Plane hr;
  PatchSource source;
};

/// Degrades an HR patch by bicubic downscaling by `scale`, then upsamples it
/// back to the HR size.
inline PatchPair make_pair(const Plane& hr_patch, std::size_t scale, PatchSource source = {},
                           const ResizeOptions& opt = {}) {
  if (scale == 0 || hr_patch.width % scale != 0 || hr_patch.height % scale != 0) {
    throw Error(ErrorCode::shape, "make_pair: patch " + std::to_string(hr_patch.width) + "x" +
                                      std::to_string(hr_patch.height) + " not divisible by scale " +
                                      std::to_string(scale));
  }
  const Plane lr = bicubic_resize(hr_patch, hr_patch.width / scale, hr_patch.height / scale, opt);
  return {bicubic_resize(lr, hr_patch.width, hr_patch.height), hr_patch, std::move(source)};
}

struct PairOptions {
  std::size_t scale = 2;
  std::size_t patch = 48;
  std::size_t stride = 48;
  bool augment = true;
  ResizeOptions resize{};
};

/// augment_x8 -> extract_patches -> make_pair for one luminance plane.
inline std::vector<PatchPair> pairs_from_plane(const Plane& y, const std::string& image_id, const PairOptions& opt) {
  std::vector<PatchPair> out;
  const int variants = opt.augment ? 8 : 1;
  for (int v = 0; v < variants; ++v) {
    const Plane aug = dihedral(y, v);
    if (aug.width < opt.patch || aug.height < opt.patch) continue;
    for (auto& p : extract_patches(aug, opt.patch, opt.stride)) {
      out.push_back(make_pair(p.plane, opt.scale, {image_id, p.y, p.x, v}, opt.resize));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Batching

template <std::floating_point T = float>
Tensor<T> pack_planes(const std::vector<const Plane*>& planes, double scale = 1.0 / 255.0) {
  if (planes.empty()) throw Error(ErrorCode::usage, "pack_planes: nothing to pack");
  const std::size_t w = planes.front()->width, h = planes.front()->height;
  Tensor<T> t(Shape{planes.size(), 1, h, w});
  for (std::size_t b = 0; b < planes.size(); ++b) {
    if (planes[b]->width != w || planes[b]->height != h) throw Error(ErrorCode::shape, "pack_planes: mixed sizes");
    auto dst = t.image(b);
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(planes[b]->samples[i] * scale);
  }
  return t;
}

template <std::floating_point T>
Plane unpack_plane(const Tensor<T>& t, std::size_t b = 0, double scale = 255.0) {
  const Shape& s = t.shape();
  if (s.channels != 1) throw ShapeError("channels", "unpack_plane: tensor must be single-channel");
  Plane p(s.width, s.height);
  auto src = t.image(b);
  for (std::size_t i = 0; i < p.size(); ++i) p.samples[i] = static_cast<double>(src[i]) * scale;
  return p;
}

/// Seeded per-epoch shuffling batcher over a fixed list of pairs; the last
/// batch may be short.
template <std::floating_point T = float>
class BatchIterator {
 public:
  BatchIterator(const std::vector<PatchPair>& pairs, std::size_t batch_size, std::uint64_t seed)
      : pairs_(&pairs), batch_size_(batch_size), seed_(seed) {
    if (pairs.empty()) throw Error(ErrorCode::data, "batch_iter: no pairs");
    if (batch_size == 0) throw Error(ErrorCode::usage, "batch_iter: batch size must be positive");
  }

  std::size_t batch_count() const noexcept { return (pairs_->size() + batch_size_ - 1) / batch_size_; }
  std::size_t batch_size() const noexcept { return batch_size_; }

  std::vector<std::size_t> order(std::size_t epoch) const {
    std::vector<std::size_t> idx(pairs_->size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::mt19937_64 rng(seed_ + 0x9E3779B97F4A7C15ull * (epoch + 1));
    for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng() % i]);
    return idx;
  }

  /// Indices of batch `i` under `ord`.
  std::vector<std::size_t> members(const std::vector<std::size_t>& ord, std::size_t i) const {
    const std::size_t begin = i * batch_size_;
    const std::size_t end = std::min(begin + batch_size_, ord.size());
    return {ord.begin() + static_cast<std::ptrdiff_t>(begin), ord.begin() + static_cast<std::ptrdiff_t>(end)};
  }

  Batch<T> batch(const std::vector<std::size_t>& ord, std::size_t i) const {
    std::vector<const Plane*> ilr, hr;
    for (std::size_t k : members(ord, i)) {
      ilr.push_back(&(*pairs_)[k].ilr);
      hr.push_back(&(*pairs_)[k].hr);
    }
    return {pack_planes<T>(ilr), pack_planes<T>(hr)};
  }

 private:
  const std::vector<PatchPair>* pairs_;
  std::size_t batch_size_;
  std::uint64_t seed_;
};

// ---------------------------------------------------------------------------
// Patch cache: {image}_{variant}_{y}_{x}.pair holding u32 m, then the ILR and
// HR planes as little-endian f32 (m*m each).

inline std::string pair_filename(const PatchSource& s) {
  return s.image_id + "_" + std::to_string(s.variant) + "_" + std::to_string(s.y) + "_" + std::to_string(s.x) +
         ".pair";
}

inline void write_pair(const PatchPair& p, const std::filesystem::path& dir) {
  if (p.hr.width != p.hr.height || p.ilr.width != p.hr.width || p.ilr.height != p.hr.height) {
    throw Error(ErrorCode::shape, "write_pair: pair planes must be equal squares");
  }
  auto os = detail::open_out(dir / pair_filename(p.source));
  detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(p.hr.width));
  for (const Plane* plane : {&p.ilr, &p.hr})
    for (double v : plane->samples) detail::write_le<float>(os, static_cast<float>(v));
  if (!os) throw Error(ErrorCode::io, "write failed in " + dir.string());
}

inline PatchSource parse_pair_filename(const std::string& stem) {
  // image ids may contain '_', so parse the three numeric fields from the right
  PatchSource s;
  std::vector<std::string> parts;
  std::string rest = stem;
  for (int i = 0; i < 3; ++i) {
    const auto pos = rest.rfind('_');
    if (pos == std::string::npos) throw Error(ErrorCode::format, "bad pair file name " + stem);
    parts.push_back(rest.substr(pos + 1));
    rest = rest.substr(0, pos);
  }
  try {
    s.x = std::stoul(parts[0]);
    s.y = std::stoul(parts[1]);
    s.variant = std::stoi(parts[2]);
  } catch (const std::exception&) {
    throw Error(ErrorCode::format, "bad pair file name " + stem);
  }
  s.image_id = rest;
  return s;
}

inline PatchPair read_pair(const std::filesystem::path& file) {
  auto is = detail::open_in(file);
  const auto m = detail::read_le<std::uint32_t>(is, file.string() + " header");
  if (m == 0 || m > 4096) throw Error(ErrorCode::format, file.string() + ": implausible patch size");
  PatchPair p{Plane(m, m), Plane(m, m), parse_pair_filename(file.stem().string())};
  for (Plane* plane : {&p.ilr, &p.hr})
    for (double& v : plane->samples) v = detail::read_le<float>(is, file.string());
  detail::expect_eof(is, file.string());
  return p;
}

/// Loads every .pair file in `dir`, sorted by file name.
inline std::vector<PatchPair> read_pair_dir(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw Error(ErrorCode::io, "patch cache directory missing: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".pair") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<PatchPair> out;
  out.reserve(files.size());
  for (const auto& f : files) out.push_back(read_pair(f));
  return out;
}

}  // namespace srfrn
