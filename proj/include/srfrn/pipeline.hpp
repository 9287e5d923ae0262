#pragma once

// End-to-end commands: patch cache preparation, training, single-image
// super-resolution, evaluation, latency benchmarking and block-count ablation.

#include <openssl/evp.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "srfrn/data.hpp"
#include "srfrn/imaging.hpp"
#include "srfrn/model.hpp"
#include "srfrn/optim.hpp"
#include "srfrn/png_io.hpp"

namespace srfrn {

// ---------------------------------------------------------------------------
// Configuration

struct RunConfig {
  std::size_t scale = 2;
  std::size_t n_blocks = 6;
  std::size_t epochs = 50;
  std::size_t batch_size = 24;
  double lr = 1e-3;
  std::size_t patience = 10;
  double lr_factor = 0.5;
  double min_lr = 1e-6;
  double rel_threshold = 1e-4;
  std::size_t patch = 48;
  std::size_t stride = 48;
  std::uint64_t seed = 1;
  bool deterministic = true;
  int shave = -1;  // pixels per border for metrics; -1 means "equal to scale"
  bool augment = true;
  bool antialias = true;  // widen the kernel when synthesizing LR images
  double val_fraction = 0.05;
  bool feature_activation = false;
  std::size_t max_steps = 0;     // 0: no cap on optimizer steps
  double time_budget_s = 0.0;    // 0: no wall-clock cap on training
  bool resume = false;
  std::filesystem::path manifest;
  std::filesystem::path cache_dir = "cache";
  std::filesystem::path out_dir = "run";
  std::filesystem::path weights;  // empty: <out_dir>/best.srfrn

  std::size_t shave_border() const { return shave < 0 ? scale : static_cast<std::size_t>(shave); }
  std::filesystem::path weights_path() const { return weights.empty() ? out_dir / "best.srfrn" : weights; }
  ResizeOptions lr_resize() const { return ResizeOptions{antialias}; }

  void validate() const {
    if (scale < 1 || scale > 4) throw Error(ErrorCode::usage, "scale must be 1..4");
    if (n_blocks < 1 || n_blocks > 7) throw Error(ErrorCode::usage, "n_blocks must be 1..7");
    if (batch_size == 0) throw Error(ErrorCode::usage, "batch_size must be positive");
    if (patch == 0 || patch % scale != 0) {
      throw Error(ErrorCode::usage, "patch size " + std::to_string(patch) + " not divisible by scale");
    }
    if (stride == 0) throw Error(ErrorCode::usage, "stride must be positive");
    if (!(lr > 0.0)) throw Error(ErrorCode::usage, "lr must be positive");
    if (!(lr_factor > 0.0 && lr_factor < 1.0)) throw Error(ErrorCode::usage, "lr_factor must be in (0, 1)");
    if (patience == 0) throw Error(ErrorCode::usage, "patience must be positive");
    if (!(val_fraction >= 0.0 && val_fraction < 1.0)) throw Error(ErrorCode::usage, "val_fraction must be in [0, 1)");
  }
};

inline void to_json(nlohmann::json& j, const RunConfig& c) {
  j = nlohmann::json{{"scale", c.scale},
                     {"n_blocks", c.n_blocks},
                     {"epochs", c.epochs},
                     {"batch_size", c.batch_size},
                     {"lr", c.lr},
                     {"patience", c.patience},
                     {"lr_factor", c.lr_factor},
                     {"min_lr", c.min_lr},
                     {"rel_threshold", c.rel_threshold},
                     {"patch", c.patch},
                     {"stride", c.stride},
                     {"seed", c.seed},
                     {"deterministic", c.deterministic},
                     {"shave", c.shave_border()},
                     {"augment", c.augment},
                     {"antialias", c.antialias},
                     {"val_fraction", c.val_fraction},
                     {"feature_activation", c.feature_activation},
                     {"max_steps", c.max_steps},
                     {"time_budget_s", c.time_budget_s},
                     {"resume", c.resume},
                     {"manifest", c.manifest.string()},
                     {"cache_dir", c.cache_dir.string()},
                     {"out_dir", c.out_dir.string()},
                     {"weights", c.weights_path().string()}};
}

inline void from_json(const nlohmann::json& j, RunConfig& c) {
  const RunConfig d;
  c.scale = j.value("scale", d.scale);
  c.n_blocks = j.value("n_blocks", d.n_blocks);
  c.epochs = j.value("epochs", d.epochs);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.lr = j.value("lr", d.lr);
  c.patience = j.value("patience", d.patience);
  c.lr_factor = j.value("lr_factor", d.lr_factor);
  c.min_lr = j.value("min_lr", d.min_lr);
  c.rel_threshold = j.value("rel_threshold", d.rel_threshold);
  c.patch = j.value("patch", d.patch);
  c.stride = j.value("stride", d.stride);
  c.seed = j.value("seed", d.seed);
  c.deterministic = j.value("deterministic", d.deterministic);
  c.shave = j.value("shave", d.shave);
  c.augment = j.value("augment", d.augment);
  c.antialias = j.value("antialias", d.antialias);
  c.val_fraction = j.value("val_fraction", d.val_fraction);
  c.feature_activation = j.value("feature_activation", d.feature_activation);
  c.max_steps = j.value("max_steps", d.max_steps);
  c.time_budget_s = j.value("time_budget_s", d.time_budget_s);
  c.resume = j.value("resume", d.resume);
  c.manifest = j.value("manifest", std::string{});
  c.cache_dir = j.value("cache_dir", d.cache_dir.string());
  c.out_dir = j.value("out_dir", d.out_dir.string());
  c.weights = j.value("weights", std::string{});
}

// ---------------------------------------------------------------------------
// Digests and run headers

inline std::string sha1_hex(std::string_view bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (!EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha1(), nullptr)) {
    throw Error(ErrorCode::io, "sha1: digest failed");
  }
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
  return os.str();
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorCode::io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

/// Git blob object id of a file: sha1("blob <size>\0" + contents).
inline std::string git_blob_sha1(const std::filesystem::path& path) {
  const std::string body = read_text(path);
  std::string obj = "blob " + std::to_string(body.size());
  obj.push_back('\0');
  obj += body;
  return sha1_hex(obj);
}

/// Comment lines preceding every command's output rows.
inline void write_run_header(std::ostream& os, const std::string& command, const RunConfig& config,
                             const std::string& weights_digest) {
  os << "# srfrn " << command << '\n';
  os << "# config " << nlohmann::json(config).dump() << '\n';
  os << "# seed " << config.seed << '\n';
  os << "# weights_sha1 " << (weights_digest.empty() ? "none" : weights_digest) << '\n';
}

// Weights sidecar: <weights>.json with the scale and configuration that produced them.
inline std::filesystem::path sidecar_path(const std::filesystem::path& weights) {
  return std::filesystem::path(weights.string() + ".json");
}

inline void write_sidecar(const std::filesystem::path& weights, const RunConfig& config, std::size_t epoch) {
  std::ofstream os(sidecar_path(weights), std::ios::trunc);
  if (!os) throw Error(ErrorCode::io, "cannot write " + sidecar_path(weights).string());
  os << nlohmann::json{{"scale", config.scale}, {"epoch", epoch}, {"config", config}}.dump(2) << '\n';
}

inline std::optional<nlohmann::json> read_sidecar(const std::filesystem::path& weights) {
  const auto p = sidecar_path(weights);
  if (!std::filesystem::exists(p)) return std::nullopt;
  try {
    return nlohmann::json::parse(read_text(p));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::format, p.string() + ": " + e.what());
  }
}

/// Loads weights for inference, checking the sidecar's scale when present.
inline SrfrnModel<float> load_for_scale(const std::filesystem::path& weights, std::size_t scale,
                                        std::ostream* warn = nullptr) {
  ModelOptions options;
  if (const auto side = read_sidecar(weights)) {
    const auto trained = side->value("scale", std::size_t{0});
    if (trained != scale) {
      throw Error(ErrorCode::usage, weights.string() + " was trained for x" + std::to_string(trained) +
                                        ", requested x" + std::to_string(scale));
    }
    if (side->contains("config")) options.feature_activation = (*side)["config"].value("feature_activation", false);
  } else if (warn != nullptr) {
    *warn << "warning: no " << sidecar_path(weights).filename().string() << ", scale not verified\n";
  }
  return load_weights<float>(weights, options);
}

// ---------------------------------------------------------------------------
// Helpers

namespace detail {

/// Runs f(i) for i in [0, n) on up to hardware_concurrency threads; results keep index order.
template <typename R, typename F>
std::vector<R> parallel_map(std::size_t n, F&& f) {
  std::vector<R> out(n);
  std::vector<std::exception_ptr> errors(n);
  const std::size_t workers = std::min<std::size_t>(n, std::max(1u, std::thread::hardware_concurrency()));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) out[i] = f(i);
    return out;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          out[i] = f(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

inline double ms_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

inline std::string fmt(double v, int precision = 4) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return "nan";
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << v;
  return os.str();
}

inline void clear_pairs(const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".pair") std::filesystem::remove(e.path());
  }
}

}  // namespace detail

/// Network prediction for an ILR plane in [0, 255]; unclipped.
inline Plane predict_plane(const SrfrnModel<float>& model, const Plane& ilr) {
  return unpack_plane(infer(model, pack_planes<float>({&ilr})));
}

/// Bicubic upscale by `scale`, then the network.
inline Plane super_resolve_y(const SrfrnModel<float>& model, const Plane& y_lr, std::size_t scale) {
  return predict_plane(model, bicubic_resize(y_lr, y_lr.width * scale, y_lr.height * scale));
}

/// SHA-1 over the sorted file names and contents of every .pair file in `dir`.
inline std::string cache_digest(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".pair") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::string all;
  for (const auto& f : files) all += f.filename().string() + '\n' + read_text(f);
  return sha1_hex(all);
}

// ---------------------------------------------------------------------------
// prepare

struct PrepareReport {
  std::size_t images_in = 0;
  std::size_t augmented = 0;
  std::size_t train_patches = 0;
  std::size_t val_patches = 0;
  std::vector<std::string> skipped;
  std::string train_digest;
  std::string val_digest;
};

/// Manifest train/val images -> augment_x8 -> extract_patches -> make_pair, written to
/// <cache_dir>/train and <cache_dir>/val. Validation images are not augmented.
inline PrepareReport cmd_prepare(const RunConfig& config, std::ostream& out) {
  config.validate();
  const Manifest manifest =
      with_default_val_split(load_manifest(config.manifest, config.scale), config.val_fraction, config.seed);
  const auto train = manifest.select(Split::train);
  const auto val = manifest.select(Split::val);
  if (train.empty()) throw Error(ErrorCode::data, "manifest " + config.manifest.string() + " has no train entries");

  write_run_header(out, "prepare", config, "");
  const auto train_dir = config.cache_dir / "train", val_dir = config.cache_dir / "val";
  detail::clear_pairs(train_dir);
  detail::clear_pairs(val_dir);

  PrepareReport r;
  std::map<std::string, std::size_t> ids;
  std::size_t failed = 0;
  auto process = [&](const ManifestEntry& e, bool is_train) {
    ++r.images_in;
    Plane y;
    try {
      y = rgb_to_y(png_load(e.path));
    } catch (const Error& err) {
      r.skipped.push_back(e.path.string());
      out << "# skipped " << e.path.string() << ": " << err.what() << '\n';
      ++failed;
      return;
    }
    std::string id = e.path.stem().string();
    if (const auto n = ids[id]++; n > 0) id += "-" + std::to_string(n);
    PairOptions opt{config.scale, config.patch, config.stride, is_train && config.augment, config.lr_resize()};
    if (is_train) r.augmented += opt.augment ? 8 : 1;
    const auto pairs = pairs_from_plane(y, id, opt);
    for (const auto& p : pairs) write_pair(p, is_train ? train_dir : val_dir);
    (is_train ? r.train_patches : r.val_patches) += pairs.size();
  };
  for (const auto& e : train) process(e, true);
  for (const auto& e : val) process(e, false);
  if (failed == r.images_in) throw Error(ErrorCode::data, "no readable images in " + config.manifest.string());

  r.train_digest = cache_digest(train_dir);
  r.val_digest = cache_digest(val_dir);
  out << "images_in,augmented_images,train_patches,val_patches,skipped,train_sha1,val_sha1\n";
  out << r.images_in << ',' << r.augmented << ',' << r.train_patches << ',' << r.val_patches << ','
      << r.skipped.size() << ',' << r.train_digest << ',' << r.val_digest << '\n';
  return r;
}

// ---------------------------------------------------------------------------
// train

struct TrainReport {
  std::size_t epochs_run = 0;
  std::size_t steps = 0;
  double best_val = std::numeric_limits<double>::infinity();
  std::size_t best_epoch = 0;
  std::vector<double> step_losses;
  std::string weights_digest;
};

namespace detail {

struct Checkpoint {
  std::filesystem::path weights, moments, state;
};

inline Checkpoint checkpoint_paths(const RunConfig& c) {
  return {c.out_dir / "last.srfrn", c.out_dir / "last.moments", c.out_dir / "last.json"};
}

inline std::vector<Batch<float>> fixed_batches(const std::vector<PatchPair>& pairs, std::size_t batch_size) {
  std::vector<Batch<float>> out;
  for (std::size_t b = 0; b < pairs.size(); b += batch_size) {
    std::vector<const Plane*> ilr, hr;
    for (std::size_t i = b; i < std::min(b + batch_size, pairs.size()); ++i) {
      ilr.push_back(&pairs[i].ilr);
      hr.push_back(&pairs[i].hr);
    }
    out.push_back({pack_planes<float>(ilr), pack_planes<float>(hr)});
  }
  return out;
}

}  // namespace detail

/// Mean L1 (in [0, 1] units) of `model` over `pairs`.
inline double validation_loss(const SrfrnModel<float>& model, const std::vector<Batch<float>>& batches) {
  return evaluate_l1<float>(model, batches.size(), [&](std::size_t i) { return batches[i]; });
}

/// Trains on <cache_dir>/train with validation on <cache_dir>/val. Writes
/// train.csv (per epoch), steps.csv (per optimizer step), the best-validation
/// weights with their sidecar, and a resumable last.* checkpoint.
inline TrainReport cmd_train(const RunConfig& config, std::ostream& out) {
  config.validate();
  const auto t0 = std::chrono::steady_clock::now();
  const auto train_pairs = read_pair_dir(config.cache_dir / "train");
  const auto val_pairs = read_pair_dir(config.cache_dir / "val");
  if (train_pairs.empty()) throw Error(ErrorCode::data, "no training pairs in " + config.cache_dir.string());
  if (val_pairs.empty()) throw Error(ErrorCode::data, "no validation pairs in " + config.cache_dir.string());
  std::filesystem::create_directories(config.out_dir);

  const auto ck = detail::checkpoint_paths(config);
  ModelOptions options;
  options.feature_activation = config.feature_activation;
  SrfrnModel<float> model(config.n_blocks, options);
  Adam opt(AdamConfig{config.lr});
  PlateauSchedule plateau;
  plateau.patience = config.patience;
  plateau.factor = config.lr_factor;
  plateau.min_lr = config.min_lr;
  plateau.rel_threshold = config.rel_threshold;
  plateau.lr = config.lr;
  std::size_t start_epoch = 0;
  TrainReport r;
  if (config.resume) {
    if (!std::filesystem::exists(ck.state)) throw Error(ErrorCode::io, "no checkpoint in " + config.out_dir.string());
    model = load_weights<float>(ck.weights, options);
    if (model.n_blocks() != config.n_blocks) throw Error(ErrorCode::usage, "checkpoint n_blocks differs from config");
    load_moments(model, ck.moments);
    nlohmann::json s;
    try {
      s = nlohmann::json::parse(read_text(ck.state));
      start_epoch = s.at("next_epoch");
      opt.set_steps(s.at("t"));
      plateau.lr = s.at("lr");
      plateau.best_val = s.at("plateau_best").is_null() ? plateau.best_val : s.at("plateau_best").get<double>();
      plateau.stale_count = s.at("stale_count");
      r.best_val = s.at("best_val").is_null() ? r.best_val : s.at("best_val").get<double>();
      r.best_epoch = s.at("best_epoch");
      r.steps = s.at("steps");
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::format, ck.state.string() + ": " + e.what());
    }
    opt.set_lr(plateau.lr);
  } else {
    init_params(model, config.seed);
  }

  const auto mode = config.resume ? std::ios::app : std::ios::trunc;
  std::ofstream csv(config.out_dir / "train.csv", mode), steps_csv(config.out_dir / "steps.csv", mode);
  if (!csv || !steps_csv) throw Error(ErrorCode::io, "cannot write logs in " + config.out_dir.string());
  {
    const auto tmp = config.out_dir / "init.srfrn";
    save_weights(model, tmp);
    const std::string digest = git_blob_sha1(tmp);
    std::filesystem::remove(tmp);
    for (std::ostream* os : {&out, static_cast<std::ostream*>(&csv), static_cast<std::ostream*>(&steps_csv)}) {
      write_run_header(*os, "train", config, digest);
    }
  }
  csv << "epoch,train_loss,val_loss,lr,wall_seconds\n";
  steps_csv << "step,epoch,loss\n";
  out << "epoch,train_loss,val_loss,lr,wall_seconds\n";

  BatchIterator<float> batches(train_pairs, config.batch_size, config.seed);
  const auto val_batches = detail::fixed_batches(val_pairs, config.batch_size);
  TrainOptions topt;
  topt.deterministic = config.deterministic;

  for (std::size_t epoch = start_epoch; epoch < config.epochs; ++epoch) {
    if (config.max_steps != 0 && r.steps >= config.max_steps) break;
    if (config.time_budget_s > 0.0 && detail::ms_since(t0) / 1000.0 >= config.time_budget_s) break;
    std::size_t count = batches.batch_count();
    if (config.max_steps != 0) count = std::min(count, config.max_steps - r.steps);
    const auto order = batches.order(epoch);
    topt.on_step = [&](std::size_t, double loss) {
      steps_csv << ++r.steps << ',' << epoch << ',' << std::setprecision(9) << loss << '\n';
      r.step_losses.push_back(loss);
    };
    const double lr_used = opt.lr();
    const double train_loss = train_epoch<float>(
        model, count, [&](std::size_t i) { return batches.batch(order, i); }, opt, topt);
    const double val_loss = validation_loss(model, val_batches);
    opt.set_lr(plateau.update(val_loss));
    if (val_loss < r.best_val) {
      r.best_val = val_loss;
      r.best_epoch = epoch;
      save_weights(model, config.weights_path());
      write_sidecar(config.weights_path(), config, epoch);
    }
    const double wall = detail::ms_since(t0) / 1000.0;
    std::ostringstream row;
    row << epoch << ',' << std::setprecision(9) << train_loss << ',' << val_loss << ',' << lr_used << ','
        << std::setprecision(4) << wall << '\n';
    csv << row.str() << std::flush;
    steps_csv << std::flush;
    out << row.str() << std::flush;

    save_weights(model, ck.weights);
    save_moments(model, ck.moments);
    std::ofstream state(ck.state, std::ios::trunc);
    state << nlohmann::json{{"next_epoch", epoch + 1},
                            {"t", opt.steps()},
                            {"lr", opt.lr()},
                            {"plateau_best", plateau.best_val},
                            {"stale_count", plateau.stale_count},
                            {"best_val", r.best_val},
                            {"best_epoch", r.best_epoch},
                            {"steps", r.steps}}
                 .dump(2)
          << '\n';
    ++r.epochs_run;
  }
  if (r.epochs_run == 0 && !std::filesystem::exists(config.weights_path())) {
    throw Error(ErrorCode::usage, "no epochs run (epochs, max_steps or time budget is zero)");
  }
  r.weights_digest = git_blob_sha1(config.weights_path());
  out << "# best_epoch " << r.best_epoch << " best_val " << std::setprecision(9) << r.best_val << '\n';
  return r;
}

// ---------------------------------------------------------------------------
// sr

/// Upscales an LR image: Y through the network, Cb/Cr bicubic, clipped to 8 bits.
inline ImageU8 super_resolve_image(const SrfrnModel<float>& model, const ImageU8& lr, std::size_t scale) {
  const std::size_t w = lr.width * scale, h = lr.height * scale;
  if (lr.channels == 1) return plane_to_gray(super_resolve_y(model, rgb_to_y(lr), scale));
  const YCbCr ycc = rgb_to_ycbcr(lr);
  return ycbcr_to_rgb(super_resolve_y(model, ycc.y, scale), bicubic_resize(ycc.cb, w, h),
                      bicubic_resize(ycc.cr, w, h));
}

inline void cmd_sr(const RunConfig& config, const std::filesystem::path& input, const std::filesystem::path& output,
                   std::ostream& out) {
  const auto weights = config.weights_path();
  const auto model = load_for_scale(weights, config.scale, &out);
  write_run_header(out, "sr", config, git_blob_sha1(weights));
  const ImageU8 lr = png_load(input);
  const auto t0 = std::chrono::steady_clock::now();
  const ImageU8 sr = super_resolve_image(model, lr, config.scale);
  const double ms = detail::ms_since(t0);
  png_save(sr, output);
  out << "input,output,width,height,infer_ms\n"
      << input.string() << ',' << output.string() << ',' << sr.width << ',' << sr.height << ',' << detail::fmt(ms, 2)
      << '\n';
}

// ---------------------------------------------------------------------------
// eval

enum class EvalMode { network, bicubic, identity };

inline EvalMode parse_eval_mode(const std::string& s) {
  if (s == "network") return EvalMode::network;
  if (s == "bicubic") return EvalMode::bicubic;
  if (s == "identity") return EvalMode::identity;
  throw Error(ErrorCode::usage, "unknown eval mode '" + s + "' (network|bicubic|identity)");
}

struct EvalRow {
  std::string image;
  std::string dataset;
  double psnr_db = 0.0;
  double ssim = 0.0;
  double infer_ms = 0.0;
};

struct EvalReport {
  std::vector<EvalRow> rows;
  std::map<std::string, std::pair<double, double>> means;  // dataset -> (psnr, ssim)
};

/// Y planes of one evaluation image: ground truth after modcrop, and the ILR.
struct EvalPlanes {
  Plane hr;
  Plane ilr;
};

inline EvalPlanes eval_planes(const ImageU8& img, std::size_t scale, const ResizeOptions& down) {
  Plane hr = rgb_to_y(modcrop(img, scale));
  const Plane lr = bicubic_resize(hr, hr.width / scale, hr.height / scale, down);
  Plane ilr = bicubic_resize(lr, hr.width, hr.height);
  return {std::move(hr), std::move(ilr)};
}

/// Per-image PSNR/SSIM on the Y channel over the manifest's test entries.
/// Bicubic and identity modes never touch the weight file.
inline EvalReport cmd_eval(const RunConfig& config, EvalMode mode, std::ostream& out) {
  config.validate();
  const auto tests = load_manifest(config.manifest, config.scale).select(Split::test);
  if (tests.empty()) throw Error(ErrorCode::data, "manifest " + config.manifest.string() + " has no test entries");
  std::optional<SrfrnModel<float>> model;
  std::string digest;
  if (mode == EvalMode::network) {
    model = load_for_scale(config.weights_path(), config.scale, &out);
    digest = git_blob_sha1(config.weights_path());
  }
  write_run_header(out, std::string("eval ") + (mode == EvalMode::network ? "network"
                                                 : mode == EvalMode::bicubic ? "bicubic"
                                                                             : "identity"),
                   config, digest);
  const std::size_t shave_px = config.shave_border();

  EvalReport r;
  r.rows = detail::parallel_map<EvalRow>(tests.size(), [&](std::size_t i) {
    const auto& e = tests[i];
    const auto planes = eval_planes(png_load(e.path), config.scale, config.lr_resize());
    const auto t0 = std::chrono::steady_clock::now();
    Plane pred = mode == EvalMode::network ? predict_plane(*model, planes.ilr)
                 : mode == EvalMode::bicubic ? planes.ilr
                                             : planes.hr;
    const double ms = detail::ms_since(t0);
    pred = clip(std::move(pred));
    const Plane a = shave_px ? shave(pred, shave_px) : pred;
    const Plane b = shave_px ? shave(planes.hr, shave_px) : planes.hr;
    return EvalRow{e.path.stem().string(), e.dataset, psnr(a, b), ssim(a, b), ms};
  });

  out << "image,scale,psnr_db,ssim,infer_ms\n";
  std::map<std::string, std::vector<const EvalRow*>> by_set;
  for (const auto& row : r.rows) {
    out << row.image << ',' << config.scale << ',' << detail::fmt(row.psnr_db) << ',' << detail::fmt(row.ssim, 6)
        << ',' << detail::fmt(row.infer_ms, 2) << '\n';
    by_set[row.dataset].push_back(&row);
  }
  for (const auto& [set, rows] : by_set) {
    double p = 0.0, s = 0.0, t = 0.0;
    for (const auto* row : rows) {
      p += row->psnr_db;
      s += row->ssim;
      t += row->infer_ms;
    }
    const double n = static_cast<double>(rows.size());
    r.means[set] = {p / n, s / n};
    out << "mean:" << set << ',' << config.scale << ',' << detail::fmt(p / n) << ',' << detail::fmt(s / n, 6) << ','
        << detail::fmt(t / n, 2) << '\n';
  }
  return r;
}

// ---------------------------------------------------------------------------
// bench

struct BenchOptions {
  std::vector<std::size_t> scales{2, 3, 4};
  std::size_t out_width = 240;
  std::size_t out_height = 240;
  std::size_t repetitions = 10;
  std::size_t warmup = 2;
  std::filesystem::path image;  // optional source of content; synthetic when empty
};

struct BenchRow {
  std::size_t scale = 0;
  std::size_t n_blocks = 0;
  double mean_ms = 0.0;
  double median_ms = 0.0;
  double std_ms = std::numeric_limits<double>::quiet_NaN();  // only for repetitions > 1
  double e2e_mean_ms = 0.0;
};

struct TimingStats {
  double mean = 0.0, median = 0.0, std = std::numeric_limits<double>::quiet_NaN();
};

inline TimingStats timing_stats(std::vector<double> v) {
  if (v.empty()) throw Error(ErrorCode::usage, "timing_stats: no samples");
  TimingStats s;
  s.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  s.median = n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
  if (n > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(n - 1));
  }
  return s;
}

/// Forward latency at a fixed HR output size for each scale. The LR input is
/// the HR content downscaled by the scale; the network always runs at HR size.
inline std::vector<BenchRow> bench_model(const SrfrnModel<float>& model, const BenchOptions& opt) {
  if (opt.repetitions == 0) throw Error(ErrorCode::usage, "bench: repetitions must be positive");
  Plane hr;
  if (opt.image.empty()) {
    std::mt19937_64 rng(12345);
    std::uniform_real_distribution<double> d(0.0, 255.0);
    hr = Plane(opt.out_width, opt.out_height);
    for (double& v : hr.samples) v = d(rng);
  } else {
    const Plane y = rgb_to_y(png_load(opt.image));
    if (y.width < opt.out_width || y.height < opt.out_height) {
      throw Error(ErrorCode::data, opt.image.string() + " is smaller than the benchmark output size");
    }
    hr = crop(y, (y.width - opt.out_width) / 2, (y.height - opt.out_height) / 2, opt.out_width, opt.out_height);
  }
  std::vector<BenchRow> rows;
  for (std::size_t s : opt.scales) {
    if (s == 0 || opt.out_width % s || opt.out_height % s) {
      throw Error(ErrorCode::usage, "bench: output size not divisible by scale " + std::to_string(s));
    }
    const Plane lr = bicubic_resize(hr, opt.out_width / s, opt.out_height / s, ResizeOptions{true});
    std::vector<double> fwd, e2e;
    for (std::size_t i = 0; i < opt.warmup + opt.repetitions; ++i) {
      const auto t0 = std::chrono::steady_clock::now();
      const Plane ilr = bicubic_resize(lr, opt.out_width, opt.out_height);
      const Tensor<float> x = pack_planes<float>({&ilr});
      const auto t1 = std::chrono::steady_clock::now();
      const Tensor<float> y = infer(model, x);
      const double f = detail::ms_since(t1);
      const Plane out = clip(unpack_plane(y));
      const double total = detail::ms_since(t0);
      if (out.size() != ilr.size()) throw Error(ErrorCode::shape, "bench: unexpected output size");
      if (i < opt.warmup) continue;
      fwd.push_back(f);
      e2e.push_back(total);
    }
    const auto st = timing_stats(fwd);
    rows.push_back({s, model.n_blocks(), st.mean, st.median, st.std, timing_stats(e2e).mean});
  }
  return rows;
}

inline std::vector<BenchRow> cmd_bench(const RunConfig& config, const BenchOptions& opt, std::ostream& out) {
  SrfrnModel<float> model(config.n_blocks);
  std::string digest;
  if (!config.weights.empty()) {
    model = load_weights<float>(config.weights);
    digest = git_blob_sha1(config.weights);
  } else {
    init_params(model, config.seed);
  }
  write_run_header(out, "bench", config, digest);
  const auto rows = bench_model(model, opt);
  out << "scale,out_width,out_height,n_blocks,repetitions,mean_ms,median_ms,std_ms,e2e_mean_ms\n";
  for (const auto& r : rows) {
    out << r.scale << ',' << opt.out_width << ',' << opt.out_height << ',' << r.n_blocks << ',' << opt.repetitions
        << ',' << detail::fmt(r.mean_ms, 3) << ',' << detail::fmt(r.median_ms, 3) << ','
        << (std::isnan(r.std_ms) ? std::string() : detail::fmt(r.std_ms, 3)) << ',' << detail::fmt(r.e2e_mean_ms, 3)
        << '\n';
  }
  return rows;
}

// ---------------------------------------------------------------------------
// ablate

/// Mean PSNR (dB, peak 255) over patch pairs; `model` null gives the bicubic baseline.
inline double mean_patch_psnr(const SrfrnModel<float>* model, const std::vector<PatchPair>& pairs, std::size_t shave_px) {
  if (pairs.empty()) throw Error(ErrorCode::data, "mean_patch_psnr: no pairs");
  double sum = 0.0;
  for (const auto& p : pairs) {
    const Plane pred = clip(model ? predict_plane(*model, p.ilr) : p.ilr);
    sum += shave_px ? psnr(shave(pred, shave_px), shave(p.hr, shave_px)) : psnr(pred, p.hr);
  }
  return sum / static_cast<double>(pairs.size());
}

struct AblateRow {
  std::size_t n_blocks = 0;
  std::uint64_t params = 0;
  double val_psnr_db = 0.0;
};

/// Trains one model per block count under the same budget and seed; each run
/// lives in <out_dir>/blocks<n>.
inline std::vector<AblateRow> cmd_ablate(const RunConfig& config, const std::vector<std::size_t>& blocks,
                                         std::ostream& out) {
  if (blocks.empty()) throw Error(ErrorCode::usage, "ablate: empty block list");
  write_run_header(out, "ablate", config, "");
  std::filesystem::create_directories(config.out_dir);
  const auto val_pairs = read_pair_dir(config.cache_dir / "val");
  out << "n_blocks,param_count,val_psnr_db\n";
  std::vector<AblateRow> rows;
  for (std::size_t n : blocks) {
    RunConfig c = config;
    c.n_blocks = n;
    c.out_dir = config.out_dir / ("blocks" + std::to_string(n));
    c.weights.clear();
    c.resume = false;
    std::ofstream log(c.out_dir.string() + ".log");
    cmd_train(c, log);
    const auto model = load_weights<float>(c.weights_path());
    rows.push_back({n, param_count(n), mean_patch_psnr(&model, val_pairs, c.shave_border())});
    out << n << ',' << rows.back().params << ',' << detail::fmt(rows.back().val_psnr_db) << '\n' << std::flush;
  }
  return rows;
}

}  // namespace srfrn
