#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <future>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "srfrn/model.hpp"

namespace srfrn {

template <std::floating_point T>
struct LossResult {
  double loss = 0.0;
  Tensor<T> grad;
};

/// Mean absolute error over every element; gradient sign(pred - target) / N with sign(0) = 0.
template <std::floating_point T>
LossResult<T> l1_loss(const Tensor<T>& pred, const Tensor<T>& target) {
  require_same_shape(pred, target, "l1_loss");
  const std::size_t n = pred.size();
  if (n == 0) throw Error(ErrorCode::usage, "l1_loss: empty tensors");
  LossResult<T> r{0.0, Tensor<T>(pred.shape())};
  auto p = pred.data();
  auto t = target.data();
  auto g = r.grad.data();
  const T inv = T(1) / static_cast<T>(n);
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const T d = p[i] - t[i];
    sum += std::abs(static_cast<double>(d));
    g[i] = d > T{0} ? inv : (d < T{0} ? -inv : T{0});
  }
  r.loss = sum / static_cast<double>(n);
  return r;
}

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const {
    if (!(lr > 0.0)) throw Error(ErrorCode::usage, "adam: lr must be positive");
    if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) {
      throw Error(ErrorCode::usage, "adam: betas must lie in [0, 1)");
    }
  }
};

/// One bias-corrected Adam update of a single layer at step `t` (1-based).
template <std::floating_point T>
void adam_step(ConvLayer<T>& layer, const AdamConfig& config, std::uint64_t t) {
  const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(t));
  const T b1 = T(config.beta1), b2 = T(config.beta2);
  const T step = T(config.lr / c1);
  const T inv_sqrt_c2 = T(1.0 / std::sqrt(c2));
  const T eps = T(config.epsilon);
  auto update = [&](std::span<T> theta, std::span<const T> g, std::span<T> m, std::span<T> v) {
    for (std::size_t i = 0; i < theta.size(); ++i) {
      m[i] = b1 * m[i] + (T(1) - b1) * g[i];
      v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
      // lr * m_hat / (sqrt(v_hat) + eps) with m_hat = m / c1, v_hat = v / c2
      theta[i] -= step * m[i] / (std::sqrt(v[i]) * inv_sqrt_c2 + eps);
    }
  };
  update(layer.weights.data(), layer.grad_weights.data(), layer.m_weights, layer.v_weights);
  update(std::span<T>(layer.bias), std::span<const T>(layer.grad_bias), layer.m_bias, layer.v_bias);
}

/// Adam over a whole model; owns the step counter.
class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) { config_.validate(); }

  template <std::floating_point T>
  void step(SrfrnModel<T>& model) {
    ++t_;
    model.for_each_layer([&](ConvLayer<T>& l) { adam_step(l, config_, t_); });
  }

  std::uint64_t steps() const noexcept { return t_; }
  void set_steps(std::uint64_t t) noexcept { t_ = t; }
  double lr() const noexcept { return config_.lr; }
  void set_lr(double lr) {
    config_.lr = lr;
    config_.validate();
  }
  const AdamConfig& config() const noexcept { return config_; }

 private:
  AdamConfig config_;
  std::uint64_t t_ = 0;
};

/// Reduce-on-plateau learning-rate schedule, updated once per epoch.
struct PlateauSchedule {
  std::size_t patience = 10;
  double factor = 0.5;
  double min_lr = 1e-6;
  double rel_threshold = 1e-4;
  double lr = 1e-3;
  double best_val = std::numeric_limits<double>::infinity();
  std::size_t stale_count = 0;

  double update(double val_loss) {
    if (std::isnan(val_loss)) throw Error(ErrorCode::numeric, "plateau_update: validation loss is NaN");
    if (val_loss < best_val * (1.0 - rel_threshold)) {
      best_val = val_loss;
      stale_count = 0;
    } else if (++stale_count >= patience) {
      lr = std::max(lr * factor, min_lr);
      stale_count = 0;
    }
    return lr;
  }
};

template <std::floating_point T>
struct Batch {
  Tensor<T> ilr;  // (B, 1, m, m), samples in [0, 1]
  Tensor<T> hr;
};

struct TrainOptions {
  /// Sequential batch preparation. Kernels are single-threaded and reduce in a
  /// fixed order, so numeric results are reproducible either way; this flag
  /// additionally forbids the background prefetch thread.
  bool deterministic = true;
  /// Called after each optimizer step with the batch loss.
  std::function<void(std::size_t step, double loss)> on_step;
};

template <std::floating_point T>
double train_step(SrfrnModel<T>& model, const Batch<T>& batch, Adam& optimizer) {
  model.zero_grad();
  auto fwd = forward(model, batch.ilr);
  auto loss = l1_loss(fwd.output, batch.hr);
  if (!std::isfinite(loss.loss)) throw Error(ErrorCode::numeric, "training loss is not finite");
  backward(model, fwd.tape, loss.grad);
  optimizer.step(model);
  return loss.loss;
}

/// Runs one pass over `count` batches produced on demand by `make_batch(i)`.
/// Returns the mean batch loss.
template <std::floating_point T>
double train_epoch(SrfrnModel<T>& model, std::size_t count, const std::function<Batch<T>(std::size_t)>& make_batch,
                   Adam& optimizer, const TrainOptions& options = {}) {
  if (count == 0) throw Error(ErrorCode::usage, "train_epoch: no batches");
  double total = 0.0;
  if (options.deterministic) {
    for (std::size_t i = 0; i < count; ++i) {
      const double l = train_step(model, make_batch(i), optimizer);
      if (options.on_step) options.on_step(i, l);
      total += l;
    }
  } else {
    std::future<Batch<T>> next = std::async(std::launch::async, make_batch, 0);
    for (std::size_t i = 0; i < count; ++i) {
      Batch<T> batch = next.get();
      if (i + 1 < count) next = std::async(std::launch::async, make_batch, i + 1);
      const double l = train_step(model, batch, optimizer);
      if (options.on_step) options.on_step(i, l);
      total += l;
    }
  }
  return total / static_cast<double>(count);
}

template <std::floating_point T>
double train_epoch(SrfrnModel<T>& model, std::span<const Batch<T>> batches, Adam& optimizer,
                   const TrainOptions& options = {}) {
  return train_epoch<T>(
      model, batches.size(), [&](std::size_t i) { return batches[i]; }, optimizer, options);
}

/// Mean L1 over batches without touching gradients.
template <std::floating_point T>
double evaluate_l1(const SrfrnModel<T>& model, std::size_t count, const std::function<Batch<T>(std::size_t)>& make_batch) {
  if (count == 0) throw Error(ErrorCode::usage, "evaluate_l1: no batches");
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < count; ++i) {
    const Batch<T> b = make_batch(i);
    const Tensor<T> out = infer(model, b.ilr);
    sum += l1_loss(out, b.hr).loss * static_cast<double>(b.hr.size());
    n += b.hr.size();
  }
  return sum / static_cast<double>(n);
}

}  // namespace srfrn
