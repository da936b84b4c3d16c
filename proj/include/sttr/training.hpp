#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "sttr/dataset.hpp"
#include "sttr/errors.hpp"
#include "sttr/network.hpp"
#include "sttr/ops.hpp"
#include "sttr/random.hpp"
#include "sttr/scores.hpp"

namespace sttr {

struct TrainConfig {
  std::size_t epochs = 120;
  std::size_t batch_size = 32;
  double base_lr = 0.1;
  std::vector<std::size_t> lr_drop_epochs = {60, 90};
  double lr_drop_factor = 10.0;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::uint64_t seed = 1;

  void validate() const {
    if (!(base_lr > 0.0)) throw ShapeError("TrainConfig: base_lr must be positive");
    if (!std::is_sorted(lr_drop_epochs.begin(), lr_drop_epochs.end()))
      throw ShapeError("TrainConfig: lr drop epochs must be ascending");
    if (!(lr_drop_factor > 0.0)) throw ShapeError("TrainConfig: lr drop factor must be positive");
    if (batch_size == 0) throw ShapeError("TrainConfig: batch size must be positive");
  }
};

/// base_lr / factor^(number of drop epochs <= epoch).
inline double lr_at_epoch(std::size_t epoch, const TrainConfig& cfg) {
  const auto drops = std::upper_bound(cfg.lr_drop_epochs.begin(), cfg.lr_drop_epochs.end(), epoch) -
                     cfg.lr_drop_epochs.begin();
  return cfg.base_lr / std::pow(cfg.lr_drop_factor, static_cast<double>(drops));
}

/// v <- momentum v + grad + weight_decay param;  param <- param - lr v
template <class T>
void sgd_step(std::span<T> param, std::span<const T> grad, std::span<T> velocity, double lr, double momentum,
              double weight_decay) {
  if (param.size() != grad.size() || param.size() != velocity.size())
    throw ShapeError("sgd_step: parameter, gradient and velocity sizes differ");
  const T m = static_cast<T>(momentum), wd = static_cast<T>(weight_decay), step = static_cast<T>(lr);
  for (std::size_t i = 0; i < param.size(); ++i) {
    velocity[i] = m * velocity[i] + grad[i] + wd * param[i];
    param[i] -= step * velocity[i];
  }
}

template <class T>
class Sgd {
 public:
  Sgd(std::vector<Tensor<T>> params, double momentum, double weight_decay)
      : params_(std::move(params)), momentum_(momentum), weight_decay_(weight_decay) {
    for (const auto& p : params_) velocity_.emplace_back(p.numel(), T(0));
  }

  void step(double lr) {
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto& p = params_[k];
      sgd_step<T>(p.mutable_data(), p.grad(), velocity_[k], lr, momentum_, weight_decay_);
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

 private:
  std::vector<Tensor<T>> params_;
  std::vector<std::vector<T>> velocity_;
  double momentum_;
  double weight_decay_;
};

template <class T>
struct Batch {
  Tensor<T> x;  // (B, C, T, V, M)
  std::vector<int> labels;
};

template <class T>
Batch<T> make_batch(const Dataset& ds, std::span<const std::size_t> indices) {
  Batch<T> b;
  const std::size_t n = ds.clip_size();
  std::vector<T> values;
  values.reserve(indices.size() * n);
  for (auto i : indices) {
    const float* src = ds.clip_data(i);
    values.insert(values.end(), src, src + n);
    b.labels.push_back(ds.manifest.samples[i].label);
  }
  b.x = Tensor<T>({indices.size(), ds.channels, ds.frames, ds.joints, ds.bodies}, std::move(values));
  return b;
}

inline std::size_t count_correct(std::span<const float> logits, std::span<const int> labels, std::size_t classes) {
  std::size_t hit = 0;
  for (std::size_t n = 0; n < labels.size(); ++n) {
    auto row = logits.subspan(n * classes, classes);
    hit += static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin()) == labels[n];
  }
  return hit;
}

template <class T>
std::size_t count_correct(const Tensor<T>& logits, std::span<const int> labels) {
  std::vector<float> f(logits.data().begin(), logits.data().end());
  return count_correct(f, labels, logits.size(1));
}

struct EpochStats {
  double loss = 0.0;
  double accuracy = 0.0;
};

/// One shuffled pass over `indices`. Deterministic given `rng`'s state.
template <class T>
EpochStats train_epoch(Network<T>& net, Sgd<T>& opt, const Dataset& ds, std::vector<std::size_t> indices, double lr,
                       std::size_t batch_size, Rng& rng) {
  if (indices.empty()) throw ShapeError("train_epoch: empty training set");
  rng.shuffle(indices);
  double loss_sum = 0.0;
  std::size_t hit = 0;
  for (std::size_t start = 0; start < indices.size(); start += batch_size) {
    const std::size_t stop = std::min(indices.size(), start + batch_size);
    std::span<const std::size_t> slice(indices.data() + start, stop - start);
    auto batch = make_batch<T>(ds, slice);
    auto logits = network_forward(net, batch.x, Mode::train, &rng);
    Tensor<T> loss;
    try {
      loss = cross_entropy(logits, std::span<const int>(batch.labels));
    } catch (const NumericError& e) {
      throw NumericError(std::string(e.what()) + " (batch starting at position " + std::to_string(start) + ")");
    }
    opt.zero_grad();
    backward(loss);
    opt.step(lr);
    loss_sum += static_cast<double>(loss.item()) * static_cast<double>(slice.size());
    hit += count_correct(logits, batch.labels);
  }
  const auto n = static_cast<double>(indices.size());
  return {loss_sum / n, static_cast<double>(hit) / n};
}

struct Evaluation {
  double loss = 0.0;
  double accuracy = 0.0;
  ScoreTable scores;
};

/// Eval-mode pass (running statistics, no DropAttention) emitting softmax scores.
template <class T>
Evaluation evaluate(Network<T>& net, const Dataset& ds, const std::vector<std::size_t>& indices,
                    std::size_t batch_size = 32) {
  NoGradGuard no_grad;
  Evaluation ev;
  double loss_sum = 0.0;
  std::size_t hit = 0;
  for (std::size_t start = 0; start < indices.size(); start += batch_size) {
    const std::size_t stop = std::min(indices.size(), start + batch_size);
    std::span<const std::size_t> slice(indices.data() + start, stop - start);
    auto batch = make_batch<T>(ds, slice);
    auto logits = network_forward(net, batch.x, Mode::eval);
    loss_sum += static_cast<double>(cross_entropy(logits, std::span<const int>(batch.labels)).item()) *
                static_cast<double>(slice.size());
    auto probs = softmax(logits, 1);
    const std::size_t K = logits.size(1);
    for (std::size_t n = 0; n < slice.size(); ++n) {
      ScoreRow row;
      row.id = ds.manifest.samples[slice[n]].id;
      row.label = batch.labels[n];
      for (std::size_t k = 0; k < K; ++k) row.scores.push_back(static_cast<double>(probs.data()[n * K + k]));
      hit += argmax(row.scores) == row.label;
      ev.scores.rows.push_back(std::move(row));
    }
  }
  if (!indices.empty()) {
    ev.loss = loss_sum / static_cast<double>(indices.size());
    ev.accuracy = static_cast<double>(hit) / static_cast<double>(indices.size());
  }
  return ev;
}

struct EpochMetrics {
  std::size_t epoch = 0;
  std::string split;
  double loss = 0.0;
  double accuracy = 0.0;
  double lr = 0.0;
  double seconds = 0.0;
};

inline std::string metrics_line(const EpochMetrics& m) {
  nlohmann::ordered_json j{{"epoch", m.epoch}, {"split", m.split},  {"loss", m.loss},
                           {"accuracy", m.accuracy}, {"lr", m.lr}, {"seconds", m.seconds}};
  return j.dump();
}

struct FitOptions {
  std::string metrics_path;  // line-delimited JSON, one record per epoch and split; empty to skip
  bool deterministic = false;  // record 0 seconds so metrics files compare byte-for-byte
  std::function<void(const EpochMetrics&)> on_epoch;
};

/// Full training run over the dataset's train split, evaluating the test split
/// after every epoch.
template <class T>
std::vector<EpochMetrics> fit(Network<T>& net, const Dataset& ds, const TrainConfig& cfg, const FitOptions& opt = {}) {
  cfg.validate();
  const auto train_idx = ds.indices(Split::train);
  const auto test_idx = ds.indices(Split::test);
  Sgd<T> sgd(net.parameters(), cfg.momentum, cfg.weight_decay);
  Rng rng(cfg.seed);
  std::ofstream metrics;
  if (!opt.metrics_path.empty()) {
    metrics.open(opt.metrics_path, std::ios::trunc);
    if (!metrics) throw FormatError("cannot open " + opt.metrics_path + " for writing");
  }
  std::vector<EpochMetrics> history;
  auto emit = [&](EpochMetrics m) {
    if (opt.deterministic) m.seconds = 0.0;
    if (metrics.is_open()) metrics << metrics_line(m) << '\n' << std::flush;
    if (opt.on_epoch) opt.on_epoch(m);
    history.push_back(std::move(m));
  };
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const double lr = lr_at_epoch(epoch, cfg);
    const auto stats = train_epoch(net, sgd, ds, train_idx, lr, cfg.batch_size, rng);
    const double train_secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    emit({epoch, "train", stats.loss, stats.accuracy, lr, train_secs});
    if (!test_idx.empty()) {
      const auto t1 = std::chrono::steady_clock::now();
      const auto ev = evaluate(net, ds, test_idx, cfg.batch_size);
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t1).count();
      emit({epoch, "test", ev.loss, ev.accuracy, lr, secs});
    }
  }
  return history;
}

}  // namespace sttr
