#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "evg/checkpoint.hpp"
#include "evg/dataset.hpp"
#include "evg/graph.hpp"
#include "evg/tea.hpp"

namespace evg {

enum class Optimizer { SgdMomentum, Adam };

std::string optimizer_name(Optimizer o);
Optimizer parse_optimizer(const std::string& name);

struct EpochStats {
  std::size_t epoch = 0;  // 1-based
  double loss = 0.0;
  double accuracy = 0.0;
};

struct TrainConfig {
  std::size_t epochs = 50;
  std::size_t batch_size = 16;
  double learning_rate = 1e-3;
  Optimizer optimizer = Optimizer::Adam;
  double momentum = 0.9;  // sgd-momentum only
  double beta1 = 0.9;
  double beta2 = 0.999;
  std::uint64_t seed = 0;
  std::size_t window_k = 100;
  GraphConfig graph;
  /// Called after every epoch, e.g. for progress output.
  std::function<void(const EpochStats&)> on_epoch;

  void validate() const;
};

struct TrainResult {
  tea::ModelParams model;
  std::vector<EpochStats> history;
  /// The graph settings the model was trained with, temporal_norm resolved.
  GraphConfig graph;
  /// Eval-mode accuracy on the first window_k events of each training sample.
  double train_accuracy = 0.0;
};

/// Mean of -log softmax(logits)[label] over the rows.
tea::Var cross_entropy(tea::Var logits, std::span<const int> labels);

/// Dataset-wide time scale for edge attribute beta: the median over samples
/// of the mean inter-event interval within the first k events. Returns 1 when
/// no sample has two distinct timestamps.
double typical_event_interval(const Dataset& data, std::size_t k);

/// Model shape matching a graph variant and class count, other fields default.
tea::ModelConfig model_config_for(Variant variant, std::size_t num_classes, std::uint64_t seed);

/// Trains on random length-k windows (a fresh start per sample and epoch) with
/// a per-epoch permutation, all drawn from cfg.seed. An unset
/// cfg.graph.temporal_norm is replaced by typical_event_interval().
TrainResult train(const tea::ModelConfig& model_cfg, const Dataset& data, const TrainConfig& cfg);

std::string history_csv(const std::vector<EpochStats>& history);

/// Model plus everything needed to rebuild the same graphs at evaluation.
Checkpoint make_checkpoint(const TrainResult& result, const TrainConfig& cfg);

/// Graph settings stored by make_checkpoint.
GraphConfig checkpoint_graph_config(const Checkpoint& ckpt);

struct EvalConfig {
  std::vector<std::size_t> windows{100, 50, 10};
  double noise_fraction = 0.0;
  std::uint64_t seed = 0;
  GraphConfig graph;
  std::size_t batch_size = 32;
};

struct WindowScore {
  std::size_t k = 0;
  double top1 = 0.0;
  std::vector<double> per_class;  // NaN-free: classes without samples score 0
  std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
  std::optional<double> train_test_gap;
};

struct EvalReport {
  std::vector<std::string> class_names;
  std::vector<std::size_t> class_counts;
  double noise_fraction = 0.0;
  std::uint64_t seed = 0;
  std::optional<double> train_accuracy;
  std::vector<WindowScore> windows;

  const WindowScore& at(std::size_t k) const;
  std::string to_json() const;
  static EvalReport from_json(const std::string& text);
};

/// Scores each window size on nested prefixes of one random window per
/// sample (start drawn from cfg.seed), optionally with injected noise. Runs in
/// eval mode and never modifies the model.
EvalReport evaluate(const tea::ModelParams& model, const Dataset& data, const EvalConfig& cfg,
                    std::optional<double> train_accuracy = std::nullopt);

}  // namespace evg
