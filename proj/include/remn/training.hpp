#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "remn/dataset.hpp"
#include "remn/model.hpp"

namespace remn {

struct TrainConfig {
  double learning_rate = 1e-3;
  double plateau_factor = 0.1;
  std::size_t plateau_patience = 3;
  /// Absolute decrease in validation loss that counts as progress for the
  /// scheduler.
  double plateau_threshold = 1e-4;
  std::size_t early_stop_patience = 5;
  std::size_t max_epochs = 80;
  std::size_t batch_size = 16;
  std::uint64_t seed = 0;
  double min_lr = 1e-7;
  double momentum = 0.0;
  double weight_decay = 0.0;
  /// best.ckpt and last.ckpt go here; empty disables checkpointing.
  std::string checkpoint_dir;
  /// No prefetch thread and no wall-clock fields in the report.
  bool deterministic = false;

  /// Throws UsageError naming the offending field.
  void validate() const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

nlohmann::json to_json(const TrainConfig& config);
/// Missing keys keep their defaults; unknown keys are rejected.
TrainConfig train_config_from_json(const nlohmann::json& j);

/// SGD with optional momentum and L2 weight decay. With both at zero a step
/// is value -= lr * grad. Gradients are cleared afterwards.
class Sgd {
 public:
  explicit Sgd(double momentum = 0.0, double weight_decay = 0.0);

  /// Throws UsageError naming the first parameter whose gradient was never
  /// populated, before anything is modified.
  void step(std::deque<Parameter>& params, double lr);

 private:
  double momentum_;
  double weight_decay_;
  std::vector<std::vector<float>> velocity_;
};

/// Plain SGD step.
void sgd_step(std::deque<Parameter>& params, double lr);

/// Reduce-on-plateau learning rate.
class PlateauScheduler {
 public:
  PlateauScheduler(double lr, double factor, std::size_t patience, double threshold, double min_lr);
  explicit PlateauScheduler(const TrainConfig& c)
      : PlateauScheduler(c.learning_rate, c.plateau_factor, c.plateau_patience, c.plateau_threshold, c.min_lr) {}

  /// Records one epoch's validation loss; true when the rate was lowered.
  bool step(double val_loss);
  double lr() const noexcept { return lr_; }
  std::size_t bad_epochs() const noexcept { return bad_epochs_; }

 private:
  double lr_, factor_, threshold_, min_lr_;
  std::size_t patience_;
  double best_;
  std::size_t bad_epochs_ = 0;
};

/// True once the best loss in `history` is followed by `patience` epochs
/// with no strictly lower value.
bool early_stop_check(std::span<const double> history, std::size_t patience = 5);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double train_accuracy = 0.0;  // percent, over the epoch's batches in train mode
  double val_loss = 0.0;
  double val_accuracy = 0.0;  // percent
  double learning_rate = 0.0;  // rate used during this epoch
  bool improved = false;
  std::optional<double> seconds;
};

struct LrReduction {
  std::size_t epoch = 0;
  double from = 0.0;
  double to = 0.0;
};

/// Requested: the epoch callback asked to stop.
enum class StopReason { EarlyStop, MaxEpochs, Requested };
std::string_view stop_reason_name(StopReason r) noexcept;

struct TrainReport {
  TrainConfig config;
  ModelConfig model;
  std::size_t train_samples = 0;
  std::size_t val_samples = 0;
  std::vector<EpochRecord> epochs;
  std::vector<LrReduction> reductions;
  StopReason stop_reason = StopReason::MaxEpochs;
  std::size_t best_epoch = 0;
  double best_val_loss = 0.0;
};

nlohmann::json to_json(const TrainReport& report);

struct LossAccuracy {
  double loss = 0.0;      // mean cross-entropy
  double accuracy = 0.0;  // percent
};

/// Eval-mode pass without a tape; parameters and running statistics are
/// left untouched and the model's mode is restored.
LossAccuracy measure(ResEmoteNet& model, const LabeledDataset& dataset, std::size_t batch_size = 64);

/// Called after every epoch; returning false ends training.
using EpochCallback = std::function<bool(const EpochRecord&)>;

/// Seeded shuffling, SGD over mini-batches, validation each epoch,
/// plateau scheduling and early stopping on validation loss. With a
/// checkpoint_dir, best.ckpt tracks the lowest validation loss and
/// last.ckpt the final epoch. The model is left in its final-epoch state.
/// Throws NumericError (with epoch, batch and lr) on a non-finite loss.
TrainReport fit(ResEmoteNet& model, const LabeledDataset& train, const LabeledDataset& val, const TrainConfig& config,
                const EpochCallback& on_epoch = {});

}  // namespace remn
