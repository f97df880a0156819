#include "remn/training.hpp"

#include <chrono>
#include <cmath>
#include <future>
#include <limits>

#include "remn/checkpoint.hpp"
#include "remn/errors.hpp"
#include "remn/evaluation.hpp"
#include "remn/ops.hpp"

namespace remn {
namespace fs = std::filesystem;
using nlohmann::json;

void TrainConfig::validate() const {
  const auto fail = [](const std::string& msg) { throw UsageError("train config: " + msg); };
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) fail("learning_rate must be positive");
  if (!(plateau_factor > 0.0 && plateau_factor < 1.0)) fail("plateau_factor must be in (0, 1)");
  if (plateau_patience < 1) fail("plateau_patience must be at least 1");
  if (!(plateau_threshold >= 0.0)) fail("plateau_threshold must be nonnegative");
  if (early_stop_patience < 1) fail("early_stop_patience must be at least 1");
  if (max_epochs < 1) fail("max_epochs must be at least 1");
  if (batch_size < 1) fail("batch_size must be at least 1");
  if (!(min_lr > 0.0) || min_lr > learning_rate) fail("min_lr must be in (0, learning_rate]");
  if (!(momentum >= 0.0 && momentum < 1.0)) fail("momentum must be in [0, 1)");
  if (!(weight_decay >= 0.0)) fail("weight_decay must be nonnegative");
}

json to_json(const TrainConfig& c) {
  return {{"learning_rate", c.learning_rate},
          {"plateau_factor", c.plateau_factor},
          {"plateau_patience", c.plateau_patience},
          {"plateau_threshold", c.plateau_threshold},
          {"early_stop_patience", c.early_stop_patience},
          {"max_epochs", c.max_epochs},
          {"batch_size", c.batch_size},
          {"seed", c.seed},
          {"min_lr", c.min_lr},
          {"momentum", c.momentum},
          {"weight_decay", c.weight_decay},
          {"checkpoint_dir", c.checkpoint_dir},
          {"deterministic", c.deterministic}};
}

TrainConfig train_config_from_json(const json& j) {
  if (!j.is_object()) throw UsageError("train config must be a JSON object");
  TrainConfig c;
  const json defaults = to_json(c);
  for (const auto& [key, value] : j.items()) {
    if (!defaults.contains(key)) throw UsageError("train config: unknown key '" + key + "'");
  }
  try {
    const auto get = [&](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    get("learning_rate", c.learning_rate);
    get("plateau_factor", c.plateau_factor);
    get("plateau_patience", c.plateau_patience);
    get("plateau_threshold", c.plateau_threshold);
    get("early_stop_patience", c.early_stop_patience);
    get("max_epochs", c.max_epochs);
    get("batch_size", c.batch_size);
    get("seed", c.seed);
    get("min_lr", c.min_lr);
    get("momentum", c.momentum);
    get("weight_decay", c.weight_decay);
    get("checkpoint_dir", c.checkpoint_dir);
    get("deterministic", c.deterministic);
  } catch (const json::exception& ex) {
    throw UsageError(std::string("train config: ") + ex.what());
  }
  c.validate();
  return c;
}

Sgd::Sgd(double momentum, double weight_decay) : momentum_(momentum), weight_decay_(weight_decay) {}

void Sgd::step(std::deque<Parameter>& params, double lr) {
  for (const auto& p : params) {
    if (!p.grad_ready) throw UsageError("sgd_step: parameter '" + p.name + "' has no gradient");
  }
  if (momentum_ > 0.0 && velocity_.size() != params.size()) {
    velocity_.clear();
    for (const auto& p : params) velocity_.emplace_back(p.value.numel(), 0.0f);
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = params[k];
    auto value = p.value.data();
    const auto grad = p.grad.data();
    for (std::size_t i = 0; i < value.size(); ++i) {
      double g = grad[i];
      if (weight_decay_ > 0.0) g += weight_decay_ * value[i];
      if (momentum_ > 0.0) {
        velocity_[k][i] = static_cast<float>(momentum_ * velocity_[k][i] + g);
        g = velocity_[k][i];
      }
      value[i] = static_cast<float>(value[i] - lr * g);
    }
    p.zero_grad();
  }
}

void sgd_step(std::deque<Parameter>& params, double lr) { Sgd().step(params, lr); }

PlateauScheduler::PlateauScheduler(double lr, double factor, std::size_t patience, double threshold, double min_lr)
    : lr_(lr),
      factor_(factor),
      threshold_(threshold),
      min_lr_(min_lr),
      patience_(patience),
      best_(std::numeric_limits<double>::infinity()) {}

bool PlateauScheduler::step(double val_loss) {
  if (val_loss < best_ - threshold_) {
    best_ = val_loss;
    bad_epochs_ = 0;
    return false;
  }
  if (++bad_epochs_ < patience_) return false;
  bad_epochs_ = 0;
  const double next = std::max(lr_ * factor_, min_lr_);
  const bool reduced = next < lr_;
  lr_ = next;
  return reduced;
}

bool early_stop_check(std::span<const double> history, std::size_t patience) {
  if (history.empty()) return false;
  std::size_t best = 0;
  for (std::size_t i = 1; i < history.size(); ++i) {
    if (history[i] < history[best]) best = i;
  }
  return history.size() - 1 - best >= patience;
}

std::string_view stop_reason_name(StopReason r) noexcept {
  switch (r) {
    case StopReason::EarlyStop: return "early-stop";
    case StopReason::MaxEpochs: return "max-epochs";
    case StopReason::Requested: return "requested";
  }
  return "unknown";
}

json to_json(const TrainReport& report) {
  json epochs = json::array();
  for (const auto& e : report.epochs) {
    json item = {{"epoch", e.epoch},
                 {"train_loss", e.train_loss},
                 {"train_accuracy", e.train_accuracy},
                 {"val_loss", e.val_loss},
                 {"val_accuracy", e.val_accuracy},
                 {"learning_rate", e.learning_rate},
                 {"improved", e.improved}};
    if (e.seconds) item["seconds"] = *e.seconds;
    epochs.push_back(std::move(item));
  }
  json reductions = json::array();
  for (const auto& r : report.reductions) reductions.push_back({{"epoch", r.epoch}, {"from", r.from}, {"to", r.to}});
  return {{"config", to_json(report.config)},
          {"model", to_json(report.model)},
          {"train_samples", report.train_samples},
          {"val_samples", report.val_samples},
          {"epochs", std::move(epochs)},
          {"lr_reductions", std::move(reductions)},
          {"stop_reason", stop_reason_name(report.stop_reason)},
          {"best_epoch", report.best_epoch},
          {"best_val_loss", report.best_val_loss}};
}

namespace {

// Summed cross-entropy of [N,K] logits, in double.
double cross_entropy_sum(const Tensor& logits, std::span<const int> labels) {
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double mx = logits[i * k];
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, double(logits[i * k + j]));
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp(double(logits[i * k + j]) - mx);
    total += mx + std::log(z) - double(logits[i * k + static_cast<std::size_t>(labels[i])]);
  }
  return total;
}

std::size_t count_correct(const Tensor& logits, std::span<const int> labels) {
  const auto pred = argmax_rows(logits);
  std::size_t n = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) n += pred[i] == labels[i];
  return n;
}

void save_atomic(const ResEmoteNet& model, const fs::path& path) {
  const fs::path tmp = path.string() + ".tmp";
  save_checkpoint(model, tmp);
  fs::rename(tmp, path);
}

}  // namespace

LossAccuracy measure(ResEmoteNet& model, const LabeledDataset& dataset, std::size_t batch_size) {
  if (dataset.empty()) throw DataError("cannot measure loss on an empty dataset");
  const Mode previous = model.mode();
  model.set_mode(Mode::Eval);
  BatchIterator it(dataset, batch_size, false, 0);
  it.start_epoch(0);
  Batch batch;
  double loss = 0.0;
  std::size_t correct = 0;
  while (it.next(batch)) {
    const Tensor logits = model.infer(batch.images);
    loss += cross_entropy_sum(logits, batch.labels);
    correct += count_correct(logits, batch.labels);
  }
  model.set_mode(previous);
  const double n = static_cast<double>(dataset.size());
  return {loss / n, 100.0 * static_cast<double>(correct) / n};
}

TrainReport fit(ResEmoteNet& model, const LabeledDataset& train, const LabeledDataset& val, const TrainConfig& config,
                const EpochCallback& on_epoch) {
  config.validate();
  if (train.empty()) throw DataError("training set is empty");
  if (val.empty()) throw DataError("validation set is empty");

  fs::path ckpt_dir;
  if (!config.checkpoint_dir.empty()) {
    ckpt_dir = config.checkpoint_dir;
    fs::create_directories(ckpt_dir);
  }

  TrainReport report;
  report.config = config;
  report.model = model.config();
  report.train_samples = train.size();
  report.val_samples = val.size();

  Sgd optimizer(config.momentum, config.weight_decay);
  PlateauScheduler scheduler(config);
  BatchIterator batches(train, config.batch_size, true, config.seed);
  std::vector<double> val_history;
  double best = std::numeric_limits<double>::infinity();
  model.set_mode(Mode::Train);

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    const double lr = scheduler.lr();
    batches.start_epoch(epoch - 1);

    double loss_sum = 0.0;
    std::size_t correct = 0, seen = 0, batch_index = 0;
    Batch current, upcoming;
    bool have = batches.next(current);
    while (have) {
      std::future<bool> prefetch;
      if (!config.deterministic) {
        prefetch = std::async(std::launch::async, [&] { return batches.next(upcoming); });
      }

      Tape<float> tape;
      Tape<float>::Var logits;
      double loss = 0.0;
      try {
        logits = model.forward(tape, tape.constant(current.images));
        const auto ce = ops::softmax_cross_entropy(tape, logits, current.labels);
        loss = tape.value(ce.loss)[0];
        if (!std::isfinite(loss)) throw NumericError("loss is not finite");
        tape.backward(ce.loss);
      } catch (const NumericError& ex) {
        if (prefetch.valid()) prefetch.wait();
        throw NumericError("non-finite training loss at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(batch_index) + ", lr " + std::to_string(lr) + " (" + ex.what() + ")");
      }
      optimizer.step(model.parameters(), lr);

      const std::size_t n = current.labels.size();
      loss_sum += loss * static_cast<double>(n);
      correct += count_correct(tape.value(logits), current.labels);
      seen += n;
      ++batch_index;

      if (prefetch.valid()) {
        have = prefetch.get();
      } else {
        have = batches.next(upcoming);
      }
      std::swap(current, upcoming);
    }

    const LossAccuracy v = measure(model, val, std::max<std::size_t>(config.batch_size, 64));
    if (!std::isfinite(v.loss)) {
      throw NumericError("non-finite validation loss at epoch " + std::to_string(epoch) + ", lr " +
                         std::to_string(lr));
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(seen);
    rec.train_accuracy = 100.0 * static_cast<double>(correct) / static_cast<double>(seen);
    rec.val_loss = v.loss;
    rec.val_accuracy = v.accuracy;
    rec.learning_rate = lr;
    rec.improved = v.loss < best;

    if (scheduler.step(v.loss)) report.reductions.push_back({epoch, lr, scheduler.lr()});
    if (rec.improved) {
      best = v.loss;
      report.best_epoch = epoch;
      report.best_val_loss = v.loss;
      if (!ckpt_dir.empty()) save_atomic(model, ckpt_dir / "best.ckpt");
    }
    if (!ckpt_dir.empty()) save_atomic(model, ckpt_dir / "last.ckpt");
    if (!config.deterministic) {
      rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    }
    report.epochs.push_back(rec);
    if (on_epoch && !on_epoch(rec)) {
      report.stop_reason = StopReason::Requested;
      return report;
    }

    val_history.push_back(v.loss);
    if (early_stop_check(val_history, config.early_stop_patience)) {
      report.stop_reason = StopReason::EarlyStop;
      return report;
    }
  }
  report.stop_reason = StopReason::MaxEpochs;
  return report;
}

}  // namespace remn
