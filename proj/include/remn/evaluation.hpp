#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "remn/dataset.hpp"
#include "remn/emotion.hpp"
#include "remn/model.hpp"

namespace remn {

/// Rows are true classes, columns predictions, both in class-code order.
struct ConfusionMatrix {
  std::array<std::array<std::size_t, kNumClasses>, kNumClasses> counts{};

  void add(int truth, int predicted);
  void merge(const ConfusionMatrix& other);
  std::size_t total() const;
  std::size_t correct() const;
  Histogram row_sums() const;

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

/// Argmax per row of [N, K] logits; ties go to the lowest index.
std::vector<int> argmax_rows(const Tensor& logits);

ConfusionMatrix confusion_from(std::span<const int> truth, std::span<const int> predicted);

struct EvalReport {
  std::string dataset;
  std::string augmentation = "Original";  // Original, Aug1 .. Aug4, or free text
  std::string checkpoint;
  ConfusionMatrix confusion;

  std::size_t samples() const { return confusion.total(); }
  /// Percent, 0 for an empty matrix.
  double overall_accuracy() const;
  /// Recall in percent; nullopt when the class has no samples.
  std::optional<double> class_accuracy(EmotionClass c) const;

  friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

/// Runs the model in eval mode over `dataset` (mode restored afterwards).
/// Throws ShapeError when sample images do not match the model input.
EvalReport evaluate(ResEmoteNet& model, const LabeledDataset& dataset, std::size_t batch_size = 64);

std::string confusion_csv(const ConfusionMatrix& m);
/// Throws DataError on anything but the exact layout confusion_csv emits.
ConfusionMatrix parse_confusion_csv(const std::string& text);

nlohmann::json to_json(const EvalReport& report);
/// Derived accuracies in the document are ignored and recomputed.
EvalReport eval_report_from_json(const nlohmann::json& j);

/// Throw DataError on an empty path or I/O failure.
void write_confusion_csv(const ConfusionMatrix& m, const std::filesystem::path& path);
ConfusionMatrix read_confusion_csv(const std::filesystem::path& path);
void write_report_json(const EvalReport& report, const std::filesystem::path& path);
EvalReport read_report_json(const std::filesystem::path& path);

/// Rows sorted by dataset, then Original before Aug1..Aug4 before other
/// tags. Accuracies in percent with two decimals; "-" marks a class with
/// no samples.
std::string comparison_text(std::vector<EvalReport> reports);
std::string comparison_csv(std::vector<EvalReport> reports);

/// Two-decimal rendering used by the tables.
std::string format_percent(double value);

}  // namespace remn
