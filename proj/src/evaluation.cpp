#include "remn/evaluation.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "remn/errors.hpp"
#include "remn/image.hpp"

namespace remn {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::size_t checked_class(int code, const char* what) {
  if (code < 0 || code >= static_cast<int>(kNumClasses)) {
    throw ShapeError(std::string(what) + " class code " + std::to_string(code) + " out of range");
  }
  return static_cast<std::size_t>(code);
}

}  // namespace

void ConfusionMatrix::add(int truth, int predicted) {
  ++counts[checked_class(truth, "true")][checked_class(predicted, "predicted")];
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  for (std::size_t r = 0; r < kNumClasses; ++r) {
    for (std::size_t c = 0; c < kNumClasses; ++c) counts[r][c] += other.counts[r][c];
  }
}

std::size_t ConfusionMatrix::total() const {
  std::size_t n = 0;
  for (const auto& row : counts) {
    for (std::size_t v : row) n += v;
  }
  return n;
}

std::size_t ConfusionMatrix::correct() const {
  std::size_t n = 0;
  for (std::size_t c = 0; c < kNumClasses; ++c) n += counts[c][c];
  return n;
}

Histogram ConfusionMatrix::row_sums() const {
  Histogram h{};
  for (std::size_t r = 0; r < kNumClasses; ++r) {
    for (std::size_t v : counts[r]) h[r] += v;
  }
  return h;
}

std::vector<int> argmax_rows(const Tensor& logits) {
  if (logits.rank() != 2) throw ShapeError("argmax_rows expects [N,K] logits, got " + shape_str(logits.shape()));
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  std::vector<int> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < k; ++j) {
      if (logits[i * k + j] > logits[i * k + best]) best = j;
    }
    out[i] = static_cast<int>(best);
  }
  return out;
}

ConfusionMatrix confusion_from(std::span<const int> truth, std::span<const int> predicted) {
  if (truth.size() != predicted.size()) {
    throw ShapeError("confusion_from: " + std::to_string(truth.size()) + " labels vs " +
                     std::to_string(predicted.size()) + " predictions");
  }
  ConfusionMatrix m;
  for (std::size_t i = 0; i < truth.size(); ++i) m.add(truth[i], predicted[i]);
  return m;
}

double EvalReport::overall_accuracy() const {
  const std::size_t n = confusion.total();
  return n == 0 ? 0.0 : 100.0 * static_cast<double>(confusion.correct()) / static_cast<double>(n);
}

std::optional<double> EvalReport::class_accuracy(EmotionClass c) const {
  const auto r = static_cast<std::size_t>(class_code(c));
  const std::size_t row = confusion.row_sums()[r];
  if (row == 0) return std::nullopt;
  return 100.0 * static_cast<double>(confusion.counts[r][r]) / static_cast<double>(row);
}

EvalReport evaluate(ResEmoteNet& model, const LabeledDataset& dataset, std::size_t batch_size) {
  if (dataset.empty()) throw DataError("cannot evaluate on an empty dataset");
  const ModelConfig& cfg = model.config();
  const Shape expected{cfg.input_channels, cfg.input_height, cfg.input_width};
  for (const auto& s : dataset.samples) {
    if (s.image.shape() != expected) {
      throw ShapeError("sample image shape " + shape_str(s.image.shape()) + " does not match model input " +
                       shape_str(expected));
    }
  }

  const Mode previous = model.mode();
  model.set_mode(Mode::Eval);
  EvalReport report;
  report.dataset = dataset.name;
  BatchIterator batches(dataset, batch_size, false, 0);
  batches.start_epoch(0);
  Batch batch;
  try {
    while (batches.next(batch)) {
      report.confusion.merge(confusion_from(batch.labels, argmax_rows(model.infer(batch.images))));
    }
  } catch (...) {
    model.set_mode(previous);
    throw;
  }
  model.set_mode(previous);
  return report;
}

std::string confusion_csv(const ConfusionMatrix& m) {
  std::string out = "true\\predicted";
  for (EmotionClass c : kAllClasses) out += "," + std::string(class_name(c));
  out += "\n";
  for (EmotionClass r : kAllClasses) {
    out += class_name(r);
    for (std::size_t v : m.counts[static_cast<std::size_t>(class_code(r))]) out += "," + std::to_string(v);
    out += "\n";
  }
  return out;
}

ConfusionMatrix parse_confusion_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  const auto split = [](const std::string& l) {
    std::vector<std::string> cells;
    std::stringstream ss(l);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    return cells;
  };
  if (!std::getline(in, line) || split(line).size() != kNumClasses + 1) {
    throw DataError("confusion CSV: bad header");
  }
  const auto header = split(line);
  for (EmotionClass c : kAllClasses) {
    if (header[static_cast<std::size_t>(class_code(c)) + 1] != class_name(c)) {
      throw DataError("confusion CSV: header column " + std::to_string(class_code(c) + 1) + " should be " +
                      std::string(class_name(c)));
    }
  }
  ConfusionMatrix m;
  for (EmotionClass r : kAllClasses) {
    const auto row = static_cast<std::size_t>(class_code(r));
    if (!std::getline(in, line)) throw DataError("confusion CSV: missing row " + std::string(class_name(r)));
    const auto cells = split(line);
    if (cells.size() != kNumClasses + 1 || cells[0] != class_name(r)) {
      throw DataError("confusion CSV: malformed row " + std::to_string(row + 2));
    }
    for (std::size_t c = 0; c < kNumClasses; ++c) {
      const std::string& cell = cells[c + 1];
      if (cell.empty() || !std::all_of(cell.begin(), cell.end(), [](unsigned char ch) { return std::isdigit(ch); })) {
        throw DataError("confusion CSV: row " + std::to_string(row + 2) + " has a non-integer cell '" + cell + "'");
      }
      m.counts[row][c] = std::stoull(cell);
    }
  }
  if (std::getline(in, line) && !line.empty()) throw DataError("confusion CSV: trailing content");
  return m;
}

json to_json(const EvalReport& report) {
  json per_class = json::object();
  for (EmotionClass c : kAllClasses) {
    const auto acc = report.class_accuracy(c);
    per_class[std::string(class_name(c))] = acc ? json(*acc) : json(nullptr);
  }
  json matrix = json::array();
  for (const auto& row : report.confusion.counts) matrix.push_back(row);
  json classes = json::array();
  for (EmotionClass c : kAllClasses) classes.push_back(class_name(c));
  return {{"dataset", report.dataset},
          {"augmentation", report.augmentation},
          {"checkpoint", report.checkpoint},
          {"samples", report.samples()},
          {"overall_accuracy", report.overall_accuracy()},
          {"class_accuracy", per_class},
          {"classes", classes},
          {"confusion", matrix}};
}

EvalReport eval_report_from_json(const json& j) {
  try {
    EvalReport r;
    r.dataset = j.at("dataset").get<std::string>();
    r.augmentation = j.at("augmentation").get<std::string>();
    r.checkpoint = j.at("checkpoint").get<std::string>();
    const auto& m = j.at("confusion");
    if (!m.is_array() || m.size() != kNumClasses) throw DataError("eval report: confusion must be 7x7");
    for (std::size_t row = 0; row < kNumClasses; ++row) {
      if (!m[row].is_array() || m[row].size() != kNumClasses) throw DataError("eval report: confusion must be 7x7");
      for (std::size_t c = 0; c < kNumClasses; ++c) r.confusion.counts[row][c] = m[row][c].get<std::size_t>();
    }
    return r;
  } catch (const json::exception& ex) {
    throw DataError(std::string("malformed eval report: ") + ex.what());
  }
}

namespace {

void require_path(const fs::path& path) {
  if (path.empty()) throw DataError("output path is empty");
}

std::string read_all(const fs::path& path) {
  require_path(path);
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

void write_confusion_csv(const ConfusionMatrix& m, const fs::path& path) {
  require_path(path);
  write_file_atomic(path, confusion_csv(m));
}

ConfusionMatrix read_confusion_csv(const fs::path& path) { return parse_confusion_csv(read_all(path)); }

void write_report_json(const EvalReport& report, const fs::path& path) {
  require_path(path);
  write_file_atomic(path, to_json(report).dump(2) + "\n");
}

EvalReport read_report_json(const fs::path& path) {
  const std::string text = read_all(path);
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& ex) {
    throw DataError(path.string() + ": " + ex.what());
  }
  return eval_report_from_json(j);
}

std::string format_percent(double value) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", value);
  return buf;
}

namespace {

int augmentation_rank(const std::string& tag) {
  if (tag == "Original") return 0;
  if (tag.size() == 4 && tag.rfind("Aug", 0) == 0 && tag[3] >= '1' && tag[3] <= '4') return tag[3] - '0';
  return 5;
}

std::vector<std::vector<std::string>> table_rows(std::vector<EvalReport>& reports) {
  std::stable_sort(reports.begin(), reports.end(), [](const EvalReport& a, const EvalReport& b) {
    if (a.dataset != b.dataset) return a.dataset < b.dataset;
    const int ra = augmentation_rank(a.augmentation), rb = augmentation_rank(b.augmentation);
    if (ra != rb) return ra < rb;
    return a.augmentation < b.augmentation;
  });
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> header{"Dataset", "Augmentation", "Samples", "Overall"};
  for (EmotionClass c : kAllClasses) header.emplace_back(class_name(c));
  rows.push_back(std::move(header));
  for (const auto& r : reports) {
    std::vector<std::string> row{r.dataset, r.augmentation, std::to_string(r.samples()),
                                 format_percent(r.overall_accuracy())};
    for (EmotionClass c : kAllClasses) {
      const auto acc = r.class_accuracy(c);
      row.push_back(acc ? format_percent(*acc) : "-");
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace

std::string comparison_text(std::vector<EvalReport> reports) {
  const auto rows = table_rows(reports);
  std::vector<std::size_t> width(rows[0].size(), 0);
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i) width[i] = std::max(width[i], row[i].size());
  }
  std::string out;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t i = 0; i < rows[r].size(); ++i) {
      const std::string& cell = rows[r][i];
      const std::string pad(width[i] - cell.size(), ' ');
      if (i > 0) out += "  ";
      // Text columns left-aligned, numbers right-aligned.
      out += i < 2 ? cell + pad : pad + cell;
    }
    while (!out.empty() && out.back() == ' ') out.pop_back();
    out += "\n";
    if (r == 0) {
      std::size_t total = 0;
      for (std::size_t w : width) total += w;
      out += std::string(total + 2 * (width.size() - 1), '-') + "\n";
    }
  }
  return out;
}

std::string comparison_csv(std::vector<EvalReport> reports) {
  std::string out;
  for (const auto& row : table_rows(reports)) {
    for (std::size_t i = 0; i < row.size(); ++i) out += (i ? "," : "") + row[i];
    out += "\n";
  }
  return out;
}

}  // namespace remn
