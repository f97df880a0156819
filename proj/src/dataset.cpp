#include "remn/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>

#include "remn/errors.hpp"
#include "remn/rng.hpp"

namespace remn {

std::string_view split_name(Split s) noexcept {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

std::string_view origin_name(Origin o) noexcept { return o == Origin::Real ? "real" : "synthetic"; }

Histogram LabeledDataset::histogram() const {
  Histogram h{};
  for (const auto& s : samples) ++h[static_cast<std::size_t>(class_code(s.label))];
  return h;
}

SplitSpec SplitSpec::fer2013() {
  return SplitSpec{{{"Training", Split::Train}, {"PublicTest", Split::Val}, {"PrivateTest", Split::Test}}};
}

namespace {

constexpr std::size_t kFerSide = 48;
constexpr std::size_t kFerPixels = kFerSide * kFerSide;

struct FerRow {
  EmotionClass label;
  Split split;
  Image8 image;
};

class FerReader {
 public:
  FerReader(const std::filesystem::path& path, const SplitSpec& splits) : path_(path), splits_(splits), in_(path) {
    if (!in_) throw DataError("cannot open FER2013 CSV " + path.string());
    std::string header;
    if (!next_line(header)) fail("file is empty");
    if (header.rfind("\xEF\xBB\xBF", 0) == 0) header.erase(0, 3);
    if (header != "emotion,pixels,Usage") fail("header must be 'emotion,pixels,Usage', got '" + header + "'");
  }

  // Returns false at end of file. Blank lines are skipped.
  bool read(FerRow& row) {
    std::string line;
    do {
      if (!next_line(line)) return false;
    } while (line.empty());

    const std::size_t c1 = line.find(',');
    const std::size_t c2 = c1 == std::string::npos ? c1 : line.find(',', c1 + 1);
    if (c2 == std::string::npos || line.find(',', c2 + 1) != std::string::npos) {
      fail("expected 3 comma-separated fields");
    }
    const std::string_view label_field(line.data(), c1);
    std::string_view pixels(line.data() + c1 + 1, c2 - c1 - 1);
    const std::string tag = line.substr(c2 + 1);

    long code = -1;
    const auto [end, ec] = std::from_chars(label_field.data(), label_field.data() + label_field.size(), code);
    if (ec != std::errc() || end != label_field.data() + label_field.size()) {
      fail("emotion '" + std::string(label_field) + "' is not an integer");
    }
    const auto label = class_from_code(code);
    if (!label) fail("unknown emotion code " + std::to_string(code));
    const auto split = splits_.tags.find(tag);
    if (split == splits_.tags.end()) fail("unknown Usage tag '" + tag + "'");

    if (pixels.size() >= 2 && pixels.front() == '"' && pixels.back() == '"') pixels = pixels.substr(1, pixels.size() - 2);
    row.label = *label;
    row.split = split->second;
    row.image.width = row.image.height = kFerSide;
    row.image.channels = 1;
    row.image.pixels.clear();
    const char* p = pixels.data();
    const char* stop = p + pixels.size();
    while (true) {
      while (p < stop && *p == ' ') ++p;
      if (p == stop) break;
      unsigned value = 0;
      const auto [q, perr] = std::from_chars(p, stop, value);
      if (perr != std::errc() || (q < stop && *q != ' ')) {
        const char* tok_end = std::find(p, stop, ' ');
        fail("pixel " + std::to_string(row.image.pixels.size() + 1) + " ('" + std::string(p, tok_end) +
             "') is not an integer");
      }
      if (value > 255) fail("pixel value " + std::to_string(value) + " outside 0-255");
      if (row.image.pixels.size() == kFerPixels) fail("more than " + std::to_string(kFerPixels) + " pixels");
      row.image.pixels.push_back(static_cast<std::uint8_t>(value));
      p = q;
    }
    if (row.image.pixels.size() != kFerPixels) {
      fail("expected " + std::to_string(kFerPixels) + " pixels, got " + std::to_string(row.image.pixels.size()));
    }
    return true;
  }

  std::size_t line_number() const noexcept { return line_no_; }

 private:
  bool next_line(std::string& line) {
    if (!std::getline(in_, line)) return false;
    ++line_no_;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return true;
  }

  [[noreturn]] void fail(const std::string& msg) const {
    throw DataError(path_.string() + ": line " + std::to_string(line_no_) + ": " + msg);
  }

  std::filesystem::path path_;
  const SplitSpec& splits_;
  std::ifstream in_;
  std::size_t line_no_ = 0;
};

bool is_hidden(const std::filesystem::path& p) {
  const std::string name = p.filename().string();
  return !name.empty() && name.front() == '.';
}

// Class directories and their files in lexicographic order.
std::vector<std::pair<EmotionClass, std::vector<std::filesystem::path>>> scan_image_folder(
    const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) throw DataError("image folder " + root.string() + " is not a directory");
  std::vector<fs::path> dirs;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory() && !is_hidden(entry.path())) dirs.push_back(entry.path());
  }
  std::sort(dirs.begin(), dirs.end());

  std::vector<std::pair<EmotionClass, std::vector<fs::path>>> out;
  for (const auto& dir : dirs) {
    const auto label = class_from_name(dir.filename().string());
    if (!label) throw DataError("unknown class directory " + dir.string());
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
      if (!is_hidden(entry.path()) && !entry.is_directory()) files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    out.emplace_back(*label, std::move(files));
  }
  return out;
}

}  // namespace

std::map<Split, LabeledDataset> load_fer2013_csv(const std::filesystem::path& path, const SplitSpec& splits,
                                                 const ImageOptions& options) {
  FerReader reader(path, splits);
  std::map<Split, LabeledDataset> out;
  FerRow row;
  while (reader.read(row)) {
    auto [it, inserted] = out.try_emplace(row.split);
    if (inserted) {
      it->second.name = "fer2013";
      it->second.split = row.split;
    }
    it->second.samples.push_back(Sample{image_to_tensor(row.image, options), row.label, Origin::Real,
                                        path.filename().string() + ":" + std::to_string(reader.line_number())});
  }
  return out;
}

std::map<Split, Histogram> summarize_fer2013_csv(const std::filesystem::path& path, const SplitSpec& splits) {
  FerReader reader(path, splits);
  std::map<Split, Histogram> out;
  FerRow row;
  while (reader.read(row)) {
    auto [it, inserted] = out.try_emplace(row.split, Histogram{});
    ++it->second[static_cast<std::size_t>(class_code(row.label))];
  }
  return out;
}

LabeledDataset load_image_folder(const std::filesystem::path& root, const ImageOptions& options, Origin origin) {
  LabeledDataset ds;
  ds.name = root.filename().empty() ? root.parent_path().filename().string() : root.filename().string();
  for (const auto& [label, files] : scan_image_folder(root)) {
    for (const auto& file : files) {
      ds.samples.push_back(Sample{image_to_tensor(read_pnm(file), options), label, origin, file.string()});
    }
  }
  return ds;
}

Histogram count_image_folder(const std::filesystem::path& root) {
  Histogram h{};
  for (const auto& [label, files] : scan_image_folder(root)) h[static_cast<std::size_t>(class_code(label))] += files.size();
  return h;
}

HoldoutSplit holdout_split(LabeledDataset dataset, double fraction, std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction < 1.0)) throw UsageError("holdout fraction must lie in [0,1)");
  const std::size_t n = dataset.size();
  const auto count = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  Rng rng(mix_seed(seed, 0x686f6c646f7574ULL));
  const auto perm = rng.permutation(n);
  std::vector<bool> to_val(n, false);
  for (std::size_t i = 0; i < count; ++i) to_val[perm[i]] = true;

  HoldoutSplit out;
  out.train.name = out.val.name = dataset.name;
  out.train.split = dataset.split;
  out.val.split = Split::Val;
  for (std::size_t i = 0; i < n; ++i) {
    (to_val[i] ? out.val : out.train).samples.push_back(std::move(dataset.samples[i]));
  }
  return out;
}

LabeledDataset merge(LabeledDataset a, const LabeledDataset& b) {
  a.samples.insert(a.samples.end(), b.samples.begin(), b.samples.end());
  return a;
}

BatchIterator::BatchIterator(const LabeledDataset& dataset, std::size_t batch_size, bool shuffle, std::uint64_t seed)
    : dataset_(dataset), batch_size_(batch_size), shuffle_(shuffle), seed_(seed) {
  if (dataset.empty()) throw DataError("cannot iterate over empty dataset '" + dataset.name + "'");
  if (batch_size == 0) throw UsageError("batch size must be at least 1");
  const Shape& first = dataset.samples.front().image.shape();
  for (const auto& s : dataset.samples) {
    if (s.image.shape() != first) {
      throw ShapeError("dataset '" + dataset.name + "' mixes image shapes " + shape_str(first) + " and " +
                       shape_str(s.image.shape()));
    }
  }
  start_epoch(0);
}

void BatchIterator::start_epoch(std::size_t epoch) {
  const std::size_t n = dataset_.size();
  if (shuffle_) {
    Rng rng(mix_seed(seed_, epoch));
    order_ = rng.permutation(n);
  } else {
    order_.resize(n);
    for (std::size_t i = 0; i < n; ++i) order_[i] = i;
  }
  cursor_ = 0;
}

bool BatchIterator::next(Batch& batch) {
  if (cursor_ >= order_.size()) return false;
  const std::size_t count = std::min(batch_size_, order_.size() - cursor_);
  Shape shape{count};
  const Shape& img = dataset_.samples.front().image.shape();
  shape.insert(shape.end(), img.begin(), img.end());
  batch.images = Tensor(shape);
  batch.labels.resize(count);
  batch.indices.assign(order_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                       order_.begin() + static_cast<std::ptrdiff_t>(cursor_ + count));
  const std::size_t stride = shape_numel(img);
  for (std::size_t i = 0; i < count; ++i) {
    const Sample& s = dataset_.samples[batch.indices[i]];
    std::copy(s.image.data().begin(), s.image.data().end(), batch.images.data().begin() + static_cast<std::ptrdiff_t>(i * stride));
    batch.labels[i] = class_code(s.label);
  }
  cursor_ += count;
  return true;
}

std::size_t BatchIterator::batches_per_epoch() const noexcept { return (order_.size() + batch_size_ - 1) / batch_size_; }

}  // namespace remn
