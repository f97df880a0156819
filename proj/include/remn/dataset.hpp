#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "remn/emotion.hpp"
#include "remn/image.hpp"
#include "remn/tensor.hpp"

namespace remn {

enum class Origin { Real, Synthetic };
enum class Split { Train, Val, Test };

std::string_view split_name(Split s) noexcept;
std::string_view origin_name(Origin o) noexcept;

struct Sample {
  Tensor image;  // [3,H,W], normalized
  EmotionClass label = EmotionClass::Neutral;
  Origin origin = Origin::Real;
  std::string source_id;
};

struct LabeledDataset {
  std::string name;
  Split split = Split::Train;
  std::vector<Sample> samples;

  std::size_t size() const noexcept { return samples.size(); }
  bool empty() const noexcept { return samples.empty(); }
  Histogram histogram() const;
};

/// Raw partition tag -> split. Tags are matched exactly.
struct SplitSpec {
  std::map<std::string, Split> tags;

  /// Training -> train, PublicTest -> val, PrivateTest -> test.
  static SplitSpec fer2013();
};

/// Parses `emotion,pixels,Usage` rows of 48x48 grayscale pixels. Errors
/// (DataError) cite the line number. Splits with no rows are absent.
std::map<Split, LabeledDataset> load_fer2013_csv(const std::filesystem::path& path, const SplitSpec& splits,
                                                 const ImageOptions& options = {});

/// Validates every row like load_fer2013_csv but keeps only the per-split
/// class counts.
std::map<Split, Histogram> summarize_fer2013_csv(const std::filesystem::path& path, const SplitSpec& splits);

/// `<root>/<ClassName>/<file>` with binary PGM/PPM files. Class directory
/// names match case-insensitively; files load in lexicographic path order.
/// Regular files directly under root and dot-files are ignored.
LabeledDataset load_image_folder(const std::filesystem::path& root, const ImageOptions& options = {},
                                 Origin origin = Origin::Real);

/// Same directory rules as load_image_folder, without decoding.
Histogram count_image_folder(const std::filesystem::path& root);

struct HoldoutSplit {
  LabeledDataset train;
  LabeledDataset val;
};

/// Moves a seeded random `fraction` of samples into a validation set. Both
/// parts keep the original relative order.
HoldoutSplit holdout_split(LabeledDataset dataset, double fraction, std::uint64_t seed);

/// Concatenation; keeps `a`'s name and split.
LabeledDataset merge(LabeledDataset a, const LabeledDataset& b);

struct Batch {
  Tensor images;  // [N,3,H,W]
  std::vector<int> labels;
  std::vector<std::size_t> indices;  // positions in the dataset
};

/// Epoch-wise batching. With shuffle the order is a permutation derived
/// from (seed, epoch) alone; the last batch may be short.
class BatchIterator {
 public:
  BatchIterator(const LabeledDataset& dataset, std::size_t batch_size, bool shuffle, std::uint64_t seed);

  void start_epoch(std::size_t epoch);
  /// False once the epoch is exhausted.
  bool next(Batch& batch);
  std::size_t batches_per_epoch() const noexcept;
  const std::vector<std::size_t>& order() const noexcept { return order_; }

 private:
  const LabeledDataset& dataset_;
  std::size_t batch_size_;
  bool shuffle_;
  std::uint64_t seed_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

}  // namespace remn
