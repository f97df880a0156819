#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "remn/dataset.hpp"
#include "remn/emotion.hpp"
#include "remn/errors.hpp"

namespace remn {

struct AugmentationScheme {
  enum class Kind { Equalize, FixedTarget };
  Kind kind = Kind::Equalize;
  std::size_t target = 0;  // FixedTarget only

  static AugmentationScheme equalize() { return {Kind::Equalize, 0}; }
  static AugmentationScheme fixed(std::size_t target);

  /// "equalize", "fixed:N", or the named presets aug1 (equalize), aug2
  /// (10000), aug3 (12500), aug4 (15000). Throws UsageError.
  static AugmentationScheme parse(std::string_view text);
  std::string to_string() const;

  friend bool operator==(const AugmentationScheme&, const AugmentationScheme&) = default;
};

struct ClassPlan {
  std::size_t original = 0;
  std::size_t target = 0;
  std::size_t deficit = 0;

  /// Count after merging: classes above target keep all their samples.
  std::size_t expected() const noexcept { return original + deficit; }
};

struct AugmentationPlan {
  std::string dataset;
  AugmentationScheme scheme;
  std::array<ClassPlan, kNumClasses> classes{};

  const ClassPlan& at(EmotionClass c) const { return classes[static_cast<std::size_t>(class_code(c))]; }
  Histogram originals() const;
  Histogram targets() const;
  Histogram deficits() const;
  Histogram expected() const;
  std::size_t total_deficit() const;
};

/// Equalize targets max(histogram); FixedTarget(n) targets n. Deficit is
/// max(0, target - original). Throws UsageError for Equalize on an
/// all-zero histogram.
AugmentationPlan compute_plan(const Histogram& histogram, const AugmentationScheme& scheme, std::string dataset = "");

nlohmann::json to_json(const AugmentationPlan& plan);

/// Prompt pattern with slots {A} {a} (article for the subject), {subject},
/// {pronoun}, {age}, {emotion}, {Emotion}, {realism}. `keywords` lists the
/// slot values recorded as keywords, in order; the slot "realism" records
/// the short realism keyword.
struct PromptTemplate {
  std::string text;
  std::vector<std::string> keywords;
};

/// Four patterns in the style of the sample prompts, e.g.
/// "A man's face with surprise emotion" with keywords [man, surprise].
const std::vector<PromptTemplate>& default_templates();

/// Reads [{"text": ..., "keywords": [...]}, ...]. Throws UsageError.
std::vector<PromptTemplate> templates_from_json(const nlohmann::json& j);

struct ManifestEntry {
  EmotionClass label = EmotionClass::Neutral;
  std::string prompt;
  std::vector<std::string> keywords;
  std::uint64_t seed = 0;

  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

struct PromptManifest {
  static constexpr int kVersion = 1;
  int version = kVersion;
  std::string dataset;
  std::string scheme;
  std::vector<ManifestEntry> entries;

  Histogram counts() const;
  friend bool operator==(const PromptManifest&, const PromptManifest&) = default;
};

/// One entry per missing image, classes in code order. Within a class,
/// entry k uses template k mod T, subject (k / T) mod 5, and cycles age
/// bands and realism tags the same way. Entry i overall gets seed
/// `seed + i`.
PromptManifest emit_manifest(const AugmentationPlan& plan, const std::vector<PromptTemplate>& templates,
                             std::uint64_t seed);

nlohmann::json to_json(const PromptManifest& manifest);
/// Throws DataError on a malformed document.
PromptManifest manifest_from_json(const nlohmann::json& j);

class GenerationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Text-to-image backend. Returns PGM/PPM bytes. Must tolerate concurrent
/// calls when generation runs with more than one thread.
class Generator {
 public:
  virtual ~Generator() = default;
  virtual std::string generate(const std::string& prompt, std::uint64_t seed) = 0;
  virtual std::string name() const = 0;
};

/// Emotion named by the prompt's keywords. Throws GenerationError when no
/// emotion, or more than one, is mentioned.
EmotionClass detect_emotion(std::string_view prompt);

/// Deterministic 64x64 P6 image: a class-specific base colour and stripe
/// frequency/orientation, with seed-driven phase, brightness and noise.
std::string stub_generate(const std::string& prompt, std::uint64_t seed);

class StubGenerator : public Generator {
 public:
  std::string generate(const std::string& prompt, std::uint64_t seed) override { return stub_generate(prompt, seed); }
  std::string name() const override { return "stub"; }
};

/// Runs `<command> '<prompt>' <seed>` through the shell and takes the
/// image from its standard output. A nonzero exit status is a failure.
class CommandGenerator : public Generator {
 public:
  explicit CommandGenerator(std::string command);
  std::string generate(const std::string& prompt, std::uint64_t seed) override;
  std::string name() const override { return "command:" + command_; }

 private:
  std::string command_;
};

struct FailedEntry {
  std::uint64_t seed = 0;
  std::string reason;
};

struct ClassGeneration {
  std::size_t requested = 0;
  std::size_t generated = 0;
  std::size_t skipped_existing = 0;
  std::vector<FailedEntry> failed;

  std::size_t succeeded() const noexcept { return generated + skipped_existing; }
};

struct GenerationReport {
  std::string generator;
  std::array<ClassGeneration, kNumClasses> classes{};

  std::size_t requested() const;
  std::size_t succeeded() const;
  bool all_failed() const { return requested() > 0 && succeeded() == 0; }
};

nlohmann::json to_json(const GenerationReport& report);

struct GenerationOptions {
  std::size_t threads = 1;
  std::size_t image_size = 64;
};

/// Path of the image for `entry` under `out_dir`: <ClassName>/<seed>.ppm.
std::filesystem::path generated_image_path(const std::filesystem::path& out_dir, const ManifestEntry& entry);

/// Requests every entry whose file does not exist yet, resizes the result
/// to image_size and writes it as PPM. Failures are recorded, not thrown.
GenerationReport run_generation(const PromptManifest& manifest, Generator& generator,
                                const std::filesystem::path& out_dir, const GenerationOptions& options = {});

/// Throws DataError naming the first class whose count differs from the
/// plan's expected count.
void verify_histogram(const Histogram& histogram, const AugmentationPlan& plan);

/// Appends `synthetic` to `real` (origin flags preserved) and verifies the
/// merged histogram against the plan.
LabeledDataset merge_and_verify(LabeledDataset real, const LabeledDataset& synthetic, const AugmentationPlan& plan);

/// Loads `synth_dir` as synthetic samples, then merges and verifies.
LabeledDataset merge_and_verify(LabeledDataset real, const std::filesystem::path& synth_dir,
                                const AugmentationPlan& plan, const ImageOptions& options = {});

}  // namespace remn
