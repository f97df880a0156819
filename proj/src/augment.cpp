#include "remn/augment.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <optional>
#include <sys/wait.h>
#include <thread>

#include "remn/image.hpp"
#include "remn/rng.hpp"

namespace remn {
namespace fs = std::filesystem;
using nlohmann::json;

AugmentationScheme AugmentationScheme::fixed(std::size_t target) {
  if (target == 0) throw UsageError("fixed augmentation target must be positive");
  return {Kind::FixedTarget, target};
}

AugmentationScheme AugmentationScheme::parse(std::string_view text) {
  std::string s(text);
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  if (s == "equalize" || s == "aug1") return equalize();
  if (s == "aug2") return fixed(10000);
  if (s == "aug3") return fixed(12500);
  if (s == "aug4") return fixed(15000);
  if (s.rfind("fixed:", 0) == 0) {
    const std::string_view num = std::string_view(s).substr(6);
    std::size_t n = 0;
    const auto [ptr, ec] = std::from_chars(num.data(), num.data() + num.size(), n);
    if (ec == std::errc{} && ptr == num.data() + num.size() && !num.empty()) return fixed(n);
  }
  throw UsageError("unknown augmentation scheme '" + std::string(text) +
                   "' (expected equalize, fixed:N or aug1..aug4)");
}

std::string AugmentationScheme::to_string() const {
  return kind == Kind::Equalize ? "equalize" : "fixed:" + std::to_string(target);
}

namespace {

template <typename F>
Histogram collect(const AugmentationPlan& plan, F field) {
  Histogram h{};
  for (std::size_t c = 0; c < kNumClasses; ++c) h[c] = field(plan.classes[c]);
  return h;
}

}  // namespace

Histogram AugmentationPlan::originals() const { return collect(*this, [](const ClassPlan& p) { return p.original; }); }
Histogram AugmentationPlan::targets() const { return collect(*this, [](const ClassPlan& p) { return p.target; }); }
Histogram AugmentationPlan::deficits() const { return collect(*this, [](const ClassPlan& p) { return p.deficit; }); }
Histogram AugmentationPlan::expected() const { return collect(*this, [](const ClassPlan& p) { return p.expected(); }); }
std::size_t AugmentationPlan::total_deficit() const { return histogram_total(deficits()); }

AugmentationPlan compute_plan(const Histogram& histogram, const AugmentationScheme& scheme, std::string dataset) {
  std::size_t target = scheme.target;
  if (scheme.kind == AugmentationScheme::Kind::Equalize) {
    target = *std::max_element(histogram.begin(), histogram.end());
    if (target == 0) throw UsageError("cannot equalize an empty histogram");
  }
  AugmentationPlan plan;
  plan.dataset = std::move(dataset);
  plan.scheme = scheme;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    plan.classes[c] = {histogram[c], target, histogram[c] < target ? target - histogram[c] : 0};
  }
  return plan;
}

json to_json(const AugmentationPlan& plan) {
  json classes = json::object();
  for (EmotionClass c : kAllClasses) {
    const ClassPlan& p = plan.at(c);
    classes[std::string(class_name(c))] = {{"original", p.original}, {"target", p.target}, {"deficit", p.deficit},
                                           {"expected", p.expected()}};
  }
  return {{"dataset", plan.dataset},
          {"scheme", plan.scheme.to_string()},
          {"total_deficit", plan.total_deficit()},
          {"classes", classes}};
}

// ---------------------------------------------------------------- prompts

namespace {

struct Subject {
  const char* word;
  const char* pronoun;
  std::vector<const char*> ages;
};

const std::vector<Subject>& subjects() {
  static const std::vector<Subject> s{
      {"man", "his", {"20's", "30's", "40's", "50's"}},
      {"woman", "her", {"20's", "30's", "40's", "50's"}},
      {"kid", "their", {"pre-teens", "early teens"}},
      {"old man", "his", {"60's", "70's", "80's"}},
      {"old woman", "her", {"60's", "70's", "80's"}},
  };
  return s;
}

struct Realism {
  const char* text;
  const char* keyword;
};

constexpr Realism kRealism[] = {
    {"realistic photo", "realistic"},
    {"studio portrait photo", "studio"},
    {"natural light photograph", "natural light"},
    {"high detail photograph", "high detail"},
};

const char* const kSlots[] = {"A", "a", "subject", "pronoun", "age", "emotion", "Emotion", "realism"};

bool known_slot(std::string_view s) {
  return std::find(std::begin(kSlots), std::end(kSlots), s) != std::end(kSlots);
}

std::vector<std::string> slots_in(const std::string& text) {
  std::vector<std::string> out;
  for (std::size_t pos = 0; (pos = text.find('{', pos)) != std::string::npos;) {
    const std::size_t end = text.find('}', pos);
    if (end == std::string::npos) throw UsageError("prompt template has an unclosed slot: " + text);
    out.push_back(text.substr(pos + 1, end - pos - 1));
    pos = end + 1;
  }
  return out;
}

void validate(const PromptTemplate& t) {
  bool has_emotion = false;
  for (const auto& s : slots_in(t.text)) {
    if (!known_slot(s)) throw UsageError("prompt template has unknown slot {" + s + "}: " + t.text);
    has_emotion = has_emotion || s == "emotion" || s == "Emotion";
  }
  if (!has_emotion) throw UsageError("prompt template lacks an {emotion} slot: " + t.text);
  for (const auto& k : t.keywords) {
    if (k == "A" || k == "a" || k == "Emotion" || !known_slot(k)) {
      throw UsageError("prompt template has invalid keyword slot '" + k + "'");
    }
  }
}

struct SlotValues {
  std::string subject, pronoun, age, emotion, realism, realism_keyword;

  std::string get(const std::string& slot) const {
    const auto article = [&] {
      return std::string("aeiou").find(subject.front()) != std::string::npos ? std::string("an") : std::string("a");
    };
    if (slot == "a") return article();
    if (slot == "A") {
      std::string a = article();
      a[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(a[0])));
      return a;
    }
    if (slot == "subject") return subject;
    if (slot == "pronoun") return pronoun;
    if (slot == "age") return age;
    if (slot == "emotion") return emotion;
    if (slot == "Emotion") {
      std::string e = emotion;
      e[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(e[0])));
      return e;
    }
    return realism;
  }
};

std::string expand(const std::string& text, const SlotValues& v) {
  std::string out;
  std::size_t pos = 0;
  while (true) {
    const std::size_t open = text.find('{', pos);
    if (open == std::string::npos) break;
    const std::size_t close = text.find('}', open);
    out.append(text, pos, open - pos);
    out += v.get(text.substr(open + 1, close - open - 1));
    pos = close + 1;
  }
  out.append(text, pos);
  return out;
}

}  // namespace

const std::vector<PromptTemplate>& default_templates() {
  static const std::vector<PromptTemplate> t{
      {"{A} {subject}'s face with {emotion} emotion", {"subject", "emotion"}},
      {"A face of {a} {subject} in {pronoun} {age} expressing {emotion} emotion", {"subject", "age", "emotion"}},
      {"{Emotion} expression on {a} {subject}, {realism}", {"emotion", "subject", "realism"}},
      {"{A} {subject} in {pronoun} {age} expressing {emotion} emotions on {pronoun} face",
       {"subject", "age", "emotion"}},
  };
  return t;
}

std::vector<PromptTemplate> templates_from_json(const json& j) {
  if (!j.is_array() || j.empty()) throw UsageError("prompt templates must be a nonempty JSON array");
  std::vector<PromptTemplate> out;
  for (const auto& item : j) {
    if (!item.is_object() || !item.contains("text") || !item["text"].is_string()) {
      throw UsageError("each prompt template needs a string 'text'");
    }
    PromptTemplate t{item["text"].get<std::string>(), {}};
    if (item.contains("keywords")) {
      if (!item["keywords"].is_array()) throw UsageError("prompt template 'keywords' must be an array");
      for (const auto& k : item["keywords"]) {
        if (!k.is_string()) throw UsageError("prompt template keywords must be strings");
        t.keywords.push_back(k.get<std::string>());
      }
    }
    validate(t);
    out.push_back(std::move(t));
  }
  return out;
}

Histogram PromptManifest::counts() const {
  Histogram h{};
  for (const auto& e : entries) ++h[static_cast<std::size_t>(class_code(e.label))];
  return h;
}

PromptManifest emit_manifest(const AugmentationPlan& plan, const std::vector<PromptTemplate>& templates,
                             std::uint64_t seed) {
  if (templates.empty()) throw UsageError("prompt template set is empty");
  for (const auto& t : templates) validate(t);

  PromptManifest m;
  m.dataset = plan.dataset;
  m.scheme = plan.scheme.to_string();
  m.entries.reserve(plan.total_deficit());
  const auto& subs = subjects();
  const std::size_t n_templates = templates.size();
  for (EmotionClass c : kAllClasses) {
    for (std::size_t k = 0; k < plan.at(c).deficit; ++k) {
      const PromptTemplate& t = templates[k % n_templates];
      const std::size_t round = k / n_templates;
      const Subject& s = subs[round % subs.size()];
      const std::size_t variant = round / subs.size();
      const Realism& r = kRealism[variant % std::size(kRealism)];

      SlotValues v{s.word, s.pronoun, s.ages[variant % s.ages.size()], std::string(class_keyword(c)), r.text,
                   r.keyword};
      ManifestEntry e;
      e.label = c;
      e.prompt = expand(t.text, v);
      for (const auto& slot : t.keywords) e.keywords.push_back(slot == "realism" ? v.realism_keyword : v.get(slot));
      e.seed = seed + m.entries.size();
      m.entries.push_back(std::move(e));
    }
  }
  return m;
}

json to_json(const PromptManifest& manifest) {
  json entries = json::array();
  for (const auto& e : manifest.entries) {
    entries.push_back(
        {{"class", class_name(e.label)}, {"prompt", e.prompt}, {"keywords", e.keywords}, {"seed", e.seed}});
  }
  return {{"version", manifest.version},
          {"dataset", manifest.dataset},
          {"scheme", manifest.scheme},
          {"entries", std::move(entries)}};
}

PromptManifest manifest_from_json(const json& j) {
  try {
    PromptManifest m;
    m.version = j.at("version").get<int>();
    if (m.version != PromptManifest::kVersion) {
      throw DataError("unsupported manifest version " + std::to_string(m.version));
    }
    m.dataset = j.at("dataset").get<std::string>();
    m.scheme = j.at("scheme").get<std::string>();
    for (const auto& item : j.at("entries")) {
      ManifestEntry e;
      const auto name = item.at("class").get<std::string>();
      const auto cls = class_from_name(name);
      if (!cls) throw DataError("manifest entry has unknown class '" + name + "'");
      e.label = *cls;
      e.prompt = item.at("prompt").get<std::string>();
      e.keywords = item.at("keywords").get<std::vector<std::string>>();
      e.seed = item.at("seed").get<std::uint64_t>();
      m.entries.push_back(std::move(e));
    }
    return m;
  } catch (const json::exception& ex) {
    throw DataError(std::string("malformed manifest: ") + ex.what());
  }
}

// ------------------------------------------------------------- generators

EmotionClass detect_emotion(std::string_view prompt) {
  static const std::pair<const char*, EmotionClass> kWords[] = {
      {"angry", EmotionClass::Angry},       {"anger", EmotionClass::Angry},
      {"disgust", EmotionClass::Disgust},   {"disgusted", EmotionClass::Disgust},
      {"fear", EmotionClass::Fear},         {"fearful", EmotionClass::Fear},
      {"happy", EmotionClass::Happy},       {"happiness", EmotionClass::Happy},
      {"sad", EmotionClass::Sad},           {"sadness", EmotionClass::Sad},
      {"surprise", EmotionClass::Surprise}, {"surprised", EmotionClass::Surprise},
      {"neutral", EmotionClass::Neutral},
  };
  std::optional<EmotionClass> found;
  std::string word;
  const auto flush = [&] {
    for (const auto& [w, c] : kWords) {
      if (word != w) continue;
      if (found && *found != c) {
        throw GenerationError("prompt names more than one emotion: " + std::string(prompt));
      }
      found = c;
    }
    word.clear();
  };
  for (char ch : prompt) {
    if (std::isalpha(static_cast<unsigned char>(ch))) {
      word += static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    } else {
      flush();
    }
  }
  flush();
  if (!found) throw GenerationError("prompt has no emotion keyword: " + std::string(prompt));
  return *found;
}

std::string stub_generate(const std::string& prompt, std::uint64_t seed) {
  constexpr std::size_t kSize = 64;
  constexpr double kPi = 3.141592653589793;
  const EmotionClass cls = detect_emotion(prompt);
  const int code = class_code(cls);

  // Class colour sits on a circle in the plane orthogonal to gray, so the
  // brightness jitter below never moves one class toward another.
  const double hue = 2.0 * kPi * code / kNumClasses;
  const double u[3] = {0.7071067811865476, -0.7071067811865476, 0.0};
  const double v[3] = {0.4082482904638631, 0.4082482904638631, -0.8164965809277261};
  double base[3];
  for (int c = 0; c < 3; ++c) base[c] = 60.0 * (std::cos(hue) * u[c] + std::sin(hue) * v[c]);

  Rng rng(mix_seed(seed, 0x737475620000ULL + static_cast<std::uint64_t>(code)));
  const double brightness = 128.0 + rng.uniform(-12.0, 12.0);
  const double phase = rng.uniform(0.0, 2.0 * kPi);
  const double freq = 2.0 + code;  // whole cycles across the image
  const double angle = kPi * code / kNumClasses;
  const double dx = std::cos(angle), dy = std::sin(angle);

  Image8 img{kSize, kSize, 3, std::vector<std::uint8_t>(kSize * kSize * 3)};
  for (std::size_t y = 0; y < kSize; ++y) {
    for (std::size_t x = 0; x < kSize; ++x) {
      const double t = (dx * static_cast<double>(x) + dy * static_cast<double>(y)) / kSize;
      const double stripe = 25.0 * std::sin(2.0 * kPi * freq * t + phase);
      for (std::size_t c = 0; c < 3; ++c) {
        const double value = brightness + base[c] + stripe + rng.uniform(-6.0, 6.0);
        img.at(y, x, c) = static_cast<std::uint8_t>(std::clamp(std::lround(value), 0L, 255L));
      }
    }
  }
  return encode_pnm(img);
}

namespace {

std::string shell_quote(const std::string& s) {
  std::string out = "'";
  for (char c : s) {
    if (c == '\'') {
      out += "'\\''";
    } else {
      out += c;
    }
  }
  return out + "'";
}

}  // namespace

CommandGenerator::CommandGenerator(std::string command) : command_(std::move(command)) {
  if (command_.empty()) throw UsageError("generator command is empty");
}

std::string CommandGenerator::generate(const std::string& prompt, std::uint64_t seed) {
  const std::string cmd = command_ + " " + shell_quote(prompt) + " " + std::to_string(seed);
  FILE* pipe = ::popen(cmd.c_str(), "r");
  if (!pipe) throw GenerationError("could not start generator command");
  std::string out;
  char buf[8192];
  std::size_t n = 0;
  while ((n = std::fread(buf, 1, sizeof buf, pipe)) > 0) out.append(buf, n);
  const int status = ::pclose(pipe);
  if (status == -1) throw GenerationError("could not wait for generator command");
  if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) {
    throw GenerationError("generator command exited with status " +
                          std::to_string(WIFEXITED(status) ? WEXITSTATUS(status) : status));
  }
  if (out.empty()) throw GenerationError("generator command produced no output");
  return out;
}

// ------------------------------------------------------------- generation

std::size_t GenerationReport::requested() const {
  std::size_t n = 0;
  for (const auto& c : classes) n += c.requested;
  return n;
}

std::size_t GenerationReport::succeeded() const {
  std::size_t n = 0;
  for (const auto& c : classes) n += c.succeeded();
  return n;
}

json to_json(const GenerationReport& report) {
  json classes = json::object();
  for (EmotionClass c : kAllClasses) {
    const auto& g = report.classes[static_cast<std::size_t>(class_code(c))];
    json failed = json::array();
    for (const auto& f : g.failed) failed.push_back({{"seed", f.seed}, {"reason", f.reason}});
    classes[std::string(class_name(c))] = {{"requested", g.requested},
                                           {"succeeded", g.succeeded()},
                                           {"generated", g.generated},
                                           {"skipped_existing", g.skipped_existing},
                                           {"failed", std::move(failed)}};
  }
  return {{"generator", report.generator},
          {"requested", report.requested()},
          {"succeeded", report.succeeded()},
          {"classes", std::move(classes)}};
}

fs::path generated_image_path(const fs::path& out_dir, const ManifestEntry& entry) {
  return out_dir / std::string(class_name(entry.label)) / (std::to_string(entry.seed) + ".ppm");
}

namespace {

Image8 to_rgb_at_size(const Image8& src, std::size_t size) {
  if (src.width == size && src.height == size && src.channels == 3) return src;
  Tensor t({3, src.height, src.width});
  for (std::size_t c = 0; c < 3; ++c) {
    const std::size_t sc = src.channels == 1 ? 0 : c;
    for (std::size_t y = 0; y < src.height; ++y) {
      for (std::size_t x = 0; x < src.width; ++x) t[(c * src.height + y) * src.width + x] = src.at(y, x, sc);
    }
  }
  const Tensor r = resize_bilinear(t, size, size);
  Image8 out{size, size, 3, std::vector<std::uint8_t>(size * size * 3)};
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t y = 0; y < size; ++y) {
      for (std::size_t x = 0; x < size; ++x) {
        const long v = std::lround(r[(c * size + y) * size + x]);
        out.at(y, x, c) = static_cast<std::uint8_t>(std::clamp(v, 0L, 255L));
      }
    }
  }
  return out;
}

enum class Outcome { Generated, Skipped, Failed };

struct EntryResult {
  Outcome outcome = Outcome::Failed;
  std::string reason;
};

EntryResult generate_one(const ManifestEntry& entry, Generator& generator, const fs::path& out_dir,
                         std::size_t size) {
  const fs::path path = generated_image_path(out_dir, entry);
  std::error_code ec;
  if (fs::exists(path, ec)) return {Outcome::Skipped, {}};
  try {
    const std::string bytes = generator.generate(entry.prompt, entry.seed);
    const Image8 img = to_rgb_at_size(decode_pnm(bytes, "generator output for seed " + std::to_string(entry.seed)), size);
    fs::create_directories(path.parent_path());
    write_file_atomic(path, encode_pnm(img));
    return {Outcome::Generated, {}};
  } catch (const std::exception& ex) {
    return {Outcome::Failed, ex.what()};
  }
}

}  // namespace

GenerationReport run_generation(const PromptManifest& manifest, Generator& generator, const fs::path& out_dir,
                                const GenerationOptions& options) {
  if (options.image_size == 0) throw UsageError("generation image size must be positive");
  fs::create_directories(out_dir);

  std::vector<EntryResult> results(manifest.entries.size());
  std::atomic<std::size_t> next{0};
  const auto worker = [&] {
    for (std::size_t i = next++; i < results.size(); i = next++) {
      results[i] = generate_one(manifest.entries[i], generator, out_dir, options.image_size);
    }
  };
  const std::size_t threads = std::clamp<std::size_t>(options.threads, 1, std::max<std::size_t>(results.size(), 1));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  GenerationReport report;
  report.generator = generator.name();
  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto& e = manifest.entries[i];
    auto& g = report.classes[static_cast<std::size_t>(class_code(e.label))];
    ++g.requested;
    switch (results[i].outcome) {
      case Outcome::Generated: ++g.generated; break;
      case Outcome::Skipped: ++g.skipped_existing; break;
      case Outcome::Failed: g.failed.push_back({e.seed, results[i].reason}); break;
    }
  }
  return report;
}

void verify_histogram(const Histogram& histogram, const AugmentationPlan& plan) {
  for (EmotionClass c : kAllClasses) {
    const std::size_t expected = plan.at(c).expected();
    const std::size_t actual = histogram[static_cast<std::size_t>(class_code(c))];
    if (actual != expected) {
      throw DataError("class " + std::string(class_name(c)) + ": expected " + std::to_string(expected) +
                      " samples after merge, found " + std::to_string(actual));
    }
  }
}

LabeledDataset merge_and_verify(LabeledDataset real, const LabeledDataset& synthetic, const AugmentationPlan& plan) {
  LabeledDataset merged = merge(std::move(real), synthetic);
  verify_histogram(merged.histogram(), plan);
  return merged;
}

LabeledDataset merge_and_verify(LabeledDataset real, const fs::path& synth_dir, const AugmentationPlan& plan,
                                const ImageOptions& options) {
  return merge_and_verify(std::move(real), load_image_folder(synth_dir, options, Origin::Synthetic), plan);
}

}  // namespace remn
