#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "remn/augment.hpp"
#include "remn/image.hpp"
#include "test_util.hpp"

using namespace remn;
using namespace remn::testing;

namespace {

// Code order: Angry, Disgust, Fear, Happy, Sad, Surprise, Neutral.
constexpr Histogram kFer{3995, 436, 4097, 7215, 4830, 3171, 4965};
constexpr Histogram kRaf{705, 717, 281, 4772, 1982, 1290, 2524};

Histogram constant(std::size_t v) {
  Histogram h;
  h.fill(v);
  return h;
}

LabeledDataset tiny_dataset(const Histogram& h, Origin origin) {
  LabeledDataset ds;
  ds.name = "tiny";
  for (EmotionClass c : kAllClasses) {
    for (std::size_t i = 0; i < h[std::size_t(class_code(c))]; ++i) {
      ds.samples.push_back(Sample{Tensor({3, 1, 1}), c, origin, ""});
    }
  }
  return ds;
}

std::size_t count_files(const std::filesystem::path& dir) {
  std::size_t n = 0;
  for (const auto& e : std::filesystem::recursive_directory_iterator(dir)) n += e.is_regular_file();
  return n;
}

class FailingGenerator : public Generator {
 public:
  std::string generate(const std::string&, std::uint64_t seed) override {
    throw GenerationError("backend down for " + std::to_string(seed));
  }
  std::string name() const override { return "failing"; }
};

}  // namespace

TEST(AugmentScheme, ParsesPresetsAndFixedTargets) {
  EXPECT_EQ(AugmentationScheme::parse("aug1"), AugmentationScheme::equalize());
  EXPECT_EQ(AugmentationScheme::parse("Equalize"), AugmentationScheme::equalize());
  EXPECT_EQ(AugmentationScheme::parse("aug2").target, 10000u);
  EXPECT_EQ(AugmentationScheme::parse("aug3").target, 12500u);
  EXPECT_EQ(AugmentationScheme::parse("aug4").target, 15000u);
  EXPECT_EQ(AugmentationScheme::parse("fixed:42"), AugmentationScheme::fixed(42));
  EXPECT_EQ(AugmentationScheme::parse("fixed:42").to_string(), "fixed:42");
  for (const char* bad : {"", "aug5", "fixed:", "fixed:-3", "fixed:0", "fixed:12x"}) {
    EXPECT_THROW(AugmentationScheme::parse(bad), UsageError) << bad;
  }
}

TEST(AugmentPlan, ReproducesAugmentedDistributionTable) {
  struct Column {
    const char* scheme;
    std::size_t fer, raf;
  };
  for (const Column col : {Column{"aug1", 7215, 4772}, Column{"aug2", 10000, 10000}, Column{"aug3", 12500, 12500},
                           Column{"aug4", 15000, 15000}}) {
    const auto scheme = AugmentationScheme::parse(col.scheme);
    const auto fer = compute_plan(kFer, scheme, "fer2013");
    const auto raf = compute_plan(kRaf, scheme, "rafdb");
    EXPECT_EQ(fer.expected(), constant(col.fer)) << col.scheme;
    EXPECT_EQ(raf.expected(), constant(col.raf)) << col.scheme;
    EXPECT_EQ(fer.originals(), kFer);
    EXPECT_EQ(raf.originals(), kRaf);
  }
  EXPECT_EQ(histogram_total(kFer), 28709u);
  EXPECT_EQ(histogram_total(kRaf), 12271u);
}

TEST(AugmentPlan, DeficitExamples) {
  const auto eq = compute_plan(kFer, AugmentationScheme::equalize());
  EXPECT_EQ(eq.at(EmotionClass::Disgust).target, 7215u);
  EXPECT_EQ(eq.at(EmotionClass::Disgust).deficit, 6779u);
  EXPECT_EQ(eq.at(EmotionClass::Happy).deficit, 0u);
  const auto raf = compute_plan(kRaf, AugmentationScheme::fixed(15000));
  EXPECT_EQ(raf.at(EmotionClass::Fear).target, 15000u);
  EXPECT_EQ(raf.at(EmotionClass::Fear).deficit, 14719u);
}

TEST(AugmentPlan, OverfullClassesAreKept) {
  const auto plan = compute_plan(kFer, AugmentationScheme::fixed(4000));
  EXPECT_EQ(plan.at(EmotionClass::Happy).deficit, 0u);
  EXPECT_EQ(plan.at(EmotionClass::Happy).expected(), 7215u);
  EXPECT_EQ(plan.at(EmotionClass::Angry).deficit, 5u);
  EXPECT_EQ(plan.at(EmotionClass::Angry).expected(), 4000u);
}

TEST(AugmentPlan, PropertiesOnRandomHistograms) {
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    Histogram h;
    for (auto& v : h) v = rng.below(5000);
    const std::size_t n = 1 + rng.below(6000);
    for (const auto& scheme : {AugmentationScheme::fixed(n), AugmentationScheme::equalize()}) {
      if (histogram_total(h) == 0) continue;
      const auto plan = compute_plan(h, scheme);
      for (const auto& p : plan.classes) {
        if (p.target >= p.original) {
          EXPECT_EQ(p.original + p.deficit, p.target);
        } else {
          EXPECT_EQ(p.deficit, 0u);
        }
      }
      if (scheme.kind == AugmentationScheme::Kind::Equalize) {
        EXPECT_EQ(plan.expected(), constant(*std::max_element(h.begin(), h.end())));
      }
    }
  }
}

TEST(AugmentPlan, EqualizingAnEmptyHistogramIsAnError) {
  EXPECT_THROW(compute_plan(Histogram{}, AugmentationScheme::equalize()), UsageError);
  EXPECT_EQ(compute_plan(Histogram{}, AugmentationScheme::fixed(3)).total_deficit(), 21u);
}

TEST(AugmentManifest, SmallDeficitUsesFirstTemplate) {
  Histogram h = constant(5);
  h[std::size_t(class_code(EmotionClass::Surprise))] = 3;
  const auto m = emit_manifest(compute_plan(h, AugmentationScheme::fixed(5)), default_templates(), 100);
  ASSERT_EQ(m.entries.size(), 2u);
  EXPECT_EQ(m.entries[0].label, EmotionClass::Surprise);
  EXPECT_EQ(m.entries[0].prompt, "A man's face with surprise emotion");
  EXPECT_EQ(m.entries[0].keywords, (std::vector<std::string>{"man", "surprise"}));
  EXPECT_EQ(m.entries[0].seed, 100u);
  EXPECT_EQ(m.entries[1].seed, 101u);
}

TEST(AugmentManifest, CoversSamplePromptStyles) {
  const auto m = emit_manifest(compute_plan(Histogram{}, AugmentationScheme::fixed(60)), default_templates(), 1);
  const auto has = [&](EmotionClass c, const std::string& prompt, std::vector<std::string> keywords) {
    return std::any_of(m.entries.begin(), m.entries.end(), [&](const ManifestEntry& e) {
      return e.label == c && e.prompt == prompt && e.keywords == keywords;
    });
  };
  EXPECT_TRUE(has(EmotionClass::Surprise, "A man's face with surprise emotion", {"man", "surprise"}));
  EXPECT_TRUE(has(EmotionClass::Disgust, "A face of a woman in her 30's expressing disgust emotion",
                  {"woman", "30's", "disgust"}));
  EXPECT_TRUE(has(EmotionClass::Happy, "Happy expression on a kid, realistic photo", {"happy", "kid", "realistic"}));
  EXPECT_TRUE(has(EmotionClass::Neutral, "An old man in his 80's expressing neutral emotions on his face",
                  {"old man", "80's", "neutral"}));
}

TEST(AugmentManifest, CountsMatchDeficitsAndSeedsAreDistinct) {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    Histogram h;
    for (auto& v : h) v = rng.below(300);
    const auto plan = compute_plan(h, AugmentationScheme::fixed(1 + rng.below(300)));
    const auto m = emit_manifest(plan, default_templates(), rng.next_u64() >> 8);
    EXPECT_EQ(m.counts(), plan.deficits());
    std::set<std::uint64_t> seeds;
    for (const auto& e : m.entries) {
      seeds.insert(e.seed);
      EXPECT_EQ(detect_emotion(e.prompt), e.label) << e.prompt;
    }
    EXPECT_EQ(seeds.size(), m.entries.size());
  }
}

TEST(AugmentManifest, DeterministicAndRoundTripsThroughJson) {
  const auto plan = compute_plan(kRaf, AugmentationScheme::fixed(800), "rafdb");
  const auto a = emit_manifest(plan, default_templates(), 9);
  const auto b = emit_manifest(plan, default_templates(), 9);
  EXPECT_EQ(a, b);
  EXPECT_EQ(manifest_from_json(nlohmann::json::parse(to_json(a).dump())), a);
  const auto j = to_json(a);
  EXPECT_EQ(j["version"], 1);
  EXPECT_EQ(j["dataset"], "rafdb");
  EXPECT_EQ(j["scheme"], "fixed:800");
  EXPECT_EQ(j["entries"][0]["class"], "Angry");
}

TEST(AugmentManifest, ZeroDeficitGivesEmptyManifest) {
  EXPECT_TRUE(emit_manifest(compute_plan(kFer, AugmentationScheme::fixed(10)), default_templates(), 0).entries.empty());
}

TEST(AugmentManifest, RejectsBadTemplates) {
  const auto plan = compute_plan(constant(1), AugmentationScheme::fixed(2));
  EXPECT_THROW(emit_manifest(plan, {}, 0), UsageError);
  EXPECT_THROW(emit_manifest(plan, {{"A {subject} face", {"subject"}}}, 0), UsageError);
  EXPECT_THROW(emit_manifest(plan, {{"{emotion} {colour}", {}}}, 0), UsageError);
  EXPECT_THROW(emit_manifest(plan, {{"{emotion} face", {"hair"}}}, 0), UsageError);
  const auto custom = templates_from_json(nlohmann::json::parse(R"([{"text": "{Emotion} {subject}", "keywords": ["emotion"]}])"));
  const auto m = emit_manifest(plan, custom, 0);
  EXPECT_EQ(m.entries[0].prompt, "Angry man");
  EXPECT_THROW(templates_from_json(nlohmann::json::array()), UsageError);
  EXPECT_THROW(manifest_from_json(nlohmann::json{{"version", 2}}), DataError);
  EXPECT_THROW(manifest_from_json(nlohmann::json{{"version", 1}}), DataError);
}

TEST(StubGenerator, DetectsExactlyOneEmotion) {
  EXPECT_EQ(detect_emotion("Happy expression on a kid"), EmotionClass::Happy);
  EXPECT_EQ(detect_emotion("a SURPRISED face"), EmotionClass::Surprise);
  EXPECT_EQ(detect_emotion("angry, anger"), EmotionClass::Angry);
  EXPECT_THROW(detect_emotion("a portrait"), GenerationError);
  EXPECT_THROW(detect_emotion("happy and sad"), GenerationError);
  EXPECT_THROW(detect_emotion("unhappy"), GenerationError);
}

TEST(StubGenerator, DeterministicPerPromptAndSeed) {
  const auto a = stub_generate("a happy face", 7);
  EXPECT_EQ(a, stub_generate("a happy face", 7));
  EXPECT_NE(a, stub_generate("a happy face", 8));
  EXPECT_NE(a, stub_generate("a sad face", 7));
  const Image8 img = decode_pnm(a, "stub");
  EXPECT_EQ(img.width, 64u);
  EXPECT_EQ(img.height, 64u);
  EXPECT_EQ(img.channels, 3u);
  EXPECT_THROW(stub_generate("a face", 7), GenerationError);
}

TEST(StubGenerator, LinearProbeOnMeanPixelsSeparatesClasses) {
  const auto features = [](std::uint64_t base_seed) {
    const auto plan = compute_plan(Histogram{}, AugmentationScheme::fixed(100));
    const auto m = emit_manifest(plan, default_templates(), base_seed);
    std::vector<std::array<double, 4>> x;
    std::vector<int> y;
    for (const auto& e : m.entries) {
      const Image8 img = decode_pnm(stub_generate(e.prompt, e.seed), "stub");
      std::array<double, 4> f{0, 0, 0, 1};
      for (std::size_t i = 0; i < img.pixels.size(); ++i) f[i % 3] += img.pixels[i];
      for (int c = 0; c < 3; ++c) f[c] = f[c] / (64.0 * 64.0 * 255.0) - 0.5;
      x.push_back(f);
      y.push_back(class_code(e.label));
    }
    return std::pair{x, y};
  };
  const auto [train_x, train_y] = features(1000);
  const auto [test_x, test_y] = features(50000);

  // Multinomial logistic regression, full-batch gradient descent.
  std::array<std::array<double, 4>, kNumClasses> w{};
  const auto scores = [&](const std::array<double, 4>& f) {
    std::array<double, kNumClasses> s{};
    for (std::size_t k = 0; k < kNumClasses; ++k) {
      for (int d = 0; d < 4; ++d) s[k] += w[k][d] * f[d];
    }
    return s;
  };
  for (int step = 0; step < 2000; ++step) {
    std::array<std::array<double, 4>, kNumClasses> g{};
    for (std::size_t i = 0; i < train_x.size(); ++i) {
      auto s = scores(train_x[i]);
      const double mx = *std::max_element(s.begin(), s.end());
      double z = 0;
      for (auto& v : s) z += (v = std::exp(v - mx));
      for (std::size_t k = 0; k < kNumClasses; ++k) {
        const double err = s[k] / z - (int(k) == train_y[i] ? 1.0 : 0.0);
        for (int d = 0; d < 4; ++d) g[k][d] += err * train_x[i][d];
      }
    }
    for (std::size_t k = 0; k < kNumClasses; ++k) {
      for (int d = 0; d < 4; ++d) w[k][d] -= 20.0 * g[k][d] / double(train_x.size());
    }
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < test_x.size(); ++i) {
    const auto s = scores(test_x[i]);
    correct += int(std::max_element(s.begin(), s.end()) - s.begin()) == test_y[i];
  }
  EXPECT_GE(double(correct) / double(test_x.size()), 0.99);
}

TEST(Generation, WritesOneFilePerEntryAndIsIdempotent) {
  const auto dir = scratch_dir("augment_gen");
  Histogram h = constant(3);
  h[std::size_t(class_code(EmotionClass::Fear))] = 0;
  h[std::size_t(class_code(EmotionClass::Sad))] = 1;
  const auto m = emit_manifest(compute_plan(h, AugmentationScheme::fixed(3)), default_templates(), 40);
  ASSERT_EQ(m.entries.size(), 5u);

  StubGenerator stub;
  const auto first = run_generation(m, stub, dir, {2, 64});
  EXPECT_EQ(first.requested(), 5u);
  EXPECT_EQ(first.succeeded(), 5u);
  EXPECT_EQ(first.classes[std::size_t(class_code(EmotionClass::Fear))].generated, 3u);
  EXPECT_EQ(count_files(dir), 5u);
  for (const auto& e : m.entries) {
    const auto path = generated_image_path(dir, e);
    EXPECT_EQ(path.parent_path().filename(), std::string(class_name(e.label)));
    EXPECT_EQ(read_pnm(path), decode_pnm(stub_generate(e.prompt, e.seed), "stub"));
  }

  const auto second = run_generation(m, stub, dir);
  EXPECT_EQ(second.succeeded(), 5u);
  std::size_t generated = 0;
  for (const auto& c : second.classes) generated += c.generated;
  EXPECT_EQ(generated, 0u);
  EXPECT_EQ(count_files(dir), 5u);
  EXPECT_EQ(to_json(second)["classes"]["Fear"]["skipped_existing"], 3);
}

TEST(Generation, FailuresAreRecordedPerEntry) {
  const auto dir = scratch_dir("augment_fail");
  const auto m = emit_manifest(compute_plan(constant(1), AugmentationScheme::fixed(2)), default_templates(), 0);
  FailingGenerator failing;
  const auto report = run_generation(m, failing, dir);
  EXPECT_TRUE(report.all_failed());
  ASSERT_EQ(report.classes[0].failed.size(), 1u);
  EXPECT_EQ(report.classes[0].failed[0].seed, 0u);
  EXPECT_NE(report.classes[0].failed[0].reason.find("backend down"), std::string::npos);
  EXPECT_EQ(to_json(report)["classes"]["Angry"]["failed"][0]["seed"], 0);
  EXPECT_EQ(count_files(dir), 0u);
}

TEST(Generation, CommandGeneratorPassesPromptAndSeed) {
  const auto dir = scratch_dir("augment_cmd");
  const auto script = dir / "gen.sh";
  write_text(script,
             "printf '%s|%s' \"$1\" \"$2\" > \"$(dirname \"$0\")/last_args\"\n"
             "printf 'P5\\n2 2\\n255\\n\\000\\100\\200\\377'\n");
  CommandGenerator gen("sh " + script.string());
  const Image8 img = decode_pnm(gen.generate("A man's face with surprise emotion", 12), "cmd");
  EXPECT_EQ(img.width, 2u);
  std::ifstream in(dir / "last_args");
  std::string args((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  EXPECT_EQ(args, "A man's face with surprise emotion|12");

  ManifestEntry e{EmotionClass::Sad, "sad", {"sad"}, 77};
  const auto report = run_generation(PromptManifest{1, "d", "s", {e}}, gen, dir / "out");
  EXPECT_EQ(report.succeeded(), 1u);
  const Image8 out = read_pnm(generated_image_path(dir / "out", e));
  EXPECT_EQ(out.width, 64u);
  EXPECT_EQ(out.channels, 3u);
  EXPECT_EQ(out.at(0, 0, 0), 0);
  EXPECT_EQ(out.at(63, 63, 2), 255);

  CommandGenerator broken("sh -c 'exit 3' x");
  try {
    broken.generate("happy", 1);
    FAIL() << "expected GenerationError";
  } catch (const GenerationError& ex) {
    EXPECT_NE(std::string(ex.what()).find("status 3"), std::string::npos);
  }
}

TEST(MergeAndVerify, FillsDistributionsToTarget) {
  {
    const auto plan = compute_plan(kFer, AugmentationScheme::equalize());
    const auto merged = merge_and_verify(tiny_dataset(kFer, Origin::Real),
                                         tiny_dataset(plan.deficits(), Origin::Synthetic), plan);
    EXPECT_EQ(merged.histogram(), constant(7215));
  }
  const auto plan = compute_plan(kRaf, AugmentationScheme::parse("aug2"));
  const auto merged =
      merge_and_verify(tiny_dataset(kRaf, Origin::Real), tiny_dataset(plan.deficits(), Origin::Synthetic), plan);
  EXPECT_EQ(merged.histogram(), constant(10000));
  const auto synthetic = std::count_if(merged.samples.begin(), merged.samples.end(),
                                       [](const Sample& s) { return s.origin == Origin::Synthetic; });
  EXPECT_EQ(std::size_t(synthetic), plan.total_deficit());
}

TEST(MergeAndVerify, MissingSyntheticFileNamesTheClass) {
  const auto dir = scratch_dir("augment_merge");
  const Histogram real_h{2, 0, 1, 3, 2, 1, 0};
  const auto plan = compute_plan(real_h, AugmentationScheme::equalize());
  const auto m = emit_manifest(plan, default_templates(), 500);
  StubGenerator stub;
  ASSERT_EQ(run_generation(m, stub, dir).succeeded(), plan.total_deficit());

  const ImageOptions small{8, 8, {}};
  const auto merged = merge_and_verify(tiny_dataset(real_h, Origin::Real), dir, plan, small);
  EXPECT_EQ(merged.histogram(), constant(3));
  // Rerunning the whole pipeline changes nothing.
  EXPECT_EQ(run_generation(m, stub, dir).classes[1].generated, 0u);
  EXPECT_EQ(merge_and_verify(tiny_dataset(real_h, Origin::Real), dir, plan, small).histogram(), constant(3));

  const auto victim = std::find_if(m.entries.begin(), m.entries.end(),
                                   [](const ManifestEntry& e) { return e.label == EmotionClass::Disgust; });
  std::filesystem::remove(generated_image_path(dir, *victim));
  try {
    merge_and_verify(tiny_dataset(real_h, Origin::Real), dir, plan, small);
    FAIL() << "expected DataError";
  } catch (const DataError& ex) {
    EXPECT_STREQ(ex.what(), "class Disgust: expected 3 samples after merge, found 2");
  }
}
