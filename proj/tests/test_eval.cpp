#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "remn/evaluation.hpp"
#include "remn/image.hpp"
#include "test_util.hpp"

using namespace remn;
using namespace remn::testing;

namespace {

constexpr int kHappy = 3;

std::vector<int> balanced_labels(int per_class) {
  std::vector<int> labels;
  for (int c = 0; c < int(kNumClasses); ++c) {
    for (int i = 0; i < per_class; ++i) labels.push_back(c);
  }
  return labels;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Every sample lands in the Happy row: `correct` on the diagonal, the rest
// predicted Angry.
EvalReport report_with(const std::string& dataset, const std::string& tag, std::size_t correct, std::size_t total) {
  EvalReport r;
  r.dataset = dataset;
  r.augmentation = tag;
  r.confusion.counts[kHappy][kHappy] = correct;
  r.confusion.counts[kHappy][0] = total - correct;
  return r;
}

}  // namespace

TEST(Argmax, TiesGoToLowestClass) {
  const Tensor logits({3, 7}, std::vector<float>{0, 0, 0, 0, 0, 0, 0,  //
                                                 1, 3, 3, 2, 0, 0, 0,  //
                                                 -5, -4, -3, -2, -1, -1, -0.5f});
  EXPECT_EQ(argmax_rows(logits), (std::vector<int>{0, 1, 6}));
  EXPECT_THROW(argmax_rows(Tensor({7})), ShapeError);
}

TEST(Confusion, PerfectPredictorIsDiagonal) {
  const auto labels = balanced_labels(3);
  EvalReport r;
  r.confusion = confusion_from(labels, labels);
  EXPECT_EQ(r.overall_accuracy(), 100.0);
  for (std::size_t i = 0; i < kNumClasses; ++i) {
    for (std::size_t j = 0; j < kNumClasses; ++j) EXPECT_EQ(r.confusion.counts[i][j], i == j ? 3u : 0u);
  }
}

TEST(Confusion, ConstantHappyPredictor) {
  const auto labels = balanced_labels(5);
  const std::vector<int> happy(labels.size(), kHappy);
  EvalReport r;
  r.confusion = confusion_from(labels, happy);
  EXPECT_DOUBLE_EQ(r.overall_accuracy(), 100.0 / 7.0);
  for (EmotionClass c : kAllClasses) {
    EXPECT_EQ(*r.class_accuracy(c), c == EmotionClass::Happy ? 100.0 : 0.0);
  }
}

TEST(Confusion, HandBuiltFourteenSampleCase) {
  const std::vector<int> truth{0, 0, 1, 1, 2, 2, 3, 3, 4, 4, 5, 5, 6, 6};
  std::vector<int> pred = truth;
  pred[0] = 4;  // Angry seen as Sad
  pred[3] = 0;  // Disgust seen as Angry
  pred[9] = 6;  // Sad seen as Neutral
  EvalReport r;
  r.confusion = confusion_from(truth, pred);

  ConfusionMatrix expected;
  expected.counts = {{{1, 0, 0, 0, 1, 0, 0},
                      {1, 1, 0, 0, 0, 0, 0},
                      {0, 0, 2, 0, 0, 0, 0},
                      {0, 0, 0, 2, 0, 0, 0},
                      {0, 0, 0, 0, 1, 0, 1},
                      {0, 0, 0, 0, 0, 2, 0},
                      {0, 0, 0, 0, 0, 0, 2}}};
  EXPECT_EQ(r.confusion, expected);
  EXPECT_EQ(r.confusion.correct(), 11u);
  EXPECT_DOUBLE_EQ(r.overall_accuracy(), 1100.0 / 14.0);
  EXPECT_EQ(format_percent(r.overall_accuracy()), "78.57");
  EXPECT_EQ(*r.class_accuracy(EmotionClass::Angry), 50.0);
  EXPECT_EQ(*r.class_accuracy(EmotionClass::Fear), 100.0);
}

TEST(Confusion, AbsentClassHasNoAccuracy) {
  EvalReport r;
  r.confusion.add(0, 0);
  EXPECT_FALSE(r.class_accuracy(EmotionClass::Disgust).has_value());
  EXPECT_TRUE(to_json(r)["class_accuracy"]["Disgust"].is_null());
  EXPECT_THROW(r.confusion.add(7, 0), ShapeError);
  EXPECT_THROW(r.confusion.add(0, -1), ShapeError);
}

TEST(Confusion, InvariantsOnRandomPredictions) {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<int> truth(1 + rng.below(200)), pred(truth.size());
    for (std::size_t i = 0; i < truth.size(); ++i) {
      truth[i] = int(rng.below(7));
      pred[i] = int(rng.below(7));
    }
    EvalReport r;
    r.confusion = confusion_from(truth, pred);
    EXPECT_EQ(r.confusion.total(), truth.size());
    Histogram h{};
    std::size_t hits = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
      ++h[std::size_t(truth[i])];
      hits += truth[i] == pred[i];
    }
    EXPECT_EQ(r.confusion.row_sums(), h);
    EXPECT_EQ(r.overall_accuracy(), 100.0 * double(hits) / double(truth.size()));
    for (EmotionClass c : kAllClasses) {
      if (const auto a = r.class_accuracy(c)) {
        EXPECT_GE(*a, 0.0);
        EXPECT_LE(*a, 100.0);
      }
    }

    std::vector<std::size_t> order = rng.permutation(truth.size());
    std::vector<int> t2, p2;
    for (std::size_t i : order) {
      t2.push_back(truth[i]);
      p2.push_back(pred[i]);
    }
    EXPECT_EQ(confusion_from(t2, p2), r.confusion);
  }
}

TEST(Evaluate, MatchesDirectInferenceAndRestoresMode) {
  auto ds = stub_dataset(3, 16, 5);
  ResEmoteNet model(tiny_model_config());
  const auto report = evaluate(model, ds, 4);
  EXPECT_EQ(model.mode(), Mode::Train);
  EXPECT_EQ(report.dataset, "stub");
  EXPECT_EQ(report.confusion.row_sums(), ds.histogram());

  model.set_mode(Mode::Eval);
  ConfusionMatrix direct;
  for (const auto& s : ds.samples) {
    const auto pred = argmax_rows(model.infer(s.image.reshaped({1, 3, 16, 16})));
    direct.add(class_code(s.label), pred[0]);
  }
  EXPECT_EQ(report.confusion, direct);

  std::reverse(ds.samples.begin(), ds.samples.end());
  EXPECT_EQ(evaluate(model, ds, 5).confusion, direct);
  EXPECT_EQ(model.mode(), Mode::Eval);
}

TEST(Evaluate, RejectsMismatchedImagesAndEmptySets) {
  const auto ds = stub_dataset(1, 8, 5);
  ResEmoteNet model(tiny_model_config());
  EXPECT_THROW(evaluate(model, ds), ShapeError);
  EXPECT_THROW(evaluate(model, LabeledDataset{}), DataError);
}

TEST(ReportFiles, IdentityConfusionCsv) {
  const auto labels = balanced_labels(1);
  const std::string csv = confusion_csv(confusion_from(labels, labels));
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "true\\predicted,Angry,Disgust,Fear,Happy,Sad,Surprise,Neutral");
  EXPECT_NE(csv.find("\nFear,0,0,1,0,0,0,0\n"), std::string::npos);
  EXPECT_NE(csv.find("\nNeutral,0,0,0,0,0,0,1\n"), std::string::npos);
}

TEST(ReportFiles, WriteParseWriteIsByteIdentical) {
  const auto dir = scratch_dir("eval_files");
  Rng rng(12);
  EvalReport r;
  r.dataset = "fer2013";
  r.augmentation = "Aug2";
  r.checkpoint = "runs/x/best.ckpt";
  for (int i = 0; i < 300; ++i) r.confusion.add(int(rng.below(6)), int(rng.below(7)));

  write_confusion_csv(r.confusion, dir / "a.csv");
  write_confusion_csv(read_confusion_csv(dir / "a.csv"), dir / "b.csv");
  EXPECT_EQ(slurp(dir / "a.csv"), slurp(dir / "b.csv"));

  write_report_json(r, dir / "a.json");
  const auto back = read_report_json(dir / "a.json");
  EXPECT_EQ(back, r);
  write_report_json(back, dir / "b.json");
  EXPECT_EQ(slurp(dir / "a.json"), slurp(dir / "b.json"));
  EXPECT_TRUE(nlohmann::json::parse(slurp(dir / "a.json"))["class_accuracy"]["Neutral"].is_null());
}

TEST(ReportFiles, Errors) {
  EXPECT_THROW(write_confusion_csv(ConfusionMatrix{}, ""), DataError);
  EXPECT_THROW(write_report_json(EvalReport{}, ""), DataError);
  EXPECT_THROW(read_report_json(scratch_dir("eval_err") / "missing.json"), DataError);
  std::string csv = confusion_csv(ConfusionMatrix{});
  EXPECT_THROW(parse_confusion_csv(csv.substr(0, csv.size() - 20)), DataError);
  std::string bad = csv;
  bad.replace(bad.find("Sad,0"), 5, "Sad,x");
  EXPECT_THROW(parse_confusion_csv(bad), DataError);
  EXPECT_THROW(parse_confusion_csv("a,b\n"), DataError);
  EXPECT_THROW(eval_report_from_json({{"dataset", "x"}}), DataError);
}

TEST(ComparisonTable, OrdersOriginalThenAugmentations) {
  const std::vector<EvalReport> reports{
      report_with("fer2013", "Aug3", 9469, 10000), report_with("fer2013", "Original", 7979, 10000),
      report_with("fer2013", "Aug4", 9647, 10000), report_with("fer2013", "Aug1", 8481, 10000),
      report_with("fer2013", "Aug2", 9148, 10000)};
  const std::string csv = comparison_csv(reports);
  std::vector<std::string> overall;
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "Dataset,Augmentation,Samples,Overall,Angry,Disgust,Fear,Happy,Sad,Surprise,Neutral");
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
    overall.push_back(cells[1] + "=" + cells[3]);
    EXPECT_EQ(cells[4], "-");
  }
  EXPECT_EQ(overall, (std::vector<std::string>{"Original=79.79", "Aug1=84.81", "Aug2=91.48", "Aug3=94.69",
                                                "Aug4=96.47"}));

  const std::string text = comparison_text(reports);
  EXPECT_LT(text.find("Original"), text.find("Aug1"));
  EXPECT_NE(text.find("96.47"), std::string::npos);
}

TEST(ComparisonTable, SingleReportAndDatasetGrouping) {
  const auto single = comparison_csv({report_with("rafdb", "Original", 1, 3)});
  EXPECT_EQ(std::count(single.begin(), single.end(), '\n'), 2);
  EXPECT_NE(single.find("rafdb,Original,3,33.33"), std::string::npos);
  const auto two = comparison_csv({report_with("rafdb", "Original", 1, 1), report_with("fer2013", "Aug1", 1, 1)});
  EXPECT_LT(two.find("fer2013"), two.find("rafdb"));
}
