#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "cli.hpp"
#include "remn/checkpoint.hpp"
#include "remn/evaluation.hpp"
#include "remn/image.hpp"
#include "remn/training.hpp"
#include "test_util.hpp"

using namespace remn;
using namespace remn::testing;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code;
  std::string out, err;
};

Outcome run_cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

nlohmann::json read_json(const fs::path& p) {
  std::ifstream in(p);
  return nlohmann::json::parse(in);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// FER2013-format CSV; class c has a distinct ramp so images differ.
void write_mini_fer(const fs::path& path, std::size_t per_class_train) {
  std::string csv = "emotion,pixels,Usage\n";
  for (auto [usage, n] : {std::pair{"Training", per_class_train}, std::pair{"PublicTest", std::size_t{1}},
                          std::pair{"PrivateTest", std::size_t{2}}}) {
    for (int c = 0; c < 7; ++c) {
      for (std::size_t i = 0; i < n; ++i) {
        csv += std::to_string(c) + ",\"" + fer_ramp(2304, c + 1, int(i) * 7) + "\"," + usage + "\n";
      }
    }
  }
  write_text(path, csv);
}

// Class folders of stub images, `per_class` each.
void write_stub_folder(const fs::path& root, std::size_t per_class, std::uint64_t seed) {
  const auto plan = compute_plan(Histogram{}, AugmentationScheme::fixed(per_class));
  for (const auto& e : emit_manifest(plan, default_templates(), seed).entries) {
    const auto path = generated_image_path(root, e);
    fs::create_directories(path.parent_path());
    write_file_atomic(path, stub_generate(e.prompt, e.seed));
  }
}

}  // namespace

TEST(Cli, PlanPrintsTargets) {
  const auto dir = scratch_dir("cli_plan");
  auto r = run_cli({"--out-dir", dir.string(), "plan", "--histogram", "3995,436,4097,7215,4830,3171,4965",
                    "--scheme", "equalize"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("Disgust          436      7215      6779      7215"), std::string::npos) << r.out;
  const auto plan = read_json(dir / "plan.json");
  for (const auto& [name, cls] : plan["classes"].items()) EXPECT_EQ(cls["target"], 7215) << name;
  EXPECT_EQ(read_json(dir / "manifest.json")["entries"].size(), 21796u);

  r = run_cli({"--out-dir", dir.string(), "plan", "--histogram", "705,717,281,4772,1982,1290,2524", "--scheme",
               "fixed:10000"});
  ASSERT_EQ(r.code, 0);
  for (const auto& [name, cls] : read_json(dir / "plan.json")["classes"].items()) EXPECT_EQ(cls["expected"], 10000);
}

TEST(Cli, UsageErrorsExitOne) {
  const auto dir = scratch_dir("cli_usage");
  EXPECT_EQ(run_cli({"--out-dir", dir.string(), "plan", "--histogram", "1,1,1,1,1,1,1", "--scheme", "fixed:-3"}).code,
            1);
  EXPECT_EQ(read_json(dir / "run_manifest.json")["exit_code"], 1);
  EXPECT_EQ(run_cli({"plan", "--no-such-flag"}).code, 1);
  EXPECT_EQ(run_cli({}).code, 1);
  EXPECT_EQ(run_cli({"--help"}).code, 0);
  EXPECT_EQ(run_cli({"--out-dir", dir.string(), "plan"}).code, 1);
}

TEST(Cli, PlanReadsFerCsvTrainingRows) {
  const auto dir = scratch_dir("cli_plan_csv");
  write_mini_fer(dir / "mini.csv", 2);
  const auto r = run_cli({"--out-dir", (dir / "out").string(), "plan", "--data", (dir / "mini.csv").string(),
                          "--scheme", "fixed:3", "--seed", "50"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto plan = read_json(dir / "out" / "plan.json");
  EXPECT_EQ(plan["dataset"], "mini");
  EXPECT_EQ(plan["classes"]["Fear"]["original"], 2);
  EXPECT_EQ(plan["total_deficit"], 7);
  EXPECT_EQ(read_json(dir / "out" / "manifest.json")["entries"][0]["seed"], 50);
}

TEST(Cli, ConfigFileSuppliesDefaultsAndFlagsWin) {
  const auto dir = scratch_dir("cli_config");
  write_text(dir / "cfg.json", R"({"out-dir": ")" + (dir / "a").string() +
                                   R"(", "plan": {"histogram": "1,1,1,1,1,1,1", "scheme": "fixed:4"}})");
  auto r = run_cli({"--config", (dir / "cfg.json").string(), "plan"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(read_json(dir / "a" / "plan.json")["scheme"], "fixed:4");
  r = run_cli({"--config", (dir / "cfg.json").string(), "plan", "--scheme", "fixed:2"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(read_json(dir / "a" / "plan.json")["scheme"], "fixed:2");
  const auto manifest = read_json(dir / "a" / "run_manifest.json");
  EXPECT_EQ(manifest["config"]["plan"]["scheme"], "fixed:2");
  EXPECT_EQ(manifest["config"]["plan"]["histogram"], "1,1,1,1,1,1,1");
}

TEST(Cli, GenerateIsIdempotentAndReportsFailures) {
  const auto dir = scratch_dir("cli_generate");
  ASSERT_EQ(run_cli({"--out-dir", dir.string(), "plan", "--histogram", "2,0,2,2,1,2,2", "--scheme", "equalize"}).code, 0);
  const std::string manifest = (dir / "manifest.json").string();
  auto r = run_cli({"--out-dir", dir.string(), "generate", "--manifest", manifest, "--threads", "2"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(count_image_folder(dir / "synthetic")[1], 2u);
  EXPECT_EQ(read_json(dir / "generation_report.json")["classes"]["Disgust"]["generated"], 2);

  r = run_cli({"--out-dir", dir.string(), "generate", "--manifest", manifest});
  ASSERT_EQ(r.code, 0);
  const auto again = read_json(dir / "generation_report.json");
  EXPECT_EQ(again["classes"]["Disgust"]["generated"], 0);
  EXPECT_EQ(again["classes"]["Disgust"]["skipped_existing"], 2);

  r = run_cli({"--out-dir", (dir / "broken").string(), "generate", "--manifest", manifest, "--generator",
               "command:false"});
  EXPECT_EQ(r.code, 2);
  const auto failed = read_json(dir / "broken" / "generation_report.json");
  ASSERT_EQ(failed["classes"]["Disgust"]["failed"].size(), 2u);
  EXPECT_NE(r.err.find("seed "), std::string::npos);
  EXPECT_EQ(run_cli({"--out-dir", dir.string(), "generate", "--manifest", manifest, "--generator", "magic"}).code, 1);
}

TEST(Cli, TrainEvalCompareEndToEnd) {
  const auto dir = scratch_dir("cli_e2e");
  write_mini_fer(dir / "mini.csv", 2);
  const std::string data = (dir / "mini.csv").string();
  ASSERT_EQ(run_cli({"--out-dir", (dir / "plan").string(), "plan", "--data", data, "--scheme", "fixed:3"}).code, 0);
  ASSERT_EQ(run_cli({"--out-dir", (dir / "gen").string(), "generate", "--manifest",
                     (dir / "plan" / "manifest.json").string()}).code, 0);

  const std::vector<std::string> train_args{"--deterministic", "train", "--data", data, "--synth-dir",
                                            (dir / "gen" / "synthetic").string(), "--scheme", "fixed:3",
                                            "--model-preset", "tiny", "--image-size", "16", "--epochs", "3",
                                            "--lr", "0.01", "--seed", "4", "--quiet"};
  std::vector<std::string> args{"--out-dir", (dir / "t1").string()};
  args.insert(args.end(), train_args.begin(), train_args.end());
  auto r = run_cli(args);
  ASSERT_EQ(r.code, 0) << r.err;
  const std::string first_report = slurp(dir / "t1" / "train_report.json");
  const std::string first_ckpt = slurp(dir / "t1" / "checkpoints" / "best.ckpt");
  ASSERT_EQ(run_cli(args).code, 0);
  EXPECT_EQ(slurp(dir / "t1" / "train_report.json"), first_report);
  EXPECT_EQ(slurp(dir / "t1" / "checkpoints" / "best.ckpt"), first_ckpt);
  const auto report = read_json(dir / "t1" / "train_report.json");
  EXPECT_EQ(report["epochs"].size(), 3u);
  EXPECT_EQ(report["train_samples"], 21);
  EXPECT_EQ(report["val_samples"], 7);
  EXPECT_EQ(report["augmentation"]["total_deficit"], 7);
  EXPECT_FALSE(read_json(dir / "t1" / "run_manifest.json").contains("started_at"));

  r = run_cli({"--out-dir", (dir / "ev").string(), "eval", "--checkpoint",
               (dir / "t1" / "checkpoints" / "best.ckpt").string(), "--data", data, "--augmentation", "Aug1"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto ev = read_json(dir / "ev" / "eval_report.json");
  for (const char* key : {"dataset", "augmentation", "checkpoint", "samples", "overall_accuracy", "class_accuracy",
                          "confusion", "classes"}) {
    EXPECT_TRUE(ev.contains(key)) << key;
  }
  EXPECT_EQ(ev["samples"], 14);
  EXPECT_EQ(ev["augmentation"], "Aug1");
  EXPECT_EQ(read_confusion_csv(dir / "ev" / "confusion.csv").row_sums(), constant_histogram(2));

  r = run_cli({"--out-dir", (dir / "cmp").string(), "compare", (dir / "ev" / "eval_report.json").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("mini"), std::string::npos);
  EXPECT_TRUE(fs::exists(dir / "cmp" / "comparison.csv"));
}

TEST(Cli, TrainFailsVerificationWhenSyntheticImageMissing) {
  const auto dir = scratch_dir("cli_verify");
  write_mini_fer(dir / "mini.csv", 1);
  ASSERT_EQ(run_cli({"--out-dir", dir.string(), "plan", "--data", (dir / "mini.csv").string(), "--scheme", "fixed:2"}).code, 0);
  ASSERT_EQ(run_cli({"--out-dir", dir.string(), "generate", "--manifest", (dir / "manifest.json").string()}).code, 0);
  fs::remove(fs::directory_iterator(dir / "synthetic" / "Sad")->path());
  const auto r = run_cli({"--out-dir", (dir / "t").string(), "train", "--data", (dir / "mini.csv").string(),
                          "--synth-dir", (dir / "synthetic").string(), "--scheme", "fixed:2", "--model-preset", "tiny",
                          "--image-size", "16", "--epochs", "1"});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("class Sad: expected 2"), std::string::npos) << r.err;
}

TEST(Cli, EvalOfPerfectAndConstantClassifiers) {
  const auto dir = scratch_dir("cli_eval");
  write_stub_folder(dir / "data", 10, 1);
  const ModelConfig mc = tiny_model_config(16);
  write_text(dir / "model_config.json", to_json(mc).dump());

  // Overfit in-process until every training image is classified correctly.
  ResEmoteNet model(mc);
  const auto train = load_image_folder(dir / "data", ImageOptions{16, 16, {}});
  TrainConfig tc;
  tc.learning_rate = 1e-2;
  tc.max_epochs = 300;
  tc.plateau_patience = 300;
  tc.early_stop_patience = 300;
  tc.deterministic = true;
  fit(model, train, train, tc, [](const EpochRecord& r) { return r.val_accuracy < 100.0; });
  save_checkpoint(model, dir / "perfect.ckpt");
  auto r = run_cli({"--out-dir", (dir / "p").string(), "eval", "--checkpoint", (dir / "perfect.ckpt").string(),
                    "--data", (dir / "data").string(), "--split", "train"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(read_json(dir / "p" / "eval_report.json")["overall_accuracy"], 100.0);

  // Zero classifier weights and a one-hot bias: always Happy.
  auto& out_layer = model.parameters()[model.parameters().size() - 2];
  auto& out_bias = model.parameters().back();
  out_layer.value.fill(0.0f);
  out_bias.value.fill(0.0f);
  out_bias.value[3] = 1.0f;
  save_checkpoint(model, dir / "happy.ckpt");
  r = run_cli({"--out-dir", (dir / "h").string(), "eval", "--checkpoint", (dir / "happy.ckpt").string(),
               "--model-config", (dir / "model_config.json").string(), "--data", (dir / "data").string(), "--split",
               "train"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto ev = read_json(dir / "h" / "eval_report.json");
  EXPECT_DOUBLE_EQ(ev["overall_accuracy"].get<double>(), 100.0 / 7.0);
  EXPECT_EQ(ev["class_accuracy"]["Happy"], 100.0);
  EXPECT_EQ(ev["class_accuracy"]["Sad"], 0.0);
}

TEST(Cli, EvalErrors) {
  const auto dir = scratch_dir("cli_eval_err");
  write_text(dir / "model_config.json", to_json(tiny_model_config(16)).dump());
  write_text(dir / "bad.ckpt", "nope");
  write_stub_folder(dir / "data", 1, 1);
  auto r = run_cli({"--out-dir", dir.string(), "eval", "--checkpoint", (dir / "bad.ckpt").string(), "--data",
                    (dir / "data").string()});
  EXPECT_EQ(r.code, 2);
  ResEmoteNet model(tiny_model_config(16));
  save_checkpoint(model, dir / "ok.ckpt");
  r = run_cli({"--out-dir", dir.string(), "eval", "--checkpoint", (dir / "ok.ckpt").string(), "--data",
               (dir / "data").string()});
  EXPECT_EQ(r.code, 2);  // a plain class-folder tree only has a train split
  EXPECT_NE(r.err.find("no test samples"), std::string::npos);
}

TEST(Cli, GradcheckSummaryListsWorstErrors) {
  const auto dir = scratch_dir("cli_gradcheck");
  const auto r = run_cli({"--out-dir", dir.string(), "gradcheck", "--layer", "linear", "--layer", "sigmoid", "--seeds", "2"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("linear"), std::string::npos);
  EXPECT_NE(r.out.find("PASS"), std::string::npos);
  const auto j = read_json(dir / "gradcheck.json");
  EXPECT_EQ(j["layers"].size(), 2u);
  EXPECT_TRUE(j["passed"].get<bool>());
  EXPECT_LE(j["layers"][0]["worst_rel_error"].get<double>(), 1e-4);
  EXPECT_EQ(run_cli({"--out-dir", dir.string(), "gradcheck", "--layer", "nope"}).code, 1);
}
