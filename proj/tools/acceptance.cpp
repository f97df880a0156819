// Acceptance gate: one PASS/FAIL line per criterion, nonzero exit if any
// criterion fails. Tolerances and budgets are the constants below.

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "cli.hpp"
#include "remn/augment.hpp"
#include "remn/checkpoint.hpp"
#include "remn/evaluation.hpp"
#include "remn/gradcheck_suite.hpp"
#include "remn/image.hpp"
#include "remn/training.hpp"

using namespace remn;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

// 1: gradient fidelity
constexpr double kGradEps = 1e-4;
constexpr double kLayerTol = 1e-4;
constexpr double kModelTol = 1e-3;
constexpr std::size_t kGradSeeds = 20;
constexpr double kGradBudgetSeconds = 120.0;

// 3: overfit
constexpr std::size_t kOverfitPerClass = 10;
constexpr std::size_t kOverfitImage = 64;
constexpr std::size_t kOverfitMaxEpochs = 300;
constexpr double kOverfitTarget = 99.0;
constexpr double kOverfitLr = 1e-2;
constexpr double kOverfitBudgetSeconds = 600.0;

// 5: determinism
constexpr std::size_t kDeterminismEpochs = 3;

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

ModelConfig tiny_config(std::size_t size, std::uint64_t seed) {
  ModelConfig c;
  c.input_height = c.input_width = size;
  c.backbone_channels = {4, 8, 8};
  c.se_reduction = 4;
  c.residual_channels = {8, 12, 16};
  c.classifier_hidden = {8};
  c.seed = seed;
  return c;
}

LabeledDataset stub_dataset(std::size_t per_class, std::size_t size, std::uint64_t seed) {
  const auto plan = compute_plan(Histogram{}, AugmentationScheme::fixed(per_class));
  LabeledDataset ds;
  ds.name = "stub";
  const ImageOptions options{size, size, {}};
  for (const auto& e : emit_manifest(plan, default_templates(), seed).entries) {
    ds.samples.push_back(Sample{image_to_tensor(decode_pnm(stub_generate(e.prompt, e.seed), "stub"), options), e.label,
                                Origin::Synthetic, std::to_string(e.seed)});
  }
  return ds;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Verdict {
  bool pass = false;
  std::string detail;
};

// ---------------------------------------------------------------- 1

Verdict gradient_fidelity() {
  GradcheckSuiteOptions options;
  options.seeds = kGradSeeds;
  options.eps = kGradEps;
  options.layer_tolerance = kLayerTol;
  options.composite_tolerance = kLayerTol;
  options.model_tolerance = kModelTol;

  const auto start = Clock::now();
  bool all = true;
  double worst_layer = 0.0, worst_model = 0.0;
  std::string failing;
  for (const auto& layer : gradcheck_layers()) {
    const auto r = check_layer(layer, options);
    std::printf("      %-22s worst %.2e  tol %.0e  seeds %zu  coords %zu  kinks %zu\n", r.layer.c_str(),
                r.worst_rel_error, r.tolerance, r.seeds, r.coordinates, r.kinks);
    all = all && r.passed && r.seeds >= kGradSeeds && r.coordinates > 0;
    if (!r.passed) failing += " " + r.layer;
    (layer == "model" ? worst_model : worst_layer) = std::max(layer == "model" ? worst_model : worst_layer, r.worst_rel_error);
  }
  const double elapsed = seconds_since(start);
  const bool in_time = elapsed < kGradBudgetSeconds;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%zu layers x %zu seeds, worst layer %.2e (<= %.0e), model %.2e (<= %.0e), %.1f s (< %.0f s)%s",
                gradcheck_layers().size(), kGradSeeds, worst_layer, kLayerTol, worst_model, kModelTol, elapsed,
                kGradBudgetSeconds, failing.empty() ? "" : ("; failing:" + failing).c_str());
  return {all && in_time, buf};
}

// ---------------------------------------------------------------- 2

Verdict table_oracle() {
  // Code order: Angry, Disgust, Fear, Happy, Sad, Surprise, Neutral.
  const Histogram fer{3995, 436, 4097, 7215, 4830, 3171, 4965};
  const Histogram raf{705, 717, 281, 4772, 1982, 1290, 2524};
  struct Column {
    const char* scheme;
    std::size_t fer_target, raf_target;
  };
  const Column columns[] = {{"aug1", 7215, 4772}, {"aug2", 10000, 10000}, {"aug3", 12500, 12500}, {"aug4", 15000, 15000}};

  std::size_t cells = 0, matched = 0, merges = 0;
  std::string mismatch;
  const auto tiny = [](const Histogram& h, Origin origin) {
    LabeledDataset ds;
    for (EmotionClass c : kAllClasses) {
      for (std::size_t i = 0; i < h[std::size_t(class_code(c))]; ++i) ds.samples.push_back({Tensor({1}), c, origin, ""});
    }
    return ds;
  };
  for (const auto& [name, original] : {std::pair{"FER2013", fer}, std::pair{"RAF-DB", raf}}) {
    // Original column.
    for (EmotionClass c : kAllClasses) {
      ++cells;
      matched += compute_plan(original, AugmentationScheme::fixed(1)).at(c).original == original[std::size_t(class_code(c))];
    }
    for (const auto& col : columns) {
      const auto plan = compute_plan(original, AugmentationScheme::parse(col.scheme), name);
      const std::size_t want = std::string(name) == "FER2013" ? col.fer_target : col.raf_target;
      for (EmotionClass c : kAllClasses) {
        ++cells;
        if (plan.at(c).expected() == want && plan.at(c).target == want) {
          ++matched;
        } else if (mismatch.empty()) {
          mismatch = std::string(name) + " " + col.scheme + " " + std::string(class_name(c));
        }
      }
      try {
        const auto merged = merge_and_verify(tiny(original, Origin::Real), tiny(plan.deficits(), Origin::Synthetic), plan);
        Histogram flat;
        flat.fill(want);
        merges += merged.histogram() == flat;
      } catch (const DataError& ex) {
        if (mismatch.empty()) mismatch = ex.what();
      }
    }
  }
  char buf[200];
  std::snprintf(buf, sizeof buf, "%zu/%zu cells exact, %zu/8 merged histograms verified%s", matched, cells, merges,
                mismatch.empty() ? "" : ("; first mismatch: " + mismatch).c_str());
  return {matched == cells && merges == 8, buf};
}

// ---------------------------------------------------------------- 3

Verdict overfit() {
  const auto start = Clock::now();
  const auto train = stub_dataset(kOverfitPerClass, kOverfitImage, 1);
  ResEmoteNet model(tiny_config(kOverfitImage, 3));
  TrainConfig c;
  c.learning_rate = kOverfitLr;
  c.max_epochs = kOverfitMaxEpochs;
  c.plateau_patience = kOverfitMaxEpochs;
  c.early_stop_patience = kOverfitMaxEpochs;
  c.deterministic = true;
  c.seed = 1;
  double best = 0.0;
  std::size_t reached = 0;
  // Validation set = training set: val_accuracy is eval-mode train accuracy.
  const auto report = fit(model, train, train, c, [&](const EpochRecord& r) {
    best = std::max(best, r.val_accuracy);
    if (best >= kOverfitTarget && reached == 0) reached = r.epoch;
    return reached == 0;
  });
  const double elapsed = seconds_since(start);
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "%zu stub samples/class at %zux%zu, SGD lr %.0e batch %zu: train accuracy %.2f%% (>= %.0f%%) %s epoch %zu (<= %zu), %.1f s (< %.0f s)",
                kOverfitPerClass, kOverfitImage, kOverfitImage, kOverfitLr, c.batch_size, best, kOverfitTarget,
                reached ? "at" : "by", reached ? reached : report.epochs.size(), kOverfitMaxEpochs, elapsed,
                kOverfitBudgetSeconds);
  return {reached > 0 && elapsed < kOverfitBudgetSeconds, buf};
}

// ---------------------------------------------------------------- 4

Verdict schedule_traces() {
  struct Trace {
    std::vector<double> losses;
    std::vector<double> lr_after;  // hand-traced lr after each epoch
    std::size_t stop_epoch;        // 0 = never
  };
  const std::vector<Trace> traces{
      {{1.0, 0.9, 0.8}, {1e-3, 1e-3, 1e-3}, 0},
      {{1.0, 1.0, 1.0, 1.0}, {1e-3, 1e-3, 1e-3, 1e-4}, 0},
      {{1.0, 1.0, 1.2, 1.0, 1.5, 1.0, 1.1}, {1e-3, 1e-3, 1e-3, 1e-4, 1e-4, 1e-4, 1e-5}, 6},
      {{2.0, 1.0, 1.00005, 0.99995, 1.0, 0.5, 0.6}, {1e-3, 1e-3, 1e-3, 1e-3, 1e-4, 1e-4, 1e-4}, 0},
      {std::vector<double>(8, 1.0), {1e-3, 1e-3, 1e-3, 1e-4, 1e-4, 1e-4, 1e-5, 1e-5}, 6},
      {{1.0, 0.9, 0.95, 0.95, 0.95, 0.95, 0.95, 0.8}, {1e-3, 1e-3, 1e-3, 1e-3, 1e-4, 1e-4, 1e-4, 1e-4}, 7},
  };
  std::size_t ok = 0;
  std::string first_bad;
  for (std::size_t t = 0; t < traces.size(); ++t) {
    const auto& tr = traces[t];
    PlateauScheduler s(1e-3, 0.1, 3, 1e-4, 1e-7);
    std::vector<double> history;
    std::size_t stop = 0;
    bool match = true;
    for (std::size_t e = 0; e < tr.losses.size(); ++e) {
      const double before = s.lr();
      const bool reduced = s.step(tr.losses[e]);
      match = match && s.lr() == tr.lr_after[e] && reduced == (s.lr() != before) &&
              (!reduced || s.lr() == std::max(before * 0.1, 1e-7));
      history.push_back(tr.losses[e]);
      if (stop == 0 && early_stop_check(history, 5)) stop = e + 1;
    }
    match = match && stop == tr.stop_epoch;
    ok += match;
    if (!match && first_bad.empty()) first_bad = " trace " + std::to_string(t + 1);
  }
  return {ok == traces.size(),
          std::to_string(ok) + "/" + std::to_string(traces.size()) + " hand-traced sequences match exactly" +
              (first_bad.empty() ? "" : "; mismatch in" + first_bad)};
}

// ---------------------------------------------------------------- 5

Verdict determinism(const fs::path& scratch) {
  const auto train = stub_dataset(4, 32, 11);
  const auto val = stub_dataset(2, 32, 5000);
  std::vector<double> traj[2];
  std::string ckpt[2];
  for (int run = 0; run < 2; ++run) {
    const fs::path dir = scratch / "determinism";
    fs::remove_all(dir);
    ResEmoteNet model(tiny_config(32, 9));
    TrainConfig c;
    c.max_epochs = kDeterminismEpochs;
    c.seed = 17;
    c.deterministic = true;
    c.checkpoint_dir = dir.string();
    const auto report = fit(model, train, val, c);
    for (const auto& e : report.epochs) {
      traj[run].push_back(e.train_loss);
      traj[run].push_back(e.val_loss);
    }
    ckpt[run] = slurp(dir / "last.ckpt");
  }
  const bool same_traj = traj[0].size() == 2 * kDeterminismEpochs && traj[0].size() == traj[1].size() &&
                         std::memcmp(traj[0].data(), traj[1].data(), traj[0].size() * sizeof(double)) == 0;
  const bool same_ckpt = !ckpt[0].empty() && ckpt[0] == ckpt[1];
  return {same_traj && same_ckpt, std::string("3-epoch loss trajectories ") + (same_traj ? "bitwise equal" : "DIFFER") +
                                      ", checkpoints (" + std::to_string(ckpt[0].size()) + " bytes) " +
                                      (same_ckpt ? "bitwise equal" : "DIFFER")};
}

// ---------------------------------------------------------------- 6

Verdict checkpoint_round_trip(const fs::path& scratch) {
  std::size_t identical = 0, total = 0;
  for (std::size_t size : {16, 64}) {
    ResEmoteNet model(tiny_config(size, 21));
    TrainConfig c;
    c.max_epochs = 2;
    c.learning_rate = 1e-2;
    c.deterministic = true;
    const auto ds = stub_dataset(2, size, 3);
    fit(model, ds, ds, c);  // moves weights and running statistics off their initial values
    model.set_mode(Mode::Eval);

    Rng rng(size);
    Tensor input({8, 3, size, size});
    for (auto& v : input.data()) v = static_cast<float>(rng.normal());
    const Tensor before = model.infer(input);
    const fs::path path = scratch / ("roundtrip_" + std::to_string(size) + ".ckpt");
    save_checkpoint(model, path);
    ResEmoteNet loaded = load_checkpoint(path, model.config());
    const Tensor after = loaded.infer(input);
    ++total;
    identical += loaded.mode() == Mode::Eval && before.numel() == after.numel() &&
                 std::memcmp(before.data().data(), after.data().data(), before.numel() * sizeof(float)) == 0;
  }
  return {identical == total, std::to_string(identical) + "/" + std::to_string(total) +
                                  " eval-mode forwards bitwise identical after save/load (16x16 and 64x64, batch 8)"};
}

// ---------------------------------------------------------------- 7

Verdict evaluation_oracle() {
  const std::vector<int> truth{0, 0, 1, 1, 2, 2, 3, 3, 4, 4, 5, 5, 6, 6};
  std::vector<int> pred = truth;
  pred[0] = 4;
  pred[3] = 0;
  pred[9] = 6;
  EvalReport r;
  r.confusion = confusion_from(truth, pred);
  ConfusionMatrix hand;
  for (std::size_t c = 0; c < kNumClasses; ++c) hand.counts[c][c] = 2;
  hand.counts[0][0] = 1;
  hand.counts[0][4] = 1;
  hand.counts[1][1] = 1;
  hand.counts[1][0] = 1;
  hand.counts[4][4] = 1;
  hand.counts[4][6] = 1;
  const bool fourteen = r.confusion == hand && r.confusion.correct() == 11 && r.samples() == 14 &&
                        r.overall_accuracy() == 100.0 * 11.0 / 14.0;

  std::vector<int> balanced;
  for (int c = 0; c < 7; ++c) balanced.insert(balanced.end(), 3, c);
  EvalReport constant, perfect;
  constant.confusion = confusion_from(balanced, std::vector<int>(balanced.size(), 3));
  perfect.confusion = confusion_from(balanced, balanced);
  bool constant_ok = constant.overall_accuracy() == 100.0 / 7.0;
  bool perfect_ok = perfect.overall_accuracy() == 100.0;
  for (EmotionClass c : kAllClasses) {
    constant_ok = constant_ok && *constant.class_accuracy(c) == (c == EmotionClass::Happy ? 100.0 : 0.0);
    perfect_ok = perfect_ok && *perfect.class_accuracy(c) == 100.0;
    for (EmotionClass p : kAllClasses) {
      perfect_ok = perfect_ok && perfect.confusion.counts[std::size_t(class_code(c))][std::size_t(class_code(p))] ==
                                     (c == p ? 3u : 0u);
    }
  }
  return {fourteen && constant_ok && perfect_ok,
          "14-sample case " + std::string(fourteen ? "11/14 = " + format_percent(r.overall_accuracy()) + "%" : "WRONG") +
              ", constant predictor " + (constant_ok ? "1/7" : "WRONG") + ", perfect predictor " +
              (perfect_ok ? "100%" : "WRONG")};
}

// ---------------------------------------------------------------- 8

void write_fer_like_csv(const fs::path& path) {
  std::ofstream out(path);
  out << "emotion,pixels,Usage\n";
  Rng rng(77);
  for (auto [usage, n] : {std::pair{"Training", 8}, std::pair{"PublicTest", 3}, std::pair{"PrivateTest", 3}}) {
    for (int c = 0; c < 7; ++c) {
      for (int i = 0; i < n; ++i) {
        out << c << ",\"";
        for (int p = 0; p < 2304; ++p) {
          out << (p ? " " : "") << ((p % 48) * (c + 1) * 3 + (p / 48) * c + static_cast<int>(rng.below(24))) % 256;
        }
        out << "\"," << usage << "\n";
      }
    }
  }
}

Verdict fer_end_to_end(const fs::path& scratch, const std::string& fer_csv, std::size_t epochs) {
  const fs::path dir = scratch / "fer_e2e";
  fs::remove_all(dir);
  fs::create_directories(dir);
  std::string csv = fer_csv;
  if (csv.empty()) {
    csv = (dir / "fer_like.csv").string();
    write_fer_like_csv(csv);
  }
  std::ostringstream sink;
  const auto run = [&](std::vector<std::string> args) { return cli::run(args, sink, sink); };
  const int plan = run({"--out-dir", (dir / "plan").string(), "plan", "--data", csv, "--scheme", "equalize"});
  const int train = run({"--out-dir", (dir / "train").string(), "train", "--data", csv, "--model-preset", "tiny",
                         "--epochs", std::to_string(epochs), "--quiet"});
  const int eval = run({"--out-dir", (dir / "eval").string(), "eval", "--checkpoint",
                        (dir / "train" / "checkpoints" / "best.ckpt").string(), "--data", csv});
  if (plan || train || eval) {
    return {false, "exit codes plan " + std::to_string(plan) + ", train " + std::to_string(train) + ", eval " +
                       std::to_string(eval) + ": " + sink.str().substr(0, 300)};
  }

  // Structural validation of the written report.
  const auto report = read_report_json(dir / "eval" / "eval_report.json");
  const auto j = nlohmann::json::parse(slurp(dir / "eval" / "eval_report.json"));
  const auto test_hist = summarize_fer2013_csv(csv, SplitSpec::fer2013()).at(Split::Test);
  bool ok = report.confusion.row_sums() == test_hist && j["samples"] == histogram_total(test_hist) &&
            j["confusion"].size() == kNumClasses && j["overall_accuracy"].get<double>() >= 0.0 &&
            j["overall_accuracy"].get<double>() <= 100.0 &&
            j["overall_accuracy"].get<double>() == report.overall_accuracy();
  for (EmotionClass c : kAllClasses) {
    const auto& v = j["class_accuracy"][std::string(class_name(c))];
    ok = ok && (test_hist[std::size_t(class_code(c))] == 0 ? v.is_null() : v.is_number());
  }
  return {ok, std::string(fer_csv.empty() ? "synthetic FER2013-format CSV (no real data supplied)" : "FER2013 CSV " + fer_csv) +
                  ": plan/train/eval exit 0, EvalReport valid over " + std::to_string(report.samples()) +
                  " PrivateTest rows, accuracy " + format_percent(report.overall_accuracy()) +
                  "% (not gated)"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance gate"};
  std::string fer_csv, scratch = (fs::temp_directory_path() / "remn_acceptance").string();
  std::vector<int> only;
  std::size_t fer_epochs = 2;
  app.add_option("--fer2013", fer_csv, "Real fer2013.csv for criterion 8");
  app.add_option("--fer-epochs", fer_epochs, "Epochs for the criterion 8 run");
  app.add_option("--only", only, "Run only these criteria");
  app.add_option("--scratch", scratch);
  CLI11_PARSE(app, argc, argv);
  fs::create_directories(scratch);

  const std::vector<std::pair<const char*, std::function<Verdict()>>> criteria{
      {"gradient fidelity", gradient_fidelity},
      {"augmentation table oracle", table_oracle},
      {"overfit on stub data", overfit},
      {"scheduler and early-stop traces", schedule_traces},
      {"determinism", [&] { return determinism(scratch); }},
      {"checkpoint round trip", [&] { return checkpoint_round_trip(scratch); }},
      {"evaluation oracle", evaluation_oracle},
      {"FER2013 end to end", [&] { return fer_end_to_end(scratch, fer_csv, fer_epochs); }},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i + 1);
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& ex) {
      v = {false, std::string("threw: ") + ex.what()};
    }
    failures += !v.pass;
    std::printf("[%s] %d %s: %s\n", v.pass ? "PASS" : "FAIL", id, criteria[i].first, v.detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
