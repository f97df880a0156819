#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <memory>
#include <optional>
#include <sstream>

#include <nlohmann/json.hpp>

#include "remn/augment.hpp"
#include "remn/checkpoint.hpp"
#include "remn/dataset.hpp"
#include "remn/errors.hpp"
#include "remn/evaluation.hpp"
#include "remn/gradcheck_suite.hpp"
#include "remn/image.hpp"
#include "remn/training.hpp"

namespace remn::cli {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kVersion = "0.1.0";

// --config files are JSON: top-level keys are global options, nested
// objects are subcommands, e.g. {"seed": 3, "train": {"lr": 0.01}}.
class JsonConfig : public CLI::Config {
 public:
  std::string to_config(const CLI::App* app, bool default_also, bool, std::string) const override {
    return options_json(app, default_also).dump(2);
  }

  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
    json j;
    try {
      j = json::parse(input);
    } catch (const json::exception& ex) {
      throw CLI::ConversionError(std::string("config file is not valid JSON: ") + ex.what());
    }
    if (!j.is_object()) throw CLI::ConversionError("config file must hold a JSON object");
    std::vector<CLI::ConfigItem> items;
    flatten(j, {}, items);
    return items;
  }

  static json options_json(const CLI::App* app, bool default_also) {
    json j = json::object();
    for (const CLI::Option* opt : app->get_options()) {
      const std::string name = opt->get_single_name();
      if (name.empty() || name == "help" || name == "config" || name == "version") continue;
      if (opt->count() > 0) {
        const auto& results = opt->results();
        if (opt->get_type_size() == 0) {
          j[name] = true;
        } else if (results.size() == 1 && opt->get_expected_max() <= 1) {
          j[name] = results[0];
        } else {
          j[name] = results;
        }
      } else if (default_also && !opt->get_default_str().empty()) {
        j[name] = opt->get_default_str();
      } else if (default_also && opt->get_type_size() == 0) {
        j[name] = false;
      }
    }
    for (const CLI::App* sub : app->get_subcommands({})) {
      if (sub->parsed()) j[sub->get_name()] = options_json(sub, default_also);
    }
    return j;
  }

 private:
  static void flatten(const json& j, std::vector<std::string> parents, std::vector<CLI::ConfigItem>& items) {
    for (const auto& [key, value] : j.items()) {
      if (value.is_object()) {
        auto next = parents;
        next.push_back(key);
        flatten(value, next, items);
        continue;
      }
      CLI::ConfigItem item;
      item.parents = parents;
      item.name = key;
      if (value.is_array()) {
        for (const auto& v : value) item.inputs.push_back(scalar(v));
      } else {
        item.inputs.push_back(scalar(value));
      }
      items.push_back(std::move(item));
    }
  }

  static std::string scalar(const json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
    return v.dump();
  }
};

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& ex) {
    throw DataError(path.string() + ": " + ex.what());
  }
}

void write_json_file(const fs::path& path, const json& j) { write_file_atomic(path, j.dump(2) + "\n"); }

std::string utc_timestamp() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// ------------------------------------------------------------ data access

bool is_csv(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return fs::is_regular_file(p) && ext == ".csv";
}

std::optional<fs::path> split_subdir(const fs::path& root, std::string_view name) {
  if (!fs::is_directory(root)) return std::nullopt;
  for (const auto& e : fs::directory_iterator(root)) {
    std::string n = e.path().filename().string();
    std::transform(n.begin(), n.end(), n.begin(), [](unsigned char c) { return std::tolower(c); });
    if (e.is_directory() && n == name) return e.path();
  }
  return std::nullopt;
}

std::string default_dataset_name(const fs::path& p) {
  if (is_csv(p)) return p.stem().string();
  const fs::path clean = p.filename().empty() ? p.parent_path() : p;
  return clean.filename().string();
}

struct DataSplits {
  std::string name;
  std::map<Split, LabeledDataset> splits;
};

/// FER2013-style CSV (Training / PublicTest / PrivateTest), a folder with
/// train/ val/ test/ subdirectories, or a single class-folder tree used as
/// the training split.
DataSplits load_splits(const fs::path& path, const ImageOptions& options, const std::string& name_override) {
  if (!fs::exists(path)) throw DataError("data path does not exist: " + path.string());
  DataSplits d;
  d.name = name_override.empty() ? default_dataset_name(path) : name_override;
  if (is_csv(path)) {
    d.splits = load_fer2013_csv(path, SplitSpec::fer2013(), options);
  } else if (split_subdir(path, "train")) {
    for (auto [split, dir] : {std::pair{Split::Train, "train"}, std::pair{Split::Val, "val"}, std::pair{Split::Test, "test"}}) {
      if (const auto sub = split_subdir(path, dir)) {
        auto ds = load_image_folder(*sub, options);
        ds.split = split;
        d.splits[split] = std::move(ds);
      }
    }
  } else {
    d.splits[Split::Train] = load_image_folder(path, options);
  }
  for (auto& [split, ds] : d.splits) ds.name = d.name;
  return d;
}

Histogram train_histogram(const fs::path& path) {
  if (!fs::exists(path)) throw DataError("data path does not exist: " + path.string());
  if (is_csv(path)) {
    const auto h = summarize_fer2013_csv(path, SplitSpec::fer2013());
    const auto it = h.find(Split::Train);
    if (it == h.end()) throw DataError(path.string() + ": no Training rows");
    return it->second;
  }
  if (const auto sub = split_subdir(path, "train")) return count_image_folder(*sub);
  return count_image_folder(path);
}

ModelConfig preset_model(const std::string& preset) {
  if (preset == "full") return ModelConfig{};
  if (preset == "tiny") {
    ModelConfig c;
    c.backbone_channels = {4, 8, 8};
    c.se_reduction = 4;
    c.residual_channels = {8, 12, 16};
    c.classifier_hidden = {8};
    return c;
  }
  throw UsageError("unknown model preset '" + preset + "' (expected full or tiny)");
}

std::string render_plan(const AugmentationPlan& plan) {
  std::ostringstream os;
  os << "dataset " << (plan.dataset.empty() ? "-" : plan.dataset) << ", scheme " << plan.scheme.to_string() << "\n";
  os << std::left << std::setw(10) << "class" << std::right << std::setw(10) << "original" << std::setw(10)
     << "target" << std::setw(10) << "deficit" << std::setw(10) << "after" << "\n";
  for (EmotionClass c : kAllClasses) {
    const ClassPlan& p = plan.at(c);
    os << std::left << std::setw(10) << class_name(c) << std::right << std::setw(10) << p.original << std::setw(10)
       << p.target << std::setw(10) << p.deficit << std::setw(10) << p.expected() << "\n";
  }
  os << std::left << std::setw(10) << "total" << std::right << std::setw(10) << histogram_total(plan.originals())
     << std::setw(10) << histogram_total(plan.targets()) << std::setw(10) << plan.total_deficit() << std::setw(10)
     << histogram_total(plan.expected()) << "\n";
  return os.str();
}

std::string render_confusion(const ConfusionMatrix& m) {
  std::ostringstream os;
  os << std::left << std::setw(10) << "true\\pred" << std::right;
  for (EmotionClass c : kAllClasses) os << std::setw(9) << class_name(c);
  os << "\n";
  for (EmotionClass r : kAllClasses) {
    os << std::left << std::setw(10) << class_name(r) << std::right;
    for (std::size_t v : m.counts[static_cast<std::size_t>(class_code(r))]) os << std::setw(9) << v;
    os << "\n";
  }
  return os.str();
}

// ------------------------------------------------------------ subcommands

struct Common {
  std::string out_dir = "out";
  bool deterministic = false;
};

struct Run {
  std::string command;
  std::vector<std::string> outputs;
  json extra = json::object();
};

struct PlanArgs {
  std::string data, histogram, scheme = "equalize", templates, dataset_name;
  std::uint64_t seed = 0;
};

int cmd_plan(const PlanArgs& a, const Common& common, Run& run, std::ostream& out) {
  Histogram h{};
  std::string name = a.dataset_name;
  if (!a.histogram.empty()) {
    if (!a.data.empty()) throw UsageError("give either --data or --histogram, not both");
    std::vector<std::size_t> counts;
    std::stringstream ss(a.histogram);
    for (std::string cell; std::getline(ss, cell, ',');) {
      try {
        std::size_t used = 0;
        const long long v = std::stoll(cell, &used);
        if (used != cell.size() || v < 0) throw std::invalid_argument(cell);
        counts.push_back(static_cast<std::size_t>(v));
      } catch (const std::exception&) {
        throw UsageError("--histogram entries must be nonnegative integers, got '" + cell + "'");
      }
    }
    if (counts.size() != kNumClasses) throw UsageError("--histogram needs 7 comma-separated counts");
    std::copy(counts.begin(), counts.end(), h.begin());
  } else if (!a.data.empty()) {
    h = train_histogram(a.data);
    if (name.empty()) name = default_dataset_name(a.data);
  } else {
    throw UsageError("plan needs --data or --histogram");
  }

  const auto plan = compute_plan(h, AugmentationScheme::parse(a.scheme), name);
  const auto templates = a.templates.empty() ? default_templates() : templates_from_json(read_json_file(a.templates));
  const auto manifest = emit_manifest(plan, templates, a.seed);

  const fs::path dir = common.out_dir;
  write_json_file(dir / "plan.json", to_json(plan));
  write_json_file(dir / "manifest.json", to_json(manifest));
  run.outputs = {(dir / "plan.json").string(), (dir / "manifest.json").string()};
  out << render_plan(plan) << manifest.entries.size() << " prompts written to " << (dir / "manifest.json").string()
      << "\n";
  return kExitOk;
}

struct GenerateArgs {
  std::string manifest, generator = "stub", image_dir;
  std::size_t threads = 1;
};

int cmd_generate(const GenerateArgs& a, const Common& common, Run& run, std::ostream& out, std::ostream& err) {
  const auto manifest = manifest_from_json(read_json_file(a.manifest));
  std::unique_ptr<Generator> gen;
  if (a.generator == "stub") {
    gen = std::make_unique<StubGenerator>();
  } else if (a.generator.rfind("command:", 0) == 0) {
    gen = std::make_unique<CommandGenerator>(a.generator.substr(8));
  } else {
    throw UsageError("unknown generator '" + a.generator + "' (expected stub or command:<cmd>)");
  }
  const fs::path images = a.image_dir.empty() ? fs::path(common.out_dir) / "synthetic" : fs::path(a.image_dir);
  GenerationOptions options;
  options.threads = common.deterministic ? 1 : std::max<std::size_t>(a.threads, 1);
  const auto report = run_generation(manifest, *gen, images, options);

  const fs::path report_path = fs::path(common.out_dir) / "generation_report.json";
  write_json_file(report_path, to_json(report));
  run.outputs = {images.string(), report_path.string()};

  for (EmotionClass c : kAllClasses) {
    const auto& g = report.classes[static_cast<std::size_t>(class_code(c))];
    if (g.requested == 0) continue;
    out << std::left << std::setw(10) << class_name(c) << std::right << " requested " << g.requested << ", new "
        << g.generated << ", existing " << g.skipped_existing << ", failed " << g.failed.size() << "\n";
    for (const auto& f : g.failed) err << "seed " << f.seed << ": " << f.reason << "\n";
  }
  out << report.succeeded() << "/" << report.requested() << " images present in " << images.string() << "\n";
  if (report.all_failed()) {
    err << "every generation request failed\n";
    return kExitData;
  }
  return kExitOk;
}

struct TrainArgs {
  std::string data, synth_dir, scheme, model_config, model_preset = "full", train_config, dataset_name;
  std::optional<std::size_t> image_size, epochs, batch_size, plateau_patience, early_stop_patience;
  std::optional<double> lr, momentum, weight_decay;
  std::optional<std::uint64_t> seed;
  double val_fraction = 0.1;
  bool quiet = false;
};

int cmd_train(const TrainArgs& a, const Common& common, Run& run, std::ostream& out) {
  ModelConfig mc = a.model_config.empty() ? preset_model(a.model_preset) : model_config_from_json(read_json_file(a.model_config));
  if (a.image_size) mc.input_height = mc.input_width = *a.image_size;
  TrainConfig tc = a.train_config.empty() ? TrainConfig{} : train_config_from_json(read_json_file(a.train_config));
  if (a.lr) tc.learning_rate = *a.lr;
  if (a.epochs) tc.max_epochs = *a.epochs;
  if (a.batch_size) tc.batch_size = *a.batch_size;
  if (a.plateau_patience) tc.plateau_patience = *a.plateau_patience;
  if (a.early_stop_patience) tc.early_stop_patience = *a.early_stop_patience;
  if (a.momentum) tc.momentum = *a.momentum;
  if (a.weight_decay) tc.weight_decay = *a.weight_decay;
  if (a.seed) {
    tc.seed = *a.seed;
    mc.seed = *a.seed;
  }
  if (tc.min_lr > tc.learning_rate) tc.min_lr = tc.learning_rate;
  tc.deterministic = tc.deterministic || common.deterministic;
  const fs::path dir = common.out_dir;
  tc.checkpoint_dir = (dir / "checkpoints").string();
  mc.validate();
  tc.validate();
  if (!a.synth_dir.empty() && a.scheme.empty()) throw UsageError("--synth-dir needs --scheme to verify the merge");
  if (!(a.val_fraction > 0.0 && a.val_fraction < 1.0)) throw UsageError("--val-fraction must be in (0, 1)");

  const ImageOptions options{mc.input_height, mc.input_width, {}};
  DataSplits data = load_splits(a.data, options, a.dataset_name);
  auto train_it = data.splits.find(Split::Train);
  if (train_it == data.splits.end() || train_it->second.empty()) throw DataError("no training samples in " + a.data);
  LabeledDataset real = std::move(train_it->second);

  std::optional<AugmentationPlan> plan;
  LabeledDataset synthetic;
  if (!a.synth_dir.empty()) {
    plan = compute_plan(real.histogram(), AugmentationScheme::parse(a.scheme), data.name);
    synthetic = load_image_folder(a.synth_dir, options, Origin::Synthetic);
    merge_and_verify(real, synthetic, *plan);
    out << "merged " << synthetic.size() << " synthetic samples; every class verified against "
        << plan->scheme.to_string() << "\n";
  }

  LabeledDataset val;
  if (auto v = data.splits.find(Split::Val); v != data.splits.end() && !v->second.empty()) {
    val = std::move(v->second);
  } else {
    auto parts = holdout_split(std::move(real), a.val_fraction, tc.seed);
    real = std::move(parts.train);
    val = std::move(parts.val);
    out << "no validation split; held out " << val.size() << " real training samples\n";
  }
  LabeledDataset train = plan ? merge(std::move(real), synthetic) : std::move(real);

  write_json_file(dir / "model_config.json", to_json(mc));
  write_json_file(dir / "train_config.json", to_json(tc));
  ResEmoteNet model(mc);
  out << "training on " << train.size() << " samples, validating on " << val.size() << ", " << model.parameter_count()
      << " parameters\n";
  const auto report = fit(model, train, val, tc, [&](const EpochRecord& r) {
    if (!a.quiet) {
      char line[160];
      std::snprintf(line, sizeof line, "epoch %3zu  lr %.1e  train loss %.4f acc %6.2f  val loss %.4f acc %6.2f%s\n",
                    r.epoch, r.learning_rate, r.train_loss, r.train_accuracy, r.val_loss, r.val_accuracy,
                    r.improved ? "  *" : "");
      out << line;
    }
    return true;
  });
  json rj = to_json(report);
  if (plan) rj["augmentation"] = to_json(*plan);
  write_json_file(dir / "train_report.json", rj);
  run.outputs = {(dir / "model_config.json").string(), (dir / "train_config.json").string(),
                 (dir / "checkpoints" / "best.ckpt").string(), (dir / "checkpoints" / "last.ckpt").string(),
                 (dir / "train_report.json").string()};
  out << "stopped (" << stop_reason_name(report.stop_reason) << ") after " << report.epochs.size()
      << " epochs; best epoch " << report.best_epoch << " with val loss " << report.best_val_loss << "\n";
  return kExitOk;
}

struct EvalArgs {
  std::string checkpoint, model_config, data, split = "test", augmentation = "Original", dataset_name;
  std::size_t batch_size = 64;
};

fs::path find_model_config(const fs::path& checkpoint) {
  for (const fs::path& candidate :
       {checkpoint.parent_path() / "model_config.json", checkpoint.parent_path().parent_path() / "model_config.json"}) {
    if (fs::exists(candidate)) return candidate;
  }
  throw UsageError("no model_config.json next to " + checkpoint.string() + "; pass --model-config");
}

int cmd_eval(const EvalArgs& a, const Common& common, Run& run, std::ostream& out) {
  const fs::path cfg_path = a.model_config.empty() ? find_model_config(a.checkpoint) : fs::path(a.model_config);
  const ModelConfig mc = model_config_from_json(read_json_file(cfg_path));
  ResEmoteNet model = load_checkpoint(a.checkpoint, mc);

  static const std::map<std::string, Split> kSplits{{"train", Split::Train}, {"val", Split::Val}, {"test", Split::Test}};
  const auto split_it = kSplits.find(a.split);
  if (split_it == kSplits.end()) throw UsageError("--split must be train, val or test");
  DataSplits data = load_splits(a.data, ImageOptions{mc.input_height, mc.input_width, {}}, a.dataset_name);
  auto ds_it = data.splits.find(split_it->second);
  if (ds_it == data.splits.end() || ds_it->second.empty()) {
    throw DataError("no " + a.split + " samples in " + a.data);
  }

  EvalReport report = evaluate(model, ds_it->second, a.batch_size);
  report.augmentation = a.augmentation;
  report.checkpoint = a.checkpoint;
  const fs::path dir = common.out_dir;
  write_report_json(report, dir / "eval_report.json");
  write_confusion_csv(report.confusion, dir / "confusion.csv");
  run.outputs = {(dir / "eval_report.json").string(), (dir / "confusion.csv").string()};

  out << report.dataset << " " << a.split << " (" << report.samples() << " samples): overall accuracy "
      << format_percent(report.overall_accuracy()) << "%\n";
  for (EmotionClass c : kAllClasses) {
    const auto acc = report.class_accuracy(c);
    out << "  " << std::left << std::setw(10) << class_name(c) << std::right << std::setw(7)
        << (acc ? format_percent(*acc) : std::string("-")) << "\n";
  }
  out << render_confusion(report.confusion);
  return kExitOk;
}

struct GradcheckArgs {
  std::size_t seeds = 20;
  std::vector<std::string> layers;
};

int cmd_gradcheck(const GradcheckArgs& a, const Common& common, Run& run, std::ostream& out) {
  GradcheckSuiteOptions options;
  options.seeds = a.seeds;
  std::vector<std::string> layers = a.layers.empty() ? gradcheck_layers() : a.layers;
  for (const auto& l : layers) {
    if (std::find(gradcheck_layers().begin(), gradcheck_layers().end(), l) == gradcheck_layers().end()) {
      throw UsageError("unknown gradcheck layer '" + l + "'");
    }
  }
  char line[200];
  std::snprintf(line, sizeof line, "%-22s %12s %10s %6s %8s %6s  %s\n", "layer", "worst_rel", "tolerance", "seeds",
                "coords", "kinks", "result");
  out << line;
  json results = json::array();
  bool all = true;
  const auto started = std::chrono::steady_clock::now();
  for (const auto& layer : layers) {
    const auto r = check_layer(layer, options);
    all = all && r.passed;
    std::snprintf(line, sizeof line, "%-22s %12.3e %10.1e %6zu %8zu %6zu  %s\n", r.layer.c_str(), r.worst_rel_error,
                  r.tolerance, r.seeds, r.coordinates, r.kinks, r.passed ? "PASS" : "FAIL");
    out << line << std::flush;
    results.push_back({{"layer", r.layer},
                       {"worst_rel_error", r.worst_rel_error},
                       {"tolerance", r.tolerance},
                       {"worst_seed", r.worst_seed},
                       {"worst_probe", r.worst_probe},
                       {"worst_index", r.worst_index},
                       {"seeds", r.seeds},
                       {"coordinates", r.coordinates},
                       {"kinks", r.kinks},
                       {"passed", r.passed}});
  }
  json summary = {{"eps", options.eps}, {"passed", all}, {"layers", results}};
  if (!common.deterministic) {
    summary["seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  }
  const fs::path path = fs::path(common.out_dir) / "gradcheck.json";
  write_json_file(path, summary);
  run.outputs = {path.string()};
  out << (all ? "all layers passed\n" : "gradient check FAILED\n");
  return all ? kExitOk : kExitNumeric;
}

struct CompareArgs {
  std::vector<std::string> reports;
};

int cmd_compare(const CompareArgs& a, const Common& common, Run& run, std::ostream& out) {
  std::vector<EvalReport> reports;
  for (const auto& p : a.reports) reports.push_back(read_report_json(p));
  const fs::path dir = common.out_dir;
  write_file_atomic(dir / "comparison.csv", comparison_csv(reports));
  write_file_atomic(dir / "comparison.txt", comparison_text(reports));
  run.outputs = {(dir / "comparison.csv").string(), (dir / "comparison.txt").string()};
  out << comparison_text(reports);
  return kExitOk;
}

void write_run_manifest(const Common& common, const Run& run, const std::vector<std::string>& args,
                        const json& config, int code, const std::string& error, const std::string& started) {
  json j = {{"tool", "resemote"},    {"version", kVersion}, {"command", run.command},
            {"arguments", args},     {"config", config},    {"outputs", run.outputs},
            {"exit_code", code},     {"deterministic", common.deterministic}};
  if (!error.empty()) j["error"] = error;
  if (!common.deterministic) j["started_at"] = started;
  for (const auto& [k, v] : run.extra.items()) j[k] = v;
  write_json_file(fs::path(common.out_dir) / "run_manifest.json", j);
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"ResEmoteNet facial emotion pipeline: plan, generate, train, eval"};
  app.config_formatter(std::make_shared<JsonConfig>());
  app.set_config("--config", "", "JSON file with option values; flags override it");
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();

  Common common;
  app.add_option("--out-dir", common.out_dir, "Directory for every output of this run");
  app.add_flag("--deterministic", common.deterministic, "Single-threaded, no wall-clock fields");

  PlanArgs plan;
  auto* p = app.add_subcommand("plan", "Compute augmentation targets and emit the prompt manifest");
  p->add_option("--data", plan.data, "FER2013 CSV or image-folder dataset");
  p->add_option("--histogram", plan.histogram, "Seven comma-separated class counts instead of --data");
  p->add_option("--scheme", plan.scheme, "equalize, fixed:N or aug1..aug4");
  p->add_option("--templates", plan.templates, "JSON prompt templates");
  p->add_option("--seed", plan.seed, "First generation seed");
  p->add_option("--dataset-name", plan.dataset_name);

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate", "Produce synthetic images for a manifest");
  g->add_option("--manifest", gen.manifest, "manifest.json from plan")->required();
  g->add_option("--generator", gen.generator, "stub or command:<shell command>");
  g->add_option("--image-dir", gen.image_dir, "Default <out-dir>/synthetic");
  g->add_option("--threads", gen.threads)->check(CLI::PositiveNumber);

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Train on real data plus optional verified synthetic data");
  t->add_option("--data", train.data, "FER2013 CSV or image-folder dataset")->required();
  t->add_option("--synth-dir", train.synth_dir, "Synthetic images from generate");
  t->add_option("--scheme", train.scheme, "Scheme the synthetic images were planned with");
  t->add_option("--model-config", train.model_config, "JSON model config");
  t->add_option("--model-preset", train.model_preset, "full or tiny (without --model-config)");
  t->add_option("--train-config", train.train_config, "JSON train config");
  t->add_option("--image-size", train.image_size);
  t->add_option("--lr", train.lr);
  t->add_option("--epochs", train.epochs);
  t->add_option("--batch-size", train.batch_size);
  t->add_option("--plateau-patience", train.plateau_patience);
  t->add_option("--early-stop-patience", train.early_stop_patience);
  t->add_option("--momentum", train.momentum);
  t->add_option("--weight-decay", train.weight_decay);
  t->add_option("--seed", train.seed);
  t->add_option("--val-fraction", train.val_fraction, "Holdout share when the data has no validation split");
  t->add_option("--dataset-name", train.dataset_name);
  t->add_flag("--quiet", train.quiet);

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Evaluate a checkpoint and write the report and confusion matrix");
  e->add_option("--checkpoint", ev.checkpoint)->required();
  e->add_option("--model-config", ev.model_config, "Default: model_config.json beside the checkpoint");
  e->add_option("--data", ev.data)->required();
  e->add_option("--split", ev.split, "train, val or test");
  e->add_option("--augmentation", ev.augmentation, "Tag for comparison tables (Original, Aug1..Aug4)");
  e->add_option("--dataset-name", ev.dataset_name);
  e->add_option("--batch-size", ev.batch_size)->check(CLI::PositiveNumber);

  GradcheckArgs gc;
  auto* c = app.add_subcommand("gradcheck", "Finite-difference check of every layer");
  c->add_option("--seeds", gc.seeds)->check(CLI::PositiveNumber);
  c->add_option("--layer", gc.layers, "Restrict to these layers");

  CompareArgs cmp;
  auto* m = app.add_subcommand("compare", "Tabulate several eval reports");
  m->add_option("reports", cmp.reports, "eval_report.json files")->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& ex) {
    const int code = app.exit(ex, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  Run run;
  const std::string started = utc_timestamp();
  CLI::App* sub = app.get_subcommands().front();
  run.command = sub->get_name();
  const json config = JsonConfig::options_json(&app, true);

  int code = kExitOk;
  std::string error;
  try {
    fs::create_directories(common.out_dir);
    if (sub == p) code = cmd_plan(plan, common, run, out);
    if (sub == g) code = cmd_generate(gen, common, run, out, err);
    if (sub == t) code = cmd_train(train, common, run, out);
    if (sub == e) code = cmd_eval(ev, common, run, out);
    if (sub == c) code = cmd_gradcheck(gc, common, run, out);
    if (sub == m) code = cmd_compare(cmp, common, run, out);
  } catch (const UsageError& ex) {
    error = ex.what();
    code = kExitUsage;
  } catch (const NumericError& ex) {
    error = ex.what();
    code = kExitNumeric;
  } catch (const DataError& ex) {
    error = ex.what();
    code = kExitData;
  } catch (const ShapeError& ex) {
    error = ex.what();
    code = kExitData;
  } catch (const GenerationError& ex) {
    error = ex.what();
    code = kExitData;
  } catch (const fs::filesystem_error& ex) {
    error = ex.what();
    code = kExitData;
  }
  if (!error.empty()) err << "error: " << error << "\n";
  try {
    write_run_manifest(common, run, args, config, code, error, started);
  } catch (const std::exception& ex) {
    err << "error: could not write run manifest: " << ex.what() << "\n";
    if (code == kExitOk) code = kExitData;
  }
  return code;
}

}  // namespace remn::cli
