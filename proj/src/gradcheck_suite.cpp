#include "remn/gradcheck_suite.hpp"

#include <cmath>
#include <stdexcept>

#include "remn/ops.hpp"
#include "remn/rng.hpp"

namespace remn {
namespace {

using Var = Tape<double>::Var;
using Param = BasicParameter<double>;
using TensorD = BasicTensor<double>;

TensorD normal_tensor(Rng& rng, Shape shape, double scale = 1.0, double shift = 0.0) {
  TensorD t(std::move(shape));
  for (auto& v : t.data()) v = shift + scale * rng.normal();
  return t;
}

// Entries at least `margin` away from zero, so +-eps never crosses the ReLU kink.
TensorD nonzero_tensor(Rng& rng, Shape shape, double margin) {
  TensorD t(std::move(shape));
  for (auto& v : t.data()) {
    const double mag = margin + std::abs(rng.normal());
    v = rng.uniform() < 0.5 ? -mag : mag;
  }
  return t;
}

// Values drawn from a shuffled grid with spacing 0.05 plus small jitter:
// every 2x2 window has a unique max separated by far more than 2*eps.
TensorD distinct_tensor(Rng& rng, Shape shape) {
  TensorD t(std::move(shape));
  const auto order = rng.permutation(t.numel());
  for (std::size_t i = 0; i < t.numel(); ++i) {
    t[i] = 0.05 * static_cast<double>(order[i]) - 0.025 * static_cast<double>(t.numel()) + 0.01 * rng.uniform();
  }
  return t;
}

std::vector<int> random_labels(Rng& rng, std::size_t n, std::size_t classes) {
  std::vector<int> labels(n);
  for (auto& l : labels) l = static_cast<int>(rng.below(classes));
  return labels;
}

GradcheckResult check_op(std::vector<Param>& params, const std::function<Var(Tape<double>&, std::span<const Var>)>& op,
                         std::uint64_t seed, double eps) {
  std::vector<Param*> ptrs;
  for (auto& p : params) ptrs.push_back(&p);
  return check_parameters(ptrs,
                          [&](Tape<double>& tape) {
                            std::vector<Var> vars;
                            for (auto& p : params) vars.push_back(tape.parameter(p));
                            return op(tape, vars);
                          },
                          seed, eps);
}

GradcheckResult check_one(std::string_view layer, std::uint64_t seed, double eps) {
  Rng rng(mix_seed(seed, 0x6772616463686bULL));
  std::vector<Param> p;

  if (layer == "conv2d") {
    const std::size_t stride = 1 + seed % 2, padding = (seed / 2) % 2;
    p.emplace_back("x", normal_tensor(rng, {2, 3, 6, 6}));
    p.emplace_back("weight", normal_tensor(rng, {4, 3, 3, 3}, 0.3));
    p.emplace_back("bias", normal_tensor(rng, {4}));
    return check_op(p, [=](Tape<double>& t, std::span<const Var> v) { return ops::conv2d(t, v[0], v[1], v[2], stride, padding); }, seed, eps);
  }
  if (layer == "batch_norm2d" || layer == "batch_norm2d_eval") {
    const Mode mode = layer == "batch_norm2d" ? Mode::Train : Mode::Eval;
    BatchNormState<double> state(3);
    for (std::size_t c = 0; c < 3; ++c) {
      state.running_mean[c] = rng.normal();
      state.running_var[c] = 0.5 + rng.uniform();
    }
    p.emplace_back("x", normal_tensor(rng, {3, 3, 4, 4}, 2.0, 1.0));
    p.emplace_back("gamma", normal_tensor(rng, {3}, 1.0, 1.0));
    p.emplace_back("beta", normal_tensor(rng, {3}));
    return check_op(p, [&state, mode](Tape<double>& t, std::span<const Var> v) {
      return ops::batch_norm2d(t, v[0], v[1], v[2], state, mode);
    }, seed, eps);
  }
  if (layer == "relu") {
    p.emplace_back("x", nonzero_tensor(rng, {2, 3, 4, 4}, 1e-2));
    return check_op(p, [](Tape<double>& t, std::span<const Var> v) { return ops::relu(t, v[0]); }, seed, eps);
  }
  if (layer == "sigmoid") {
    p.emplace_back("x", normal_tensor(rng, {2, 3, 4, 4}, 3.0));
    return check_op(p, [](Tape<double>& t, std::span<const Var> v) { return ops::sigmoid(t, v[0]); }, seed, eps);
  }
  if (layer == "max_pool2d") {
    p.emplace_back("x", distinct_tensor(rng, {2, 2, 6, 6}));
    return check_op(p, [](Tape<double>& t, std::span<const Var> v) { return ops::max_pool2d(t, v[0]); }, seed, eps);
  }
  if (layer == "global_average_pool") {
    p.emplace_back("x", normal_tensor(rng, {2, 3, 5, 5}));
    return check_op(p, [](Tape<double>& t, std::span<const Var> v) { return ops::global_average_pool(t, v[0]); }, seed, eps);
  }
  if (layer == "adaptive_average_pool") {
    p.emplace_back("x", normal_tensor(rng, {2, 3, 5, 7}));
    return check_op(p, [](Tape<double>& t, std::span<const Var> v) { return ops::adaptive_average_pool(t, v[0], 2, 3); }, seed, eps);
  }
  if (layer == "channel_scale") {
    p.emplace_back("features", normal_tensor(rng, {2, 3, 4, 4}));
    p.emplace_back("weights", normal_tensor(rng, {2, 3, 1, 1}));
    return check_op(p, [](Tape<double>& t, std::span<const Var> v) { return ops::channel_scale(t, v[0], v[1]); }, seed, eps);
  }
  if (layer == "add") {
    p.emplace_back("a", normal_tensor(rng, {2, 3, 4}));
    p.emplace_back("b", normal_tensor(rng, {2, 3, 4}));
    return check_op(p, [](Tape<double>& t, std::span<const Var> v) { return ops::add(t, v[0], v[1]); }, seed, eps);
  }
  if (layer == "linear") {
    p.emplace_back("x", normal_tensor(rng, {3, 5}));
    p.emplace_back("weight", normal_tensor(rng, {4, 5}));
    p.emplace_back("bias", normal_tensor(rng, {4}));
    return check_op(p, [](Tape<double>& t, std::span<const Var> v) { return ops::linear(t, v[0], v[1], v[2]); }, seed, eps);
  }
  if (layer == "softmax_cross_entropy") {
    p.emplace_back("logits", normal_tensor(rng, {3, 7}, 2.0));
    const auto labels = random_labels(rng, 3, 7);
    return check_op(p, [labels](Tape<double>& t, std::span<const Var> v) {
      return ops::softmax_cross_entropy(t, v[0], labels).loss;
    }, seed, eps);
  }
  if (layer == "se_block") {
    ModuleStore<double> store(seed);
    const auto block = SEBlock<double>::create(store, "se", 8, 4);
    Param input("f0", normal_tensor(rng, {2, 8, 4, 4}));
    for (auto& v : input.value.data()) v = std::abs(v);
    std::vector<Param*> params{&input};
    for (auto& q : store.parameters()) params.push_back(&q);
    return check_parameters(params, [&](Tape<double>& t) { return block.forward(t, t.parameter(input)).scaled; }, seed, eps);
  }
  if (layer == "residual_block") {
    ModuleStore<double> store(seed);
    const bool identity = seed % 2 == 0;
    const auto block = identity ? ResidualBlock<double>::create(store, "res", 4, 4, 1)
                                : ResidualBlock<double>::create(store, "res", 4, 6, 2);
    Param input("x", normal_tensor(rng, {4, 4, 6, 6}));
    std::vector<Param*> params{&input};
    for (auto& q : store.parameters()) params.push_back(&q);
    return check_parameters(params, [&](Tape<double>& t) { return block.forward(t, t.parameter(input), Mode::Train); }, seed, eps);
  }
  if (layer == "model") {
    BasicResEmoteNet<double> model(gradcheck_model_config(seed));
    Param input("input", normal_tensor(rng, {16, 3, 8, 8}));
    const auto labels = random_labels(rng, 16, 7);
    std::vector<Param*> params{&input};
    for (auto& q : model.parameters()) params.push_back(&q);
    return check_parameters(params, [&](Tape<double>& t) {
      return ops::softmax_cross_entropy(t, model.forward(t, t.parameter(input)), labels).loss;
    }, seed, eps);
  }
  throw std::invalid_argument("unknown gradcheck layer '" + std::string(layer) + "'");
}

}  // namespace

GradcheckResult check_parameters(std::vector<BasicParameter<double>*> params,
                                 const std::function<Tape<double>::Var(Tape<double>&)>& build, std::uint64_t seed,
                                 double eps, const std::vector<std::vector<bool>>& skip) {
  for (auto* p : params) p->zero_grad();

  TensorD projection;
  {
    Tape<double> tape;
    const Var out = build(tape);
    Rng rng(mix_seed(seed, 0x70726f6aULL));
    projection = normal_tensor(rng, tape.value(out).shape());
    tape.backward(out, projection);
  }

  std::vector<GradProbe> probes;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto* p = params[i];
    GradProbe probe{p->name, p->value.data(), std::vector<double>(p->grad.data().begin(), p->grad.data().end()), {}};
    if (i < skip.size()) probe.skip = skip[i];
    probes.push_back(std::move(probe));
  }

  const std::function<Evaluation()> objective = [&] {
    Tape<double> tape(false);
    tape.track_branches(true);
    const auto& out = tape.value(build(tape));
    double s = 0.0;
    for (std::size_t i = 0; i < out.numel(); ++i) s += out[i] * projection[i];
    return Evaluation{s, tape.branch_signature()};
  };
  return gradcheck(objective, probes, eps);
}

ModelConfig gradcheck_model_config(std::uint64_t seed) {
  ModelConfig c;
  c.input_height = 8;
  c.input_width = 8;
  c.backbone_channels = {4, 8, 8};
  c.se_reduction = 4;
  c.residual_channels = {8, 8, 8};
  c.classifier_hidden = {8};
  c.num_classes = 7;
  c.seed = seed;
  return c;
}

const std::vector<std::string>& gradcheck_layers() {
  static const std::vector<std::string> layers{
      "conv2d",        "batch_norm2d", "batch_norm2d_eval", "relu",   "sigmoid",
      "max_pool2d",    "global_average_pool", "adaptive_average_pool", "channel_scale", "add",
      "linear",        "softmax_cross_entropy", "se_block", "residual_block", "model"};
  return layers;
}

LayerCheckResult check_layer(std::string_view layer, const GradcheckSuiteOptions& options) {
  LayerCheckResult result;
  result.layer = std::string(layer);
  result.tolerance = layer == "model" ? options.model_tolerance
                     : (layer == "se_block" || layer == "residual_block") ? options.composite_tolerance
                                                                          : options.layer_tolerance;
  for (std::size_t s = 0; s < options.seeds; ++s) {
    const std::uint64_t seed = options.base_seed + s;
    const GradcheckResult r = check_one(layer, seed, options.eps);
    if (result.seeds == 0 || r.max_rel_error > result.worst_rel_error) {
      result.worst_rel_error = r.max_rel_error;
      result.worst_seed = seed;
      result.worst_probe = r.worst_probe;
      result.worst_index = r.worst_index;
      result.worst_analytic = r.worst_analytic;
      result.worst_numeric = r.worst_numeric;
    }
    result.coordinates += r.checked;
    result.skipped += r.skipped;
    result.kinks += r.kinks;
    ++result.seeds;
  }
  result.passed = result.seeds > 0 && result.worst_rel_error <= result.tolerance;
  return result;
}

std::vector<LayerCheckResult> run_gradcheck_suite(const GradcheckSuiteOptions& options) {
  std::vector<LayerCheckResult> results;
  for (const auto& layer : gradcheck_layers()) results.push_back(check_layer(layer, options));
  return results;
}

}  // namespace remn
