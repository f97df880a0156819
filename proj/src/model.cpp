#include "remn/model.hpp"

#include <cmath>
#include <stdexcept>

#include "remn/errors.hpp"

namespace remn {

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw UsageError("model config: " + msg); };
  if (input_height == 0 || input_width == 0) fail("input_size must be positive");
  if (input_channels == 0) fail("input_channels must be positive");
  if (backbone_channels.empty()) fail("backbone_channels must name at least one stage");
  if (residual_channels.empty()) fail("residual_channels must name at least one block");
  for (std::size_t c : backbone_channels) {
    if (c == 0) fail("backbone_channels entries must be positive");
  }
  for (std::size_t c : residual_channels) {
    if (c == 0) fail("residual_channels entries must be positive");
  }
  for (std::size_t c : classifier_hidden) {
    if (c == 0) fail("classifier_hidden entries must be positive");
  }
  const std::size_t pool_factor = std::size_t{1} << backbone_channels.size();
  if (input_height % pool_factor != 0 || input_width % pool_factor != 0) {
    fail("input_size " + std::to_string(input_height) + "x" + std::to_string(input_width) +
         " must be divisible by 2^" + std::to_string(backbone_channels.size()) + " = " +
         std::to_string(pool_factor) + " (one 2x2 max-pool per backbone stage)");
  }
  if (se_reduction == 0 || backbone_channels.back() % se_reduction != 0) {
    fail("se_reduction " + std::to_string(se_reduction) + " must divide the last backbone channel count " +
         std::to_string(backbone_channels.back()));
  }
  if (num_classes < 2) fail("num_classes must be at least 2");
}

nlohmann::json to_json(const ModelConfig& c) {
  return nlohmann::json{{"input_size", {c.input_height, c.input_width}},
                        {"input_channels", c.input_channels},
                        {"backbone_channels", c.backbone_channels},
                        {"se_reduction", c.se_reduction},
                        {"residual_channels", c.residual_channels},
                        {"classifier_hidden", c.classifier_hidden},
                        {"num_classes", c.num_classes},
                        {"seed", c.seed}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw UsageError("model config: expected a JSON object");
  ModelConfig c;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "input_size") {
        const auto dims = value.get<std::vector<std::size_t>>();
        if (dims.size() != 2) throw UsageError("model config: input_size must be [height, width]");
        c.input_height = dims[0];
        c.input_width = dims[1];
      } else if (key == "input_channels") {
        c.input_channels = value.get<std::size_t>();
      } else if (key == "backbone_channels") {
        c.backbone_channels = value.get<std::vector<std::size_t>>();
      } else if (key == "se_reduction") {
        c.se_reduction = value.get<std::size_t>();
      } else if (key == "residual_channels") {
        c.residual_channels = value.get<std::vector<std::size_t>>();
      } else if (key == "classifier_hidden") {
        c.classifier_hidden = value.get<std::vector<std::size_t>>();
      } else if (key == "num_classes") {
        c.num_classes = value.get<std::size_t>();
      } else if (key == "seed") {
        c.seed = value.get<std::uint64_t>();
      } else {
        throw UsageError("model config: unknown key '" + key + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

template <typename T>
BasicParameter<T>& ModuleStore<T>::add_uniform(std::string name, Shape shape, std::size_t fan_in) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  BasicTensor<T> value(std::move(shape));
  for (auto& v : value.data()) v = static_cast<T>(rng_.uniform(-bound, bound));
  return params_.emplace_back(std::move(name), std::move(value));
}

template <typename T>
BasicParameter<T>& ModuleStore<T>::add_constant(std::string name, Shape shape, T value) {
  return params_.emplace_back(std::move(name), BasicTensor<T>(std::move(shape), value));
}

template <typename T>
BatchNormState<T>& ModuleStore<T>::add_batch_norm(std::string name, std::size_t channels) {
  norms_.push_back(NamedBatchNorm<T>{std::move(name), BatchNormState<T>(channels)});
  return norms_.back().state;
}

template <typename T>
ConvBn<T> ConvBn<T>::create(ModuleStore<T>& store, const std::string& prefix, std::size_t in, std::size_t out,
                            std::size_t kernel, std::size_t stride, std::size_t padding) {
  ConvBn layer;
  const std::size_t fan_in = in * kernel * kernel;
  layer.weight = &store.add_uniform(prefix + ".conv.weight", Shape{out, in, kernel, kernel}, fan_in);
  layer.bias = &store.add_uniform(prefix + ".conv.bias", Shape{out}, fan_in);
  layer.gamma = &store.add_constant(prefix + ".bn.weight", Shape{out}, T{1});
  layer.beta = &store.add_constant(prefix + ".bn.bias", Shape{out}, T{0});
  layer.stats = &store.add_batch_norm(prefix + ".bn", out);
  layer.stride = stride;
  layer.padding = padding;
  return layer;
}

template <typename T>
typename Tape<T>::Var ConvBn<T>::forward(Tape<T>& tape, typename Tape<T>::Var x, Mode mode) const {
  auto y = ops::conv2d(tape, x, tape.parameter(*weight), tape.parameter(*bias), stride, padding);
  return ops::batch_norm2d(tape, y, tape.parameter(*gamma), tape.parameter(*beta), *stats, mode);
}

template <typename T>
Dense<T> Dense<T>::create(ModuleStore<T>& store, const std::string& prefix, std::size_t in, std::size_t out) {
  Dense layer;
  layer.weight = &store.add_uniform(prefix + ".weight", Shape{out, in}, in);
  layer.bias = &store.add_uniform(prefix + ".bias", Shape{out}, in);
  return layer;
}

template <typename T>
typename Tape<T>::Var Dense<T>::forward(Tape<T>& tape, typename Tape<T>::Var x) const {
  return ops::linear(tape, x, tape.parameter(*weight), tape.parameter(*bias));
}

template <typename T>
SEBlock<T> SEBlock<T>::create(ModuleStore<T>& store, const std::string& prefix, std::size_t channels,
                              std::size_t reduction) {
  if (reduction == 0 || channels % reduction != 0) {
    throw UsageError("SE block: reduction " + std::to_string(reduction) + " must divide channel count " +
                     std::to_string(channels));
  }
  SEBlock block;
  block.channels = channels;
  block.squeeze = Dense<T>::create(store, prefix + ".fc1", channels, channels / reduction);
  block.excite = Dense<T>::create(store, prefix + ".fc2", channels / reduction, channels);
  return block;
}

template <typename T>
typename SEBlock<T>::Output SEBlock<T>::forward(Tape<T>& tape, typename Tape<T>::Var f0) const {
  const Shape shape = tape.value(f0).shape();
  if (shape.size() != 4 || shape[1] != channels) {
    throw ShapeError("SE block: expected [N," + std::to_string(channels) + ",H,W] input, got " + shape_str(shape));
  }
  const std::size_t n = shape[0];
  auto pooled = ops::global_average_pool(tape, f0);
  auto flat = ops::reshape(tape, pooled, Shape{n, channels});
  auto hidden = ops::relu(tape, squeeze.forward(tape, flat));
  auto gate = ops::sigmoid(tape, excite.forward(tape, hidden));
  auto gate4 = ops::reshape(tape, gate, Shape{n, channels, 1, 1});
  return {ops::channel_scale(tape, f0, gate4), gate4};
}

template <typename T>
ResidualBlock<T> ResidualBlock<T>::create(ModuleStore<T>& store, const std::string& prefix, std::size_t in,
                                          std::size_t out, std::size_t stride) {
  ResidualBlock block;
  block.in_channels = in;
  block.out_channels = out;
  block.stride = stride;
  block.first = ConvBn<T>::create(store, prefix + ".conv1", in, out, 3, stride, 1);
  block.second = ConvBn<T>::create(store, prefix + ".conv2", out, out, 3, 1, 1);
  if (stride != 1 || in != out) block.projection = ConvBn<T>::create(store, prefix + ".shortcut", in, out, 1, stride, 0);
  return block;
}

template <typename T>
typename Tape<T>::Var ResidualBlock<T>::forward(Tape<T>& tape, typename Tape<T>::Var x, Mode mode) const {
  const Shape& shape = tape.value(x).shape();
  if (shape.size() != 4 || shape[1] != in_channels) {
    throw ShapeError("residual block: expected [N," + std::to_string(in_channels) + ",H,W] input, got " +
                     shape_str(shape));
  }
  auto h = ops::relu(tape, first.forward(tape, x, mode));
  h = second.forward(tape, h, mode);
  auto skip = projection ? projection->forward(tape, x, mode) : x;
  return ops::relu(tape, ops::add(tape, h, skip));
}

template <typename T>
BasicResEmoteNet<T>::BasicResEmoteNet(const ModelConfig& config) : config_(config), store_(config.seed) {
  config_.validate();
  std::size_t channels = config_.input_channels;
  for (std::size_t i = 0; i < config_.backbone_channels.size(); ++i) {
    const std::size_t out = config_.backbone_channels[i];
    backbone_.push_back(ConvBn<T>::create(store_, "backbone." + std::to_string(i), channels, out, 3, 1, 1));
    channels = out;
  }
  se_ = SEBlock<T>::create(store_, "se", channels, config_.se_reduction);
  for (std::size_t i = 0; i < config_.residual_channels.size(); ++i) {
    const std::size_t out = config_.residual_channels[i];
    residual_.push_back(ResidualBlock<T>::create(store_, "residual." + std::to_string(i), channels, out, 2));
    channels = out;
  }
  for (std::size_t i = 0; i < config_.classifier_hidden.size(); ++i) {
    const std::size_t out = config_.classifier_hidden[i];
    classifier_.push_back(Dense<T>::create(store_, "classifier." + std::to_string(i), channels, out));
    channels = out;
  }
  classifier_.push_back(Dense<T>::create(store_, "classifier." + std::to_string(config_.classifier_hidden.size()),
                                         channels, config_.num_classes));
}

namespace {

void expect_stage(const Shape& got, const Shape& want, const std::string& stage) {
  if (got != want) {
    throw std::logic_error("shape plan violated after " + stage + ": got " + shape_str(got) + ", expected " +
                           shape_str(want));
  }
}

}  // namespace

template <typename T>
typename BasicResEmoteNet<T>::Activations BasicResEmoteNet<T>::forward_traced(Tape<T>& tape, Var batch) {
  const Shape& in = tape.value(batch).shape();
  const Shape expected{0, config_.input_channels, config_.input_height, config_.input_width};
  if (in.size() != 4 || in[1] != expected[1] || in[2] != expected[2] || in[3] != expected[3]) {
    throw ShapeError("model input must be [N," + std::to_string(expected[1]) + "," + std::to_string(expected[2]) +
                     "," + std::to_string(expected[3]) + "], got " + shape_str(in));
  }
  const std::size_t n = in[0];
  Activations act;
  act.input = batch;

  std::size_t h = config_.input_height, w = config_.input_width;
  Var x = batch;
  for (std::size_t i = 0; i < backbone_.size(); ++i) {
    x = ops::relu(tape, backbone_[i].forward(tape, x, mode_));
    x = ops::max_pool2d(tape, x);
    h /= 2;
    w /= 2;
    expect_stage(tape.value(x).shape(), Shape{n, config_.backbone_channels[i], h, w}, "backbone stage " + std::to_string(i));
  }
  act.backbone = x;

  auto se_out = se_.forward(tape, x);
  act.gate = se_out.gate;
  act.attended = se_out.scaled;
  x = se_out.scaled;

  for (std::size_t i = 0; i < residual_.size(); ++i) {
    x = residual_[i].forward(tape, x, mode_);
    h = (h + 1) / 2;
    w = (w + 1) / 2;
    expect_stage(tape.value(x).shape(), Shape{n, config_.residual_channels[i], h, w},
                 "residual block " + std::to_string(i));
    act.residual.push_back(x);
  }

  x = ops::adaptive_average_pool(tape, x, 1, 1);
  act.pooled = x;
  x = ops::reshape(tape, x, Shape{n, config_.residual_channels.back()});
  for (std::size_t i = 0; i < classifier_.size(); ++i) {
    x = classifier_[i].forward(tape, x);
    if (i + 1 < classifier_.size()) x = ops::relu(tape, x);
  }
  expect_stage(tape.value(x).shape(), Shape{n, config_.num_classes}, "classifier");
  act.logits = x;
  return act;
}

template <typename T>
BasicTensor<T> BasicResEmoteNet<T>::infer(const BasicTensor<T>& batch) {
  Tape<T> tape(false);
  return tape.value(forward(tape, batch));
}

template <typename T>
std::size_t BasicResEmoteNet<T>::parameter_count() const {
  std::size_t total = 0;
  for (const auto& p : store_.parameters()) total += p.value.numel();
  return total;
}

template <typename T>
void BasicResEmoteNet<T>::zero_grad() {
  for (auto& p : store_.parameters()) p.zero_grad();
}

template class ModuleStore<float>;
template class ModuleStore<double>;
template struct ConvBn<float>;
template struct ConvBn<double>;
template struct Dense<float>;
template struct Dense<double>;
template struct SEBlock<float>;
template struct SEBlock<double>;
template struct ResidualBlock<float>;
template struct ResidualBlock<double>;
template class BasicResEmoteNet<float>;
template class BasicResEmoteNet<double>;

}  // namespace remn
