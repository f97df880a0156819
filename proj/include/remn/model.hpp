#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "remn/autograd.hpp"
#include "remn/ops.hpp"
#include "remn/rng.hpp"
#include "remn/tensor.hpp"

namespace remn {

/// Layer hyperparameters. Defaults give the full-size network for 64x64
/// RGB input: three conv stages 3->64->128->256, SE with r=16, residual
/// stages 512/1024/2048, classifier 2048->1024->512->7.
struct ModelConfig {
  std::size_t input_height = 64;
  std::size_t input_width = 64;
  std::size_t input_channels = 3;
  std::vector<std::size_t> backbone_channels{64, 128, 256};
  std::size_t se_reduction = 16;
  std::vector<std::size_t> residual_channels{512, 1024, 2048};
  std::vector<std::size_t> classifier_hidden{1024, 512};
  std::size_t num_classes = 7;
  std::uint64_t seed = 0;

  /// Throws UsageError naming the violated constraint.
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

nlohmann::json to_json(const ModelConfig& config);
/// Missing keys keep their defaults; unknown keys are rejected.
ModelConfig model_config_from_json(const nlohmann::json& j);

template <typename T>
struct NamedBatchNorm {
  std::string name;
  BatchNormState<T> state;
};

/// Owns parameters and batch-norm statistics at stable addresses; layers
/// keep plain pointers into it. Initialization draws come from one seeded
/// stream in creation order.
template <typename T>
class ModuleStore {
 public:
  explicit ModuleStore(std::uint64_t seed) : rng_(mix_seed(seed)) {}

  /// Fan-in scaled uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
  BasicParameter<T>& add_uniform(std::string name, Shape shape, std::size_t fan_in);
  BasicParameter<T>& add_constant(std::string name, Shape shape, T value);
  BatchNormState<T>& add_batch_norm(std::string name, std::size_t channels);

  std::deque<BasicParameter<T>>& parameters() noexcept { return params_; }
  const std::deque<BasicParameter<T>>& parameters() const noexcept { return params_; }
  std::deque<NamedBatchNorm<T>>& batch_norms() noexcept { return norms_; }
  const std::deque<NamedBatchNorm<T>>& batch_norms() const noexcept { return norms_; }

 private:
  Rng rng_;
  std::deque<BasicParameter<T>> params_;
  std::deque<NamedBatchNorm<T>> norms_;
};

/// conv + batch norm, no activation.
template <typename T>
struct ConvBn {
  BasicParameter<T>* weight = nullptr;
  BasicParameter<T>* bias = nullptr;
  BasicParameter<T>* gamma = nullptr;
  BasicParameter<T>* beta = nullptr;
  BatchNormState<T>* stats = nullptr;
  std::size_t stride = 1;
  std::size_t padding = 0;

  static ConvBn create(ModuleStore<T>& store, const std::string& prefix, std::size_t in, std::size_t out,
                       std::size_t kernel, std::size_t stride, std::size_t padding);
  typename Tape<T>::Var forward(Tape<T>& tape, typename Tape<T>::Var x, Mode mode) const;
};

template <typename T>
struct Dense {
  BasicParameter<T>* weight = nullptr;
  BasicParameter<T>* bias = nullptr;

  static Dense create(ModuleStore<T>& store, const std::string& prefix, std::size_t in, std::size_t out);
  typename Tape<T>::Var forward(Tape<T>& tape, typename Tape<T>::Var x) const;
};

/// Squeeze-and-excitation: GAP -> linear C->C/r -> ReLU -> linear C/r->C
/// -> sigmoid gives per-channel weights that rescale the input map.
template <typename T>
struct SEBlock {
  std::size_t channels = 0;
  Dense<T> squeeze;
  Dense<T> excite;

  struct Output {
    typename Tape<T>::Var scaled;  // f1, same layout as the input
    typename Tape<T>::Var gate;    // [N,C,1,1], each entry in (0,1)
  };

  static SEBlock create(ModuleStore<T>& store, const std::string& prefix, std::size_t channels,
                        std::size_t reduction);
  Output forward(Tape<T>& tape, typename Tape<T>::Var f0) const;
};

/// Two 3x3 conv+BN layers (ReLU after the first) added to a skip path,
/// followed by ReLU. The skip is the identity when stride is 1 and the
/// channel count is unchanged, otherwise a 1x1 conv+BN projection.
template <typename T>
struct ResidualBlock {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t stride = 1;
  ConvBn<T> first;
  ConvBn<T> second;
  std::optional<ConvBn<T>> projection;

  static ResidualBlock create(ModuleStore<T>& store, const std::string& prefix, std::size_t in, std::size_t out,
                              std::size_t stride);
  typename Tape<T>::Var forward(Tape<T>& tape, typename Tape<T>::Var x, Mode mode) const;
};

template <typename T>
class BasicResEmoteNet {
 public:
  using Var = typename Tape<T>::Var;

  /// Intermediate handles from one forward pass.
  struct Activations {
    Var input;
    Var backbone;  // f0
    Var gate;      // SE weights
    Var attended;  // f1
    std::vector<Var> residual;
    Var pooled;
    Var logits;
  };

  explicit BasicResEmoteNet(const ModelConfig& config);

  BasicResEmoteNet(BasicResEmoteNet&&) noexcept = default;
  BasicResEmoteNet& operator=(BasicResEmoteNet&&) noexcept = default;
  BasicResEmoteNet(const BasicResEmoteNet&) = delete;
  BasicResEmoteNet& operator=(const BasicResEmoteNet&) = delete;

  const ModelConfig& config() const noexcept { return config_; }
  Mode mode() const noexcept { return mode_; }
  void set_mode(Mode mode) noexcept { mode_ = mode; }

  Activations forward_traced(Tape<T>& tape, Var batch);
  Var forward(Tape<T>& tape, Var batch) { return forward_traced(tape, batch).logits; }
  Var forward(Tape<T>& tape, const BasicTensor<T>& batch) { return forward(tape, tape.constant(batch)); }

  /// Logits [N, num_classes] without recording a backward tape.
  BasicTensor<T> infer(const BasicTensor<T>& batch);

  std::deque<BasicParameter<T>>& parameters() noexcept { return store_.parameters(); }
  const std::deque<BasicParameter<T>>& parameters() const noexcept { return store_.parameters(); }
  std::deque<NamedBatchNorm<T>>& batch_norms() noexcept { return store_.batch_norms(); }
  const std::deque<NamedBatchNorm<T>>& batch_norms() const noexcept { return store_.batch_norms(); }
  std::size_t parameter_count() const;
  void zero_grad();

  SEBlock<T>& se() noexcept { return se_; }
  std::vector<ResidualBlock<T>>& residual_blocks() noexcept { return residual_; }

 private:
  ModelConfig config_;
  Mode mode_ = Mode::Train;
  ModuleStore<T> store_;
  std::vector<ConvBn<T>> backbone_;
  SEBlock<T> se_;
  std::vector<ResidualBlock<T>> residual_;
  std::vector<Dense<T>> classifier_;
};

using ResEmoteNet = BasicResEmoteNet<float>;

}  // namespace remn
