#pragma once

#include <cstddef>
#include <span>

#include "remn/autograd.hpp"
#include "remn/tensor.hpp"

namespace remn {

enum class Mode { Train, Eval };

/// Running statistics for one batch-norm layer. Updated only by train-mode
/// forward passes.
template <typename T>
struct BatchNormState {
  BasicTensor<T> running_mean;
  BasicTensor<T> running_var;
  double eps = 1e-5;
  double momentum = 0.1;

  explicit BatchNormState(std::size_t channels)
      : running_mean(Shape{channels}, T{0}), running_var(Shape{channels}, T{1}) {}
};

template <typename T>
struct CrossEntropyResult {
  typename Tape<T>::Var loss;  // shape [1]
  BasicTensor<T> probabilities;
};

namespace ops {

template <typename T>
using Var = typename Tape<T>::Var;

/// Cross-correlation (no kernel flip). input [N,Cin,H,W], weight
/// [Cout,Cin,kH,kW], bias [Cout].
template <typename T>
Var<T> conv2d(Tape<T>& tape, Var<T> input, Var<T> weight, Var<T> bias, std::size_t stride,
              std::size_t padding);

/// Per-channel normalization over N,H,W followed by gamma/beta.
template <typename T>
Var<T> batch_norm2d(Tape<T>& tape, Var<T> input, Var<T> gamma, Var<T> beta, BatchNormState<T>& state,
                    Mode mode);

template <typename T>
Var<T> relu(Tape<T>& tape, Var<T> input);

template <typename T>
Var<T> sigmoid(Tape<T>& tape, Var<T> input);

/// 2x2 window, stride 2. Ties route the gradient to the first element in
/// row-major window order.
template <typename T>
Var<T> max_pool2d(Tape<T>& tape, Var<T> input);

/// [N,C,H,W] -> [N,C,1,1] spatial mean.
template <typename T>
Var<T> global_average_pool(Tape<T>& tape, Var<T> input);

/// [N,C,H,W] -> [N,C,out_h,out_w] using floor/ceil bin edges.
template <typename T>
Var<T> adaptive_average_pool(Tape<T>& tape, Var<T> input, std::size_t out_h, std::size_t out_w);

/// features [N,C,H,W] scaled by weights [N,C,1,1].
template <typename T>
Var<T> channel_scale(Tape<T>& tape, Var<T> features, Var<T> weights);

template <typename T>
Var<T> add(Tape<T>& tape, Var<T> a, Var<T> b);

/// input [N,Din], weight [Dout,Din], bias [Dout] -> [N,Dout].
template <typename T>
Var<T> linear(Tape<T>& tape, Var<T> input, Var<T> weight, Var<T> bias);

template <typename T>
Var<T> reshape(Tape<T>& tape, Var<T> input, Shape shape);

/// Mean negative log-likelihood of `labels` under row-wise softmax(logits).
template <typename T>
CrossEntropyResult<T> softmax_cross_entropy(Tape<T>& tape, Var<T> logits, std::span<const int> labels);

}  // namespace ops

/// Row-wise argmax; ties resolve to the lowest index.
template <typename T>
std::vector<int> argmax_rows(const BasicTensor<T>& matrix);

}  // namespace remn
