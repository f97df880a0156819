#include "remn/ops.hpp"

#include <cmath>
#include <memory>
#include <string>
#include <vector>

namespace remn {

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::Conv2d: return "conv2d";
    case OpKind::BatchNorm2d: return "batch_norm2d";
    case OpKind::Relu: return "relu";
    case OpKind::Sigmoid: return "sigmoid";
    case OpKind::MaxPool2d: return "max_pool2d";
    case OpKind::GlobalAvgPool: return "global_average_pool";
    case OpKind::AdaptiveAvgPool: return "adaptive_average_pool";
    case OpKind::ChannelScale: return "channel_scale";
    case OpKind::Add: return "add";
    case OpKind::Linear: return "linear";
    case OpKind::Reshape: return "reshape";
    case OpKind::SoftmaxCrossEntropy: return "softmax_cross_entropy";
  }
  return "unknown";
}

namespace ops {
namespace {

void require_rank(const Shape& s, std::size_t rank, const char* op, const char* what) {
  if (s.size() != rank) {
    throw ShapeError(std::string(op) + ": " + what + " must have rank " + std::to_string(rank) + ", got " +
                     shape_str(s));
  }
}

[[noreturn]] void dim_mismatch(const char* op, const std::string& dim, std::size_t got, std::size_t want) {
  throw ShapeError(std::string(op) + ": " + dim + " is " + std::to_string(got) + ", expected " +
                   std::to_string(want));
}

template <typename T>
void accumulate(std::vector<T>& dst, const std::vector<double>& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += static_cast<T>(src[i]);
}

// Output index range [lo, hi) for which o*stride + k - pad lands inside [0, in).
struct IndexRange {
  std::size_t lo;
  std::size_t hi;
};

IndexRange valid_range(std::size_t in, std::size_t out, std::size_t k, std::size_t stride, std::size_t pad) {
  std::size_t lo = 0;
  if (pad > k) lo = (pad - k + stride - 1) / stride;
  if (in + pad < k + 1) return {0, 0};
  std::size_t hi = (in - 1 + pad - k) / stride + 1;
  if (hi > out) hi = out;
  if (lo > hi) lo = hi;
  return {lo, hi};
}

// Unrolled receptive fields of a batch: row (ci, r, c) holds, for every
// sample and output position, the input value seen through that tap (zero
// in the padding). Columns are ordered sample-major, so one row spans
// n_batch * ho * wo entries.
struct Im2Col {
  std::size_t n_batch, cin, h, w, kh, kw, stride, padding, ho, wo;
  std::vector<IndexRange> rows, cols;

  Im2Col(std::size_t n_, std::size_t cin_, std::size_t h_, std::size_t w_, std::size_t kh_, std::size_t kw_,
         std::size_t stride_, std::size_t padding_)
      : n_batch(n_), cin(cin_), h(h_), w(w_), kh(kh_), kw(kw_), stride(stride_), padding(padding_),
        ho((h_ + 2 * padding_ - kh_) / stride_ + 1), wo((w_ + 2 * padding_ - kw_) / stride_ + 1), rows(kh_), cols(kw_) {
    for (std::size_t r = 0; r < kh; ++r) rows[r] = valid_range(h, ho, r, stride, padding);
    for (std::size_t c = 0; c < kw; ++c) cols[c] = valid_range(w, wo, c, stride, padding);
  }

  std::size_t taps() const { return cin * kh * kw; }
  std::size_t positions() const { return ho * wo; }
  std::size_t row_length() const { return n_batch * ho * wo; }

  template <typename T>
  void unroll(const T* x, std::vector<double>& col) const {
    col.assign(taps() * row_length(), 0.0);
    for (std::size_t ci = 0; ci < cin; ++ci) {
      for (std::size_t r = 0; r < kh; ++r) {
        for (std::size_t c = 0; c < kw; ++c) {
          double* row = col.data() + ((ci * kh + r) * kw + c) * row_length();
          for (std::size_t n = 0; n < n_batch; ++n) {
            const T* plane = x + (n * cin + ci) * h * w;
            double* sample = row + n * positions();
            for (std::size_t oh = rows[r].lo; oh < rows[r].hi; ++oh) {
              const T* src = plane + (oh * stride + r - padding) * w;
              double* dst = sample + oh * wo;
              for (std::size_t ow = cols[c].lo; ow < cols[c].hi; ++ow) dst[ow] = src[ow * stride + c - padding];
            }
          }
        }
      }
    }
  }

  // Adjoint of unroll: scatters column gradients back onto the input.
  template <typename T>
  void fold(const std::vector<double>& col, T* x_grad) const {
    std::vector<double> acc(n_batch * cin * h * w, 0.0);
    for (std::size_t ci = 0; ci < cin; ++ci) {
      for (std::size_t r = 0; r < kh; ++r) {
        for (std::size_t c = 0; c < kw; ++c) {
          const double* row = col.data() + ((ci * kh + r) * kw + c) * row_length();
          for (std::size_t n = 0; n < n_batch; ++n) {
            double* plane = acc.data() + (n * cin + ci) * h * w;
            const double* sample = row + n * positions();
            for (std::size_t oh = rows[r].lo; oh < rows[r].hi; ++oh) {
              double* dst = plane + (oh * stride + r - padding) * w;
              const double* src = sample + oh * wo;
              for (std::size_t ow = cols[c].lo; ow < cols[c].hi; ++ow) dst[ow * stride + c - padding] += src[ow];
            }
          }
        }
      }
    }
    for (std::size_t i = 0; i < acc.size(); ++i) x_grad[i] += static_cast<T>(acc[i]);
  }
};

}  // namespace

template <typename T>
Var<T> conv2d(Tape<T>& tape, Var<T> input, Var<T> weight, Var<T> bias, std::size_t stride, std::size_t padding) {
  const auto& x = tape.value(input);
  const auto& w = tape.value(weight);
  const auto& b = tape.value(bias);
  require_rank(x.shape(), 4, "conv2d", "input");
  require_rank(w.shape(), 4, "conv2d", "weight");
  require_rank(b.shape(), 1, "conv2d", "bias");
  if (stride == 0) throw ShapeError("conv2d: stride must be positive");
  const std::size_t n_batch = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  if (w.dim(1) != cin) dim_mismatch("conv2d", "weight in-channels (dim 1)", w.dim(1), cin);
  if (b.dim(0) != cout) dim_mismatch("conv2d", "bias length", b.dim(0), cout);
  if (kh > h + 2 * padding) dim_mismatch("conv2d", "kernel height", kh, h + 2 * padding);
  if (kw > wd + 2 * padding) dim_mismatch("conv2d", "kernel width", kw, wd + 2 * padding);

  const Im2Col geom(n_batch, cin, h, wd, kh, kw, stride, padding);
  const std::size_t taps = geom.taps(), pos = geom.positions(), len = geom.row_length();
  BasicTensor<T> out(Shape{n_batch, cout, geom.ho, geom.wo});
  std::vector<double> col, acc(len);
  geom.unroll(x.data().data(), col);
  const T* wp = w.data().data();
  for (std::size_t co = 0; co < cout; ++co) {
    std::fill(acc.begin(), acc.end(), static_cast<double>(b[co]));
    const T* wrow = wp + co * taps;
    std::size_t k = 0;
    for (; k + 4 <= taps; k += 4) {
      const double w0 = wrow[k], w1 = wrow[k + 1], w2 = wrow[k + 2], w3 = wrow[k + 3];
      const double* s0 = col.data() + k * len;
      const double* s1 = s0 + len;
      const double* s2 = s1 + len;
      const double* s3 = s2 + len;
      for (std::size_t i = 0; i < len; ++i) acc[i] += w0 * s0[i] + w1 * s1[i] + w2 * s2[i] + w3 * s3[i];
    }
    for (; k < taps; ++k) {
      const double wv = wrow[k];
      const double* src = col.data() + k * len;
      for (std::size_t i = 0; i < len; ++i) acc[i] += wv * src[i];
    }
    for (std::size_t n = 0; n < n_batch; ++n) {
      T* o = out.data().data() + (n * cout + co) * pos;
      for (std::size_t i = 0; i < pos; ++i) o[i] = static_cast<T>(acc[n * pos + i]);
    }
  }

  const BasicTensor<T>* xin = &x;
  const BasicTensor<T>* win = &w;
  return tape.record(
      OpKind::Conv2d, {input, weight, bias}, std::move(out),
      [=](const BasicTensor<T>& g, std::span<std::vector<T>* const> grads) {
        // g regrouped channel-major to match the column layout.
        std::vector<double> gt(cout * len);
        for (std::size_t n = 0; n < n_batch; ++n) {
          for (std::size_t co = 0; co < cout; ++co) {
            const T* src = g.data().data() + (n * cout + co) * pos;
            double* dst = gt.data() + co * len + n * pos;
            for (std::size_t i = 0; i < pos; ++i) dst[i] = src[i];
          }
        }
        if (grads[1]) {
          std::vector<double> col2;
          geom.unroll(xin->data().data(), col2);
          std::vector<double> gw(cout * taps, 0.0);
          for (std::size_t co = 0; co < cout; ++co) {
            const double* gg = gt.data() + co * len;
            for (std::size_t k = 0; k < taps; ++k) {
              const double* src = col2.data() + k * len;
              double sum = 0.0;
              for (std::size_t i = 0; i < len; ++i) sum += gg[i] * src[i];
              gw[co * taps + k] = sum;
            }
          }
          accumulate(*grads[1], gw);
        }
        if (grads[0]) {
          const T* wp2 = win->data().data();
          std::vector<double> gcol(taps * len, 0.0);
          for (std::size_t k = 0; k < taps; ++k) {
            double* dst = gcol.data() + k * len;
            std::size_t co = 0;
            for (; co + 4 <= cout; co += 4) {
              const double w0 = wp2[co * taps + k], w1 = wp2[(co + 1) * taps + k];
              const double w2 = wp2[(co + 2) * taps + k], w3 = wp2[(co + 3) * taps + k];
              const double* g0 = gt.data() + co * len;
              const double* g1 = g0 + len;
              const double* g2 = g1 + len;
              const double* g3 = g2 + len;
              for (std::size_t i = 0; i < len; ++i) dst[i] += w0 * g0[i] + w1 * g1[i] + w2 * g2[i] + w3 * g3[i];
            }
            for (; co < cout; ++co) {
              const double wv = wp2[co * taps + k];
              const double* gg = gt.data() + co * len;
              for (std::size_t i = 0; i < len; ++i) dst[i] += wv * gg[i];
            }
          }
          geom.fold(gcol, grads[0]->data());
        }
        if (grads[2]) {
          std::vector<double> gb(cout, 0.0);
          for (std::size_t co = 0; co < cout; ++co) {
            const double* gg = gt.data() + co * len;
            for (std::size_t i = 0; i < len; ++i) gb[co] += gg[i];
          }
          accumulate(*grads[2], gb);
        }
      });
}

template <typename T>
Var<T> batch_norm2d(Tape<T>& tape, Var<T> input, Var<T> gamma, Var<T> beta, BatchNormState<T>& state,
                    Mode mode) {
  const auto& x = tape.value(input);
  const auto& g = tape.value(gamma);
  const auto& b = tape.value(beta);
  require_rank(x.shape(), 4, "batch_norm2d", "input");
  const std::size_t n_batch = x.dim(0), channels = x.dim(1), spatial = x.dim(2) * x.dim(3);
  if (g.shape() != Shape{channels}) dim_mismatch("batch_norm2d", "gamma length", g.numel(), channels);
  if (b.shape() != Shape{channels}) dim_mismatch("batch_norm2d", "beta length", b.numel(), channels);
  if (state.running_mean.numel() != channels) {
    dim_mismatch("batch_norm2d", "running stats length", state.running_mean.numel(), channels);
  }
  if (!(state.eps > 0.0)) throw std::invalid_argument("batch_norm2d: eps must be positive");
  if (!(state.momentum > 0.0 && state.momentum < 1.0)) {
    throw std::invalid_argument("batch_norm2d: momentum must lie in (0,1)");
  }
  if (!x.all_finite()) throw NumericError("batch_norm2d: input contains non-finite values");

  const std::size_t count = n_batch * spatial;
  auto xhat = std::make_shared<std::vector<T>>(x.numel());
  std::vector<double> inv_std(channels);
  BasicTensor<T> out(x.shape());

  for (std::size_t c = 0; c < channels; ++c) {
    double mean = 0.0, var = 0.0;
    if (mode == Mode::Train) {
      for (std::size_t n = 0; n < n_batch; ++n) {
        const T* p = x.data().data() + (n * channels + c) * spatial;
        for (std::size_t i = 0; i < spatial; ++i) mean += p[i];
      }
      mean /= static_cast<double>(count);
      for (std::size_t n = 0; n < n_batch; ++n) {
        const T* p = x.data().data() + (n * channels + c) * spatial;
        for (std::size_t i = 0; i < spatial; ++i) {
          const double d = p[i] - mean;
          var += d * d;
        }
      }
      var /= static_cast<double>(count);
      const double unbiased = count > 1 ? var * static_cast<double>(count) / static_cast<double>(count - 1) : var;
      const double m = state.momentum;
      state.running_mean[c] = static_cast<T>((1.0 - m) * state.running_mean[c] + m * mean);
      state.running_var[c] = static_cast<T>((1.0 - m) * state.running_var[c] + m * unbiased);
    } else {
      mean = state.running_mean[c];
      var = state.running_var[c];
    }
    inv_std[c] = 1.0 / std::sqrt(var + state.eps);
    const double gc = g[c], bc = b[c];
    for (std::size_t n = 0; n < n_batch; ++n) {
      const std::size_t base = (n * channels + c) * spatial;
      const T* p = x.data().data() + base;
      for (std::size_t i = 0; i < spatial; ++i) {
        const double xh = (p[i] - mean) * inv_std[c];
        (*xhat)[base + i] = static_cast<T>(xh);
        out[base + i] = static_cast<T>(gc * xh + bc);
      }
    }
  }

  const BasicTensor<T>* gin = &g;
  return tape.record(
      OpKind::BatchNorm2d, {input, gamma, beta}, std::move(out),
      [=](const BasicTensor<T>& gout, std::span<std::vector<T>* const> grads) {
        for (std::size_t c = 0; c < channels; ++c) {
          double sum_dy = 0.0, sum_dy_xhat = 0.0;
          for (std::size_t n = 0; n < n_batch; ++n) {
            const std::size_t base = (n * channels + c) * spatial;
            for (std::size_t i = 0; i < spatial; ++i) {
              sum_dy += gout[base + i];
              sum_dy_xhat += static_cast<double>(gout[base + i]) * (*xhat)[base + i];
            }
          }
          if (grads[1]) (*grads[1])[c] += static_cast<T>(sum_dy_xhat);
          if (grads[2]) (*grads[2])[c] += static_cast<T>(sum_dy);
          if (!grads[0]) continue;
          const double gc = (*gin)[c];
          const double m = static_cast<double>(count);
          for (std::size_t n = 0; n < n_batch; ++n) {
            const std::size_t base = (n * channels + c) * spatial;
            for (std::size_t i = 0; i < spatial; ++i) {
              double dx;
              if (mode == Mode::Train) {
                dx = gc * inv_std[c] / m * (m * gout[base + i] - sum_dy - (*xhat)[base + i] * sum_dy_xhat);
              } else {
                dx = gc * inv_std[c] * gout[base + i];
              }
              (*grads[0])[base + i] += static_cast<T>(dx);
            }
          }
        }
      });
}

template <typename T>
Var<T> relu(Tape<T>& tape, Var<T> input) {
  const auto& x = tape.value(input);
  BasicTensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] = x[i] > T{0} ? x[i] : T{0};
  if (tape.tracking_branches()) {
    std::uint64_t h = 0;
    for (std::size_t i = 0; i < x.numel(); ++i) h = h * 31 + (x[i] > T{0} ? 1 : 0) + i;
    tape.mix_branch(h);
  }
  const BasicTensor<T>* xin = &x;
  return tape.record(OpKind::Relu, {input}, std::move(out),
                     [xin](const BasicTensor<T>& g, std::span<std::vector<T>* const> grads) {
                       auto& dx = *grads[0];
                       for (std::size_t i = 0; i < dx.size(); ++i) {
                         if ((*xin)[i] > T{0}) dx[i] += g[i];
                       }
                     });
}

template <typename T>
Var<T> sigmoid(Tape<T>& tape, Var<T> input) {
  const auto& x = tape.value(input);
  auto y = std::make_shared<std::vector<T>>(x.numel());
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double v = x[i];
    if (v >= 0.0) {
      (*y)[i] = static_cast<T>(1.0 / (1.0 + std::exp(-v)));
    } else {
      const double e = std::exp(v);
      (*y)[i] = static_cast<T>(e / (1.0 + e));
    }
  }
  BasicTensor<T> out(x.shape(), *y);
  return tape.record(OpKind::Sigmoid, {input}, std::move(out),
                     [y](const BasicTensor<T>& g, std::span<std::vector<T>* const> grads) {
                       auto& dx = *grads[0];
                       for (std::size_t i = 0; i < dx.size(); ++i) {
                         const double s = (*y)[i];
                         dx[i] += static_cast<T>(g[i] * s * (1.0 - s));
                       }
                     });
}

template <typename T>
Var<T> max_pool2d(Tape<T>& tape, Var<T> input) {
  const auto& x = tape.value(input);
  require_rank(x.shape(), 4, "max_pool2d", "input");
  const std::size_t n_batch = x.dim(0), channels = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h % 2 != 0) throw ShapeError("max_pool2d: height " + std::to_string(h) + " is odd");
  if (w % 2 != 0) throw ShapeError("max_pool2d: width " + std::to_string(w) + " is odd");
  const std::size_t ho = h / 2, wo = w / 2;
  BasicTensor<T> out(Shape{n_batch, channels, ho, wo});
  auto argmax = std::make_shared<std::vector<std::size_t>>(out.numel());
  std::size_t k = 0;
  for (std::size_t plane = 0; plane < n_batch * channels; ++plane) {
    const std::size_t base = plane * h * w;
    for (std::size_t oh = 0; oh < ho; ++oh) {
      for (std::size_t ow = 0; ow < wo; ++ow, ++k) {
        std::size_t best = base + (2 * oh) * w + 2 * ow;
        for (std::size_t dr = 0; dr < 2; ++dr) {
          for (std::size_t dc = 0; dc < 2; ++dc) {
            const std::size_t idx = base + (2 * oh + dr) * w + 2 * ow + dc;
            if (x[idx] > x[best]) best = idx;
          }
        }
        (*argmax)[k] = best;
        out[k] = x[best];
      }
    }
  }
  if (tape.tracking_branches()) {
    std::uint64_t h = 0;
    for (std::size_t idx : *argmax) h = h * 1099511628211ULL + idx;
    tape.mix_branch(h);
  }
  return tape.record(OpKind::MaxPool2d, {input}, std::move(out),
                     [argmax](const BasicTensor<T>& g, std::span<std::vector<T>* const> grads) {
                       auto& dx = *grads[0];
                       for (std::size_t i = 0; i < argmax->size(); ++i) dx[(*argmax)[i]] += g[i];
                     });
}

template <typename T>
Var<T> adaptive_average_pool(Tape<T>& tape, Var<T> input, std::size_t out_h, std::size_t out_w) {
  const auto& x = tape.value(input);
  require_rank(x.shape(), 4, "adaptive_average_pool", "input");
  const std::size_t n_batch = x.dim(0), channels = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (out_h == 0 || out_w == 0) throw ShapeError("adaptive_average_pool: output size must be positive");
  if (out_h > h || out_w > w) {
    throw ShapeError("adaptive_average_pool: requested " + std::to_string(out_h) + "x" + std::to_string(out_w) +
                     " exceeds input " + std::to_string(h) + "x" + std::to_string(w));
  }
  auto bin = [](std::size_t i, std::size_t in, std::size_t out) {
    const std::size_t start = (i * in) / out;
    const std::size_t end = ((i + 1) * in + out - 1) / out;
    return std::pair{start, end};
  };
  BasicTensor<T> out(Shape{n_batch, channels, out_h, out_w});
  for (std::size_t plane = 0; plane < n_batch * channels; ++plane) {
    const T* p = x.data().data() + plane * h * w;
    for (std::size_t oh = 0; oh < out_h; ++oh) {
      const auto [r0, r1] = bin(oh, h, out_h);
      for (std::size_t ow = 0; ow < out_w; ++ow) {
        const auto [c0, c1] = bin(ow, w, out_w);
        double s = 0.0;
        for (std::size_t r = r0; r < r1; ++r) {
          for (std::size_t c = c0; c < c1; ++c) s += p[r * w + c];
        }
        out[(plane * out_h + oh) * out_w + ow] = static_cast<T>(s / static_cast<double>((r1 - r0) * (c1 - c0)));
      }
    }
  }
  const OpKind kind = (out_h == 1 && out_w == 1) ? OpKind::GlobalAvgPool : OpKind::AdaptiveAvgPool;
  return tape.record(kind, {input}, std::move(out),
                     [=](const BasicTensor<T>& g, std::span<std::vector<T>* const> grads) {
                       auto& dx = *grads[0];
                       for (std::size_t plane = 0; plane < n_batch * channels; ++plane) {
                         for (std::size_t oh = 0; oh < out_h; ++oh) {
                           const auto [r0, r1] = bin(oh, h, out_h);
                           for (std::size_t ow = 0; ow < out_w; ++ow) {
                             const auto [c0, c1] = bin(ow, w, out_w);
                             const double share = g[(plane * out_h + oh) * out_w + ow] /
                                                  static_cast<double>((r1 - r0) * (c1 - c0));
                             for (std::size_t r = r0; r < r1; ++r) {
                               for (std::size_t c = c0; c < c1; ++c) {
                                 dx[plane * h * w + r * w + c] += static_cast<T>(share);
                               }
                             }
                           }
                         }
                       }
                     });
}

template <typename T>
Var<T> global_average_pool(Tape<T>& tape, Var<T> input) {
  return adaptive_average_pool(tape, input, 1, 1);
}

template <typename T>
Var<T> channel_scale(Tape<T>& tape, Var<T> features, Var<T> weights) {
  const auto& f = tape.value(features);
  const auto& w = tape.value(weights);
  require_rank(f.shape(), 4, "channel_scale", "features");
  require_rank(w.shape(), 4, "channel_scale", "weights");
  const std::size_t n_batch = f.dim(0), channels = f.dim(1), spatial = f.dim(2) * f.dim(3);
  if (w.dim(0) != n_batch) dim_mismatch("channel_scale", "weights batch (dim 0)", w.dim(0), n_batch);
  if (w.dim(1) != channels) dim_mismatch("channel_scale", "weights channels (dim 1)", w.dim(1), channels);
  if (w.dim(2) != 1 || w.dim(3) != 1) throw ShapeError("channel_scale: weights must be [N,C,1,1], got " + shape_str(w.shape()));
  BasicTensor<T> out(f.shape());
  for (std::size_t plane = 0; plane < n_batch * channels; ++plane) {
    for (std::size_t i = 0; i < spatial; ++i) out[plane * spatial + i] = w[plane] * f[plane * spatial + i];
  }
  const BasicTensor<T>* fin = &f;
  const BasicTensor<T>* win = &w;
  return tape.record(OpKind::ChannelScale, {features, weights}, std::move(out),
                     [=](const BasicTensor<T>& g, std::span<std::vector<T>* const> grads) {
                       for (std::size_t plane = 0; plane < n_batch * channels; ++plane) {
                         double dw = 0.0;
                         for (std::size_t i = 0; i < spatial; ++i) {
                           const std::size_t k = plane * spatial + i;
                           if (grads[0]) (*grads[0])[k] += (*win)[plane] * g[k];
                           dw += static_cast<double>(g[k]) * (*fin)[k];
                         }
#ifdef REMN_MUTATE_BACKWARD
                         dw *= 1.01;
#endif
                         if (grads[1]) (*grads[1])[plane] += static_cast<T>(dw);
                       }
                     });
}

template <typename T>
Var<T> add(Tape<T>& tape, Var<T> a, Var<T> b) {
  const auto& x = tape.value(a);
  const auto& y = tape.value(b);
  if (x.shape() != y.shape()) {
    throw ShapeError("add: operand shapes differ: " + shape_str(x.shape()) + " vs " + shape_str(y.shape()));
  }
  BasicTensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] = x[i] + y[i];
  return tape.record(OpKind::Add, {a, b}, std::move(out),
                     [](const BasicTensor<T>& g, std::span<std::vector<T>* const> grads) {
                       for (auto* dst : grads) {
                         if (!dst) continue;
                         for (std::size_t i = 0; i < dst->size(); ++i) (*dst)[i] += g[i];
                       }
                     });
}

template <typename T>
Var<T> linear(Tape<T>& tape, Var<T> input, Var<T> weight, Var<T> bias) {
  const auto& x = tape.value(input);
  const auto& w = tape.value(weight);
  const auto& b = tape.value(bias);
  require_rank(x.shape(), 2, "linear", "input");
  require_rank(w.shape(), 2, "linear", "weight");
  require_rank(b.shape(), 1, "linear", "bias");
  const std::size_t n_batch = x.dim(0), din = x.dim(1), dout = w.dim(0);
  if (w.dim(1) != din) dim_mismatch("linear", "weight in-features (dim 1)", w.dim(1), din);
  if (b.dim(0) != dout) dim_mismatch("linear", "bias length", b.dim(0), dout);
  BasicTensor<T> out(Shape{n_batch, dout});
  for (std::size_t n = 0; n < n_batch; ++n) {
    const T* row = x.data().data() + n * din;
    for (std::size_t o = 0; o < dout; ++o) {
      const T* wr = w.data().data() + o * din;
      double s = b[o];
      for (std::size_t i = 0; i < din; ++i) s += static_cast<double>(wr[i]) * row[i];
      out[n * dout + o] = static_cast<T>(s);
    }
  }
  const BasicTensor<T>* xin = &x;
  const BasicTensor<T>* win = &w;
  return tape.record(
      OpKind::Linear, {input, weight, bias}, std::move(out),
      [=](const BasicTensor<T>& g, std::span<std::vector<T>* const> grads) {
        if (grads[0]) {
          for (std::size_t n = 0; n < n_batch; ++n) {
            for (std::size_t i = 0; i < din; ++i) {
              double s = 0.0;
              for (std::size_t o = 0; o < dout; ++o) s += static_cast<double>(g[n * dout + o]) * (*win)[o * din + i];
              (*grads[0])[n * din + i] += static_cast<T>(s);
            }
          }
        }
        if (grads[1]) {
          for (std::size_t o = 0; o < dout; ++o) {
            for (std::size_t i = 0; i < din; ++i) {
              double s = 0.0;
              for (std::size_t n = 0; n < n_batch; ++n) s += static_cast<double>(g[n * dout + o]) * (*xin)[n * din + i];
              (*grads[1])[o * din + i] += static_cast<T>(s);
            }
          }
        }
        if (grads[2]) {
          for (std::size_t o = 0; o < dout; ++o) {
            double s = 0.0;
            for (std::size_t n = 0; n < n_batch; ++n) s += g[n * dout + o];
            (*grads[2])[o] += static_cast<T>(s);
          }
        }
      });
}

template <typename T>
Var<T> reshape(Tape<T>& tape, Var<T> input, Shape shape) {
  BasicTensor<T> out = tape.value(input).reshaped(std::move(shape));
  return tape.record(OpKind::Reshape, {input}, std::move(out),
                     [](const BasicTensor<T>& g, std::span<std::vector<T>* const> grads) {
                       auto& dx = *grads[0];
                       for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g[i];
                     });
}

template <typename T>
CrossEntropyResult<T> softmax_cross_entropy(Tape<T>& tape, Var<T> logits, std::span<const int> labels) {
  const auto& z = tape.value(logits);
  require_rank(z.shape(), 2, "softmax_cross_entropy", "logits");
  const std::size_t n_batch = z.dim(0), k = z.dim(1);
  if (labels.size() != n_batch) dim_mismatch("softmax_cross_entropy", "label count", labels.size(), n_batch);
  for (std::size_t n = 0; n < n_batch; ++n) {
    if (labels[n] < 0 || static_cast<std::size_t>(labels[n]) >= k) {
      throw std::out_of_range("softmax_cross_entropy: label " + std::to_string(labels[n]) + " at row " +
                              std::to_string(n) + " outside [0," + std::to_string(k) + ")");
    }
  }
  BasicTensor<T> probs(z.shape());
  double total = 0.0;
  for (std::size_t n = 0; n < n_batch; ++n) {
    const T* row = z.data().data() + n * k;
    double mx = row[0];
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, static_cast<double>(row[j]));
    double denom = 0.0;
    for (std::size_t j = 0; j < k; ++j) denom += std::exp(row[j] - mx);
    const double log_denom = std::log(denom);
    for (std::size_t j = 0; j < k; ++j) probs[n * k + j] = static_cast<T>(std::exp(row[j] - mx - log_denom));
    total -= row[labels[n]] - mx - log_denom;
  }
  const double loss = total / static_cast<double>(n_batch);
  if (!std::isfinite(loss)) throw NumericError("softmax_cross_entropy: loss is not finite");

  auto saved = std::make_shared<BasicTensor<T>>(probs);
  auto saved_labels = std::make_shared<std::vector<int>>(labels.begin(), labels.end());
  Var<T> out = tape.record(OpKind::SoftmaxCrossEntropy, {logits}, BasicTensor<T>(Shape{1}, static_cast<T>(loss)),
                           [=](const BasicTensor<T>& g, std::span<std::vector<T>* const> grads) {
                             auto& dz = *grads[0];
                             const double scale = static_cast<double>(g[0]) / static_cast<double>(n_batch);
                             for (std::size_t n = 0; n < n_batch; ++n) {
                               for (std::size_t j = 0; j < k; ++j) {
                                 double d = (*saved)[n * k + j];
                                 if (static_cast<int>(j) == (*saved_labels)[n]) d -= 1.0;
                                 dz[n * k + j] += static_cast<T>(scale * d);
                               }
                             }
                           });
  return {out, std::move(probs)};
}

#define REMN_INSTANTIATE_OPS(T)                                                                              \
  template Var<T> conv2d<T>(Tape<T>&, Var<T>, Var<T>, Var<T>, std::size_t, std::size_t);                      \
  template Var<T> batch_norm2d<T>(Tape<T>&, Var<T>, Var<T>, Var<T>, BatchNormState<T>&, Mode);               \
  template Var<T> relu<T>(Tape<T>&, Var<T>);                                                                  \
  template Var<T> sigmoid<T>(Tape<T>&, Var<T>);                                                               \
  template Var<T> max_pool2d<T>(Tape<T>&, Var<T>);                                                            \
  template Var<T> global_average_pool<T>(Tape<T>&, Var<T>);                                                  \
  template Var<T> adaptive_average_pool<T>(Tape<T>&, Var<T>, std::size_t, std::size_t);                      \
  template Var<T> channel_scale<T>(Tape<T>&, Var<T>, Var<T>);                                                 \
  template Var<T> add<T>(Tape<T>&, Var<T>, Var<T>);                                                           \
  template Var<T> linear<T>(Tape<T>&, Var<T>, Var<T>, Var<T>);                                                \
  template Var<T> reshape<T>(Tape<T>&, Var<T>, Shape);                                                        \
  template CrossEntropyResult<T> softmax_cross_entropy<T>(Tape<T>&, Var<T>, std::span<const int>);

REMN_INSTANTIATE_OPS(float)
REMN_INSTANTIATE_OPS(double)

}  // namespace ops

template <typename T>
std::vector<int> argmax_rows(const BasicTensor<T>& matrix) {
  if (matrix.rank() != 2) throw ShapeError("argmax_rows: expected rank 2, got " + shape_str(matrix.shape()));
  const std::size_t rows = matrix.dim(0), cols = matrix.dim(1);
  std::vector<int> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < cols; ++c) {
      if (matrix[r * cols + c] > matrix[r * cols + best]) best = c;
    }
    out[r] = static_cast<int>(best);
  }
  return out;
}

template std::vector<int> argmax_rows<float>(const BasicTensor<float>&);
template std::vector<int> argmax_rows<double>(const BasicTensor<double>&);

}  // namespace remn
