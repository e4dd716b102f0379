#pragma once

// Primitive numerical kernels over NCHW tensors: forward passes plus the
// matching vector-Jacobian products used by the autodiff graph.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "orient/tensor.hpp"

namespace orient {

namespace detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

inline void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw std::invalid_argument(std::string(op) + ": expected rank " + std::to_string(rank) +
                                " tensor, got " + shape_str(t.shape()));
  }
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Convolution (cross-correlation, no kernel flip)
// ---------------------------------------------------------------------------

struct Conv2dOptions {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

inline std::size_t conv_out_size(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad) {
  return (in + 2 * pad - k) / stride + 1;
}

namespace detail {

inline void check_conv(const Tensor& x, const Tensor& w, const Tensor* bias, const Conv2dOptions& opt) {
  require_rank(x, 4, "conv2d(input)");
  require_rank(w, 4, "conv2d(weight)");
  if (x.dim(1) != w.dim(1)) {
    throw std::invalid_argument("conv2d: input " + shape_str(x.shape()) + " has " +
                                std::to_string(x.dim(1)) + " channels but weight " +
                                shape_str(w.shape()) + " expects " + std::to_string(w.dim(1)));
  }
  if (w.dim(2) != w.dim(3)) throw std::invalid_argument("conv2d: kernel must be square, got " + shape_str(w.shape()));
  if (opt.stride == 0) throw std::invalid_argument("conv2d: stride must be positive");
  const std::size_t k = w.dim(2);
  if (x.dim(2) + 2 * opt.padding < k || x.dim(3) + 2 * opt.padding < k) {
    throw std::invalid_argument("conv2d: kernel " + shape_str(w.shape()) + " larger than padded input " +
                                shape_str(x.shape()));
  }
  if (bias && (bias->numel() != w.dim(0))) {
    throw std::invalid_argument("conv2d: bias " + shape_str(bias->shape()) + " does not match weight " +
                                shape_str(w.shape()));
  }
}

inline bool conv_is_pointwise(std::size_t k, const Conv2dOptions& opt) {
  return k == 1 && opt.stride == 1 && opt.padding == 0;
}

// Unfold one image [C,H,W] into columns [C*k*k, Ho*Wo].
inline void im2col(const double* img, std::size_t C, std::size_t H, std::size_t W, std::size_t k,
                   const Conv2dOptions& opt, std::size_t Ho, std::size_t Wo, double* cols) {
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(opt.padding);
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t ki = 0; ki < k; ++ki) {
      for (std::size_t kj = 0; kj < k; ++kj) {
        double* row = cols + ((c * k + ki) * k + kj) * Ho * Wo;
        for (std::size_t oh = 0; oh < Ho; ++oh) {
          const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * opt.stride + ki) - pad;
          double* dst = row + oh * Wo;
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(H)) {
            std::fill(dst, dst + Wo, 0.0);
            continue;
          }
          const double* src = img + (c * H + static_cast<std::size_t>(ih)) * W;
          for (std::size_t ow = 0; ow < Wo; ++ow) {
            const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * opt.stride + kj) - pad;
            dst[ow] = (iw < 0 || iw >= static_cast<std::ptrdiff_t>(W)) ? 0.0 : src[iw];
          }
        }
      }
    }
  }
}

inline void col2im_add(const double* cols, std::size_t C, std::size_t H, std::size_t W, std::size_t k,
                       const Conv2dOptions& opt, std::size_t Ho, std::size_t Wo, double* img) {
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(opt.padding);
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t ki = 0; ki < k; ++ki) {
      for (std::size_t kj = 0; kj < k; ++kj) {
        const double* row = cols + ((c * k + ki) * k + kj) * Ho * Wo;
        for (std::size_t oh = 0; oh < Ho; ++oh) {
          const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * opt.stride + ki) - pad;
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(H)) continue;
          double* dst = img + (c * H + static_cast<std::size_t>(ih)) * W;
          const double* src = row + oh * Wo;
          for (std::size_t ow = 0; ow < Wo; ++ow) {
            const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * opt.stride + kj) - pad;
            if (iw >= 0 && iw < static_cast<std::ptrdiff_t>(W)) dst[iw] += src[ow];
          }
        }
      }
    }
  }
}

}  // namespace detail

// input [B,Cin,H,W], weight [Cout,Cin,k,k], optional bias [Cout].
inline Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor* bias, const Conv2dOptions& opt = {}) {
  detail::check_conv(x, w, bias, opt);
  const std::size_t B = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t Co = w.dim(0), k = w.dim(2);
  const std::size_t Ho = conv_out_size(H, k, opt.stride, opt.padding);
  const std::size_t Wo = conv_out_size(W, k, opt.stride, opt.padding);
  const std::size_t P = Ho * Wo, K = Ci * k * k;
  Tensor y({B, Co, Ho, Wo});
  detail::ConstMatMap wm(w.data().data(), Co, K);
  std::vector<double> cols(detail::conv_is_pointwise(k, opt) ? 0 : K * P);
  for (std::size_t n = 0; n < B; ++n) {
    const double* img = x.data().data() + n * Ci * H * W;
    const double* colp = img;
    if (!cols.empty()) {
      detail::im2col(img, Ci, H, W, k, opt, Ho, Wo, cols.data());
      colp = cols.data();
    }
    detail::MatMap ym(y.data().data() + n * Co * P, Co, P);
    ym.noalias() = wm * detail::ConstMatMap(colp, K, P);
    if (bias) {
      for (std::size_t c = 0; c < Co; ++c) ym.row(c).array() += (*bias)[c];
    }
  }
  return y;
}

inline Tensor conv2d(const Tensor& x, const Tensor& w, std::size_t stride = 1, std::size_t padding = 0) {
  return conv2d(x, w, nullptr, Conv2dOptions{stride, padding});
}

struct Conv2dGrads {
  Tensor input;   // empty when not requested
  Tensor weight;
  Tensor bias;    // empty when the forward had no bias
};

inline Conv2dGrads conv2d_backward(const Tensor& x, const Tensor& w, bool has_bias, const Tensor& gy,
                                   const Conv2dOptions& opt, bool need_input, bool need_weight) {
  const std::size_t B = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t Co = w.dim(0), k = w.dim(2);
  const std::size_t Ho = gy.dim(2), Wo = gy.dim(3);
  const std::size_t P = Ho * Wo, K = Ci * k * k;
  Conv2dGrads g;
  if (need_input) g.input = Tensor(x.shape());
  if (need_weight) g.weight = Tensor(w.shape());
  if (has_bias && need_weight) g.bias = Tensor({Co});
  const bool pointwise = detail::conv_is_pointwise(k, opt);
  std::vector<double> cols(pointwise ? 0 : K * P);
  detail::ConstMatMap wm(w.data().data(), Co, K);
  for (std::size_t n = 0; n < B; ++n) {
    const double* img = x.data().data() + n * Ci * H * W;
    detail::ConstMatMap gym(gy.data().data() + n * Co * P, Co, P);
    if (need_weight) {
      const double* colp = img;
      if (!pointwise) {
        detail::im2col(img, Ci, H, W, k, opt, Ho, Wo, cols.data());
        colp = cols.data();
      }
      detail::MatMap gwm(g.weight.data().data(), Co, K);
      gwm.noalias() += gym * detail::ConstMatMap(colp, K, P).transpose();
      if (has_bias) {
        // Plain loop: Eigen's vectorised sum peels by pointer alignment, which
        // makes the rounding depend on where the buffer happens to land.
        const double* gp = gy.data().data() + n * Co * P;
        for (std::size_t c = 0; c < Co; ++c) {
          double s = 0.0;
          for (std::size_t p = 0; p < P; ++p) s += gp[c * P + p];
          g.bias[c] += s;
        }
      }
    }
    if (need_input) {
      double* gimg = g.input.data().data() + n * Ci * H * W;
      if (pointwise) {
        detail::MatMap(gimg, K, P).noalias() = wm.transpose() * gym;
      } else {
        detail::MatMap(cols.data(), K, P).noalias() = wm.transpose() * gym;
        detail::col2im_add(cols.data(), Ci, H, W, k, opt, Ho, Wo, gimg);
      }
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Elementwise activations
// ---------------------------------------------------------------------------

inline double sigmoid_scalar(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double hard_swish_scalar(double x) { return x * std::max(0.0, x + 3.0) / 6.0; }

// Subgradient 0 at the kink x = -3.
inline double hard_swish_grad_scalar(double x) { return x > -3.0 ? (2.0 * x + 3.0) / 6.0 : 0.0; }

// GELU, tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
inline constexpr double kGeluSqrt2OverPi = 0.7978845608028654;
inline constexpr double kGeluCubic = 0.044715;

inline double gelu_scalar(double x) {
  const double u = kGeluSqrt2OverPi * (x + kGeluCubic * x * x * x);
  return 0.5 * x * (1.0 + std::tanh(u));
}

inline double gelu_grad_scalar(double x) {
  const double u = kGeluSqrt2OverPi * (x + kGeluCubic * x * x * x);
  const double t = std::tanh(u);
  const double du = kGeluSqrt2OverPi * (1.0 + 3.0 * kGeluCubic * x * x);
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
}

template <class F>
Tensor map_elementwise(const Tensor& x, F&& f) {
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) y[i] = f(x[i]);
  return y;
}

inline Tensor sigmoid(const Tensor& x) { return map_elementwise(x, sigmoid_scalar); }
inline Tensor relu(const Tensor& x) {
  return map_elementwise(x, [](double v) { return v > 0.0 ? v : 0.0; });
}
inline Tensor hard_swish(const Tensor& x) { return map_elementwise(x, hard_swish_scalar); }
inline Tensor gelu(const Tensor& x) { return map_elementwise(x, gelu_scalar); }

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "add");
  Tensor y(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) y[i] = a[i] + b[i];
  return y;
}

inline Tensor multiply(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "multiply");
  Tensor y(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) y[i] = a[i] * b[i];
  return y;
}

// x [B,C,H,W] scaled by a [B,C,1,W], broadcasting a across the height axis.
inline Tensor multiply_broadcast_height(const Tensor& x, const Tensor& a) {
  detail::require_rank(x, 4, "multiply_broadcast_height");
  detail::require_rank(a, 4, "multiply_broadcast_height");
  if (a.dim(0) != x.dim(0) || a.dim(1) != x.dim(1) || a.dim(2) != 1 || a.dim(3) != x.dim(3)) {
    throw std::invalid_argument("multiply_broadcast_height: cannot broadcast " + shape_str(a.shape()) +
                                " over " + shape_str(x.shape()));
  }
  Tensor y(x.shape());
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  for (std::size_t n = 0; n < B; ++n)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t h = 0; h < H; ++h)
        for (std::size_t w = 0; w < W; ++w) y.at(n, c, h, w) = x.at(n, c, h, w) * a.at(n, c, 0, w);
  return y;
}

// ---------------------------------------------------------------------------
// Pooling
// ---------------------------------------------------------------------------

// Mean over the height axis: [B,C,H,W] -> [B,C,1,W].
inline Tensor avg_pool_height(const Tensor& x) {
  detail::require_rank(x, 4, "avg_pool_height");
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  Tensor y({B, C, 1, W});
  for (std::size_t n = 0; n < B; ++n)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t w = 0; w < W; ++w) {
        double s = 0.0;
        for (std::size_t h = 0; h < H; ++h) s += x.at(n, c, h, w);
        y.at(n, c, 0, w) = s / static_cast<double>(H);
      }
  return y;
}

inline Tensor avg_pool_height_backward(const Shape& in_shape, const Tensor& gy) {
  Tensor gx(in_shape);
  const std::size_t B = in_shape[0], C = in_shape[1], H = in_shape[2], W = in_shape[3];
  const double inv = 1.0 / static_cast<double>(H);
  for (std::size_t n = 0; n < B; ++n)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t h = 0; h < H; ++h)
        for (std::size_t w = 0; w < W; ++w) gx.at(n, c, h, w) = gy.at(n, c, 0, w) * inv;
  return gx;
}

struct PoolWindow {
  std::size_t kernel_h = 2, kernel_w = 2;
  std::size_t stride_h = 2, stride_w = 2;
};

struct MaxPoolResult {
  Tensor output;
  std::vector<std::size_t> argmax;  // flat input index per output element
};

// Ties resolve to the first maximal element in row-major scan order.
inline MaxPoolResult max_pool2d_indexed(const Tensor& x, const PoolWindow& win) {
  detail::require_rank(x, 4, "max_pool2d");
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (win.kernel_h == 0 || win.kernel_w == 0 || win.stride_h == 0 || win.stride_w == 0) {
    throw std::invalid_argument("max_pool2d: window and stride must be positive");
  }
  if (H < win.kernel_h || W < win.kernel_w) {
    throw std::invalid_argument("max_pool2d: window " + std::to_string(win.kernel_h) + "x" +
                                std::to_string(win.kernel_w) + " larger than input " + shape_str(x.shape()));
  }
  const std::size_t Ho = (H - win.kernel_h) / win.stride_h + 1;
  const std::size_t Wo = (W - win.kernel_w) / win.stride_w + 1;
  MaxPoolResult r{Tensor({B, C, Ho, Wo}), std::vector<std::size_t>(B * C * Ho * Wo)};
  std::size_t o = 0;
  for (std::size_t n = 0; n < B; ++n)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t oh = 0; oh < Ho; ++oh)
        for (std::size_t ow = 0; ow < Wo; ++ow, ++o) {
          double best = -std::numeric_limits<double>::infinity();
          std::size_t best_idx = 0;
          for (std::size_t i = 0; i < win.kernel_h; ++i)
            for (std::size_t j = 0; j < win.kernel_w; ++j) {
              const std::size_t idx = ((n * C + c) * H + oh * win.stride_h + i) * W + ow * win.stride_w + j;
              if (x[idx] > best) {
                best = x[idx];
                best_idx = idx;
              }
            }
          r.output[o] = best;
          r.argmax[o] = best_idx;
        }
  return r;
}

inline Tensor max_pool2d(const Tensor& x, std::size_t k, std::size_t stride) {
  return max_pool2d_indexed(x, PoolWindow{k, k, stride, stride}).output;
}

inline Tensor max_pool2d_backward(const Shape& in_shape, const std::vector<std::size_t>& argmax, const Tensor& gy) {
  Tensor gx(in_shape);
  for (std::size_t o = 0; o < argmax.size(); ++o) gx[argmax[o]] += gy[o];
  return gx;
}

// ---------------------------------------------------------------------------
// Batch normalization over (batch, spatial) per channel
// ---------------------------------------------------------------------------

enum class BatchNormMode { training, inference };

struct BatchNormState {
  std::vector<double> gamma, beta;
  std::vector<double> running_mean, running_var;
  double epsilon = 1e-5;
  double momentum = 0.1;
  BatchNormMode mode = BatchNormMode::training;

  static BatchNormState identity(std::size_t channels, double epsilon = 1e-5, double momentum = 0.1) {
    return BatchNormState{std::vector<double>(channels, 1.0), std::vector<double>(channels, 0.0),
                          std::vector<double>(channels, 0.0), std::vector<double>(channels, 1.0),
                          epsilon, momentum, BatchNormMode::training};
  }
  std::size_t channels() const noexcept { return running_mean.size(); }
};

struct BatchNormSaved {
  Tensor normalized;              // xhat
  std::vector<double> inv_std;    // per channel
  bool training = true;
};

// gamma/beta are passed separately so the graph can treat them as trainable
// leaves; `stats` supplies running statistics and hyperparameters.
inline Tensor batchnorm_forward(const Tensor& x, std::span<const double> gamma, std::span<const double> beta,
                                BatchNormState& stats, BatchNormSaved* saved = nullptr,
                                bool update_running = true) {
  detail::require_rank(x, 4, "batchnorm");
  const std::size_t B = x.dim(0), C = x.dim(1), S = x.dim(2) * x.dim(3);
  if (gamma.size() != C || beta.size() != C || stats.channels() != C) {
    throw std::invalid_argument("batchnorm: state has " + std::to_string(stats.channels()) +
                                " channels, input " + shape_str(x.shape()));
  }
  const bool training = stats.mode == BatchNormMode::training;
  if (training && B < 2) {
    throw std::invalid_argument("batchnorm: training mode requires batch size >= 2, got " + std::to_string(B));
  }
  Tensor y(x.shape());
  Tensor xhat(x.shape());
  std::vector<double> inv_std(C);
  const double count = static_cast<double>(B * S);
  for (std::size_t c = 0; c < C; ++c) {
    double mean = 0.0, var = 0.0;
    if (training) {
      for (std::size_t n = 0; n < B; ++n) {
        const double* p = x.data().data() + (n * C + c) * S;
        for (std::size_t s = 0; s < S; ++s) mean += p[s];
      }
      mean /= count;
      for (std::size_t n = 0; n < B; ++n) {
        const double* p = x.data().data() + (n * C + c) * S;
        for (std::size_t s = 0; s < S; ++s) var += (p[s] - mean) * (p[s] - mean);
      }
      var /= count;
      if (update_running) {
        const double unbiased = count > 1.0 ? var * count / (count - 1.0) : var;
        stats.running_mean[c] = (1.0 - stats.momentum) * stats.running_mean[c] + stats.momentum * mean;
        stats.running_var[c] = (1.0 - stats.momentum) * stats.running_var[c] + stats.momentum * unbiased;
      }
    } else {
      mean = stats.running_mean[c];
      var = stats.running_var[c];
    }
    inv_std[c] = 1.0 / std::sqrt(var + stats.epsilon);
    for (std::size_t n = 0; n < B; ++n) {
      const std::size_t base = (n * C + c) * S;
      for (std::size_t s = 0; s < S; ++s) {
        const double h = (x[base + s] - mean) * inv_std[c];
        xhat[base + s] = h;
        y[base + s] = gamma[c] * h + beta[c];
      }
    }
  }
  if (saved) *saved = BatchNormSaved{std::move(xhat), std::move(inv_std), training};
  return y;
}

inline Tensor batchnorm(const Tensor& x, BatchNormState& state) {
  return batchnorm_forward(x, state.gamma, state.beta, state);
}

struct BatchNormGrads {
  Tensor input;
  std::vector<double> gamma, beta;
};

inline BatchNormGrads batchnorm_backward(const Tensor& gy, std::span<const double> gamma, const BatchNormSaved& saved) {
  const std::size_t B = gy.dim(0), C = gy.dim(1), S = gy.dim(2) * gy.dim(3);
  BatchNormGrads g{Tensor(gy.shape()), std::vector<double>(C, 0.0), std::vector<double>(C, 0.0)};
  const double count = static_cast<double>(B * S);
  for (std::size_t c = 0; c < C; ++c) {
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (std::size_t n = 0; n < B; ++n) {
      const std::size_t base = (n * C + c) * S;
      for (std::size_t s = 0; s < S; ++s) {
        sum_dy += gy[base + s];
        sum_dy_xhat += gy[base + s] * saved.normalized[base + s];
      }
    }
    g.beta[c] = sum_dy;
    g.gamma[c] = sum_dy_xhat;
    const double scale = gamma[c] * saved.inv_std[c];
    for (std::size_t n = 0; n < B; ++n) {
      const std::size_t base = (n * C + c) * S;
      for (std::size_t s = 0; s < S; ++s) {
        if (saved.training) {
          g.input[base + s] =
              scale * (gy[base + s] - sum_dy / count - saved.normalized[base + s] * sum_dy_xhat / count);
        } else {
          g.input[base + s] = scale * gy[base + s];
        }
      }
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Dense algebra and loss
// ---------------------------------------------------------------------------

// [N,K] x [K,M] -> [N,M]
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require_rank(a, 2, "matmul(lhs)");
  detail::require_rank(b, 2, "matmul(rhs)");
  if (a.dim(1) != b.dim(0)) {
    throw std::invalid_argument("matmul: inner dimensions differ, " + shape_str(a.shape()) + " x " +
                                shape_str(b.shape()));
  }
  Tensor y({a.dim(0), b.dim(1)});
  detail::MatMap(y.data().data(), a.dim(0), b.dim(1)).noalias() =
      detail::ConstMatMap(a.data().data(), a.dim(0), a.dim(1)) *
      detail::ConstMatMap(b.data().data(), b.dim(0), b.dim(1));
  return y;
}

// Row-wise softmax of [N,K].
inline Tensor softmax(const Tensor& logits) {
  detail::require_rank(logits, 2, "softmax");
  const std::size_t N = logits.dim(0), K = logits.dim(1);
  Tensor p(logits.shape());
  for (std::size_t n = 0; n < N; ++n) {
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < K; ++k) m = std::max(m, logits.at(n, k));
    double z = 0.0;
    for (std::size_t k = 0; k < K; ++k) z += (p.at(n, k) = std::exp(logits.at(n, k) - m));
    for (std::size_t k = 0; k < K; ++k) p.at(n, k) /= z;
  }
  return p;
}

inline void check_labels(const Tensor& logits, std::span<const int> labels) {
  if (labels.size() != logits.dim(0)) {
    throw std::invalid_argument("cross_entropy: " + std::to_string(labels.size()) + " labels for logits " +
                                shape_str(logits.shape()));
  }
  for (int l : labels)
    if (l < 0 || static_cast<std::size_t>(l) >= logits.dim(1))
      throw std::invalid_argument("cross_entropy: label " + std::to_string(l) + " outside [0," +
                                  std::to_string(logits.dim(1)) + ")");
}

// Mean negative log-likelihood of softmax(logits) at the given labels.
inline double cross_entropy(const Tensor& logits, std::span<const int> labels) {
  detail::require_rank(logits, 2, "cross_entropy");
  check_labels(logits, labels);
  const std::size_t N = logits.dim(0), K = logits.dim(1);
  double total = 0.0;
  for (std::size_t n = 0; n < N; ++n) {
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < K; ++k) m = std::max(m, logits.at(n, k));
    double z = 0.0;
    for (std::size_t k = 0; k < K; ++k) z += std::exp(logits.at(n, k) - m);
    total += std::log(z) + m - logits.at(n, static_cast<std::size_t>(labels[n]));
  }
  return total / static_cast<double>(N);
}

inline Tensor cross_entropy_backward(const Tensor& logits, std::span<const int> labels) {
  Tensor g = softmax(logits);
  const double inv = 1.0 / static_cast<double>(logits.dim(0));
  for (std::size_t n = 0; n < logits.dim(0); ++n) {
    g.at(n, static_cast<std::size_t>(labels[n])) -= 1.0;
    for (std::size_t k = 0; k < logits.dim(1); ++k) g.at(n, k) *= inv;
  }
  return g;
}

}  // namespace orient
