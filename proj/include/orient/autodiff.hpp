#pragma once

// Tape-based reverse-mode differentiation. Every op appends a node holding
// its forward value and a closure implementing the vector-Jacobian product;
// node ids are therefore a topological order by construction.

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "orient/ops.hpp"
#include "orient/tensor.hpp"

namespace orient::ad {

struct Var {
  std::size_t id = 0;
};

using GradMap = std::map<std::string, Tensor>;

class Graph;
using BackwardFn = std::function<void(Graph&, const Tensor& grad_out)>;

class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;
  Graph(Graph&&) = default;
  Graph& operator=(Graph&&) = default;

  // Constant leaf: never receives a gradient.
  Var input(Tensor value) { return push(Node{std::move(value), {}, nullptr, false, {}, false}); }

  // Named leaf. Non-trainable params are stored but excluded from gradients.
  Var param(const std::string& name, Tensor value, bool trainable = true) {
    if (param_ids_.count(name)) throw std::invalid_argument("Graph::param: duplicate parameter '" + name + "'");
    Var v = push(Node{std::move(value), {}, nullptr, trainable, name, trainable});
    param_ids_.emplace(name, v.id);
    return v;
  }

  std::optional<Var> find_param(const std::string& name) const {
    auto it = param_ids_.find(name);
    if (it == param_ids_.end()) return std::nullopt;
    return Var{it->second};
  }

  // Generic op: `fn` is invoked during backward with the gradient of this
  // node's output and must accumulate into its inputs via accumulate().
  Var make(Tensor value, std::vector<Var> inputs, BackwardFn fn) {
    const std::size_t id = nodes_.size();
    bool needs = false;
    std::vector<std::size_t> ids;
    ids.reserve(inputs.size());
    for (Var v : inputs) {
      if (v.id >= id) throw std::logic_error("Graph::make: input does not precede node (cycle)");
      needs = needs || nodes_[v.id].requires_grad;
      ids.push_back(v.id);
    }
    return push(Node{std::move(value), std::move(ids), needs ? std::move(fn) : nullptr, needs, {}, false});
  }

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }

  // Gradient slot for `v`, zero-initialised on first use.
  Tensor& grad_slot(Var v) {
    Tensor& g = grads_[v.id];
    if (g.empty()) g = Tensor(nodes_[v.id].value.shape());
    return g;
  }

  void accumulate(Var v, const Tensor& g) {
    if (!nodes_[v.id].requires_grad) return;
    Tensor& slot = grads_[v.id];
    if (slot.empty()) {
      slot = g;
      return;
    }
    for (std::size_t i = 0; i < g.numel(); ++i) slot[i] += g[i];
  }

  // Gradient of v after backward(); zeros if nothing reached it.
  Tensor grad(Var v) const {
    const Tensor& g = grads_.at(v.id);
    return g.empty() ? Tensor(nodes_[v.id].value.shape()) : g;
  }

  GradMap backward(Var loss) {
    if (loss.id >= nodes_.size()) throw std::invalid_argument("backward: unknown loss node");
    if (nodes_[loss.id].value.numel() != 1) {
      throw std::invalid_argument("backward: loss must be scalar, got " + shape_str(nodes_[loss.id].value.shape()));
    }
    grads_.assign(nodes_.size(), Tensor());
    if (nodes_[loss.id].requires_grad) grads_[loss.id] = Tensor(nodes_[loss.id].value.shape(), 1.0);
    for (std::size_t id = loss.id + 1; id-- > 0;) {
      Node& node = nodes_[id];
      if (!node.backward || grads_[id].empty()) continue;
      for (std::size_t in : node.inputs)
        if (in >= id) throw std::logic_error("backward: graph is not topologically ordered");
      // A node never feeds itself, so its slot can be lent to the closure.
      Tensor gout = std::move(grads_[id]);
      node.backward(*this, gout);
      grads_[id] = std::move(gout);
    }
    GradMap out;
    for (const auto& [name, id] : param_ids_) {
      if (!nodes_[id].trainable) continue;
      out.emplace(name, grads_[id].empty() ? Tensor(nodes_[id].value.shape()) : grads_[id]);
    }
    return out;
  }

 private:
  struct Node {
    Tensor value;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool requires_grad = false;
    std::string name;
    bool trainable = false;
  };

  Var push(Node n) {
    nodes_.push_back(std::move(n));
    grads_.emplace_back();
    return Var{nodes_.size() - 1};
  }

  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
  std::map<std::string, std::size_t> param_ids_;
};

// ---------------------------------------------------------------------------
// Differentiable primitives
// ---------------------------------------------------------------------------

inline Var conv2d(Graph& g, Var x, Var w, std::optional<Var> bias, Conv2dOptions opt = {}) {
  const Tensor* b = bias ? &g.value(*bias) : nullptr;
  Tensor y = orient::conv2d(g.value(x), g.value(w), b, opt);
  std::vector<Var> ins{x, w};
  if (bias) ins.push_back(*bias);
  return g.make(std::move(y), ins, [x, w, bias, opt](Graph& gr, const Tensor& gy) {
    const bool need_w = gr.requires_grad(w) || (bias && gr.requires_grad(*bias));
    auto grads = conv2d_backward(gr.value(x), gr.value(w), bias.has_value(), gy, opt, gr.requires_grad(x), need_w);
    if (gr.requires_grad(x)) gr.accumulate(x, grads.input);
    if (need_w) {
      gr.accumulate(w, grads.weight);
      if (bias) gr.accumulate(*bias, grads.bias);
    }
  });
}

namespace detail {

template <class F, class DF>
Var unary(Graph& g, Var x, F f, DF df) {
  Tensor y = map_elementwise(g.value(x), f);
  return g.make(std::move(y), {x}, [x, df](Graph& gr, const Tensor& gy) {
    const Tensor& xv = gr.value(x);
    Tensor& gx = gr.grad_slot(x);
    for (std::size_t i = 0; i < gy.numel(); ++i) gx[i] += gy[i] * df(xv[i]);
  });
}

}  // namespace detail

inline Var relu(Graph& g, Var x) {
  return detail::unary(g, x, [](double v) { return v > 0.0 ? v : 0.0; },
                       [](double v) { return v > 0.0 ? 1.0 : 0.0; });
}

inline Var hard_swish(Graph& g, Var x) { return detail::unary(g, x, hard_swish_scalar, hard_swish_grad_scalar); }

inline Var gelu(Graph& g, Var x) { return detail::unary(g, x, gelu_scalar, gelu_grad_scalar); }

inline Var sigmoid(Graph& g, Var x) {
  Tensor y = orient::sigmoid(g.value(x));
  Tensor saved = y;
  return g.make(std::move(y), {x}, [x, saved = std::move(saved)](Graph& gr, const Tensor& gy) {
    Tensor& gx = gr.grad_slot(x);
    for (std::size_t i = 0; i < gy.numel(); ++i) gx[i] += gy[i] * saved[i] * (1.0 - saved[i]);
  });
}

inline Var add(Graph& g, Var a, Var b) {
  Tensor y = orient::add(g.value(a), g.value(b));
  return g.make(std::move(y), {a, b}, [a, b](Graph& gr, const Tensor& gy) {
    gr.accumulate(a, gy);
    gr.accumulate(b, gy);
  });
}

inline Var mul(Graph& g, Var a, Var b) {
  Tensor y = orient::multiply(g.value(a), g.value(b));
  return g.make(std::move(y), {a, b}, [a, b](Graph& gr, const Tensor& gy) {
    if (gr.requires_grad(a)) {
      const Tensor& bv = gr.value(b);
      Tensor& ga = gr.grad_slot(a);
      for (std::size_t i = 0; i < gy.numel(); ++i) ga[i] += gy[i] * bv[i];
    }
    if (gr.requires_grad(b)) {
      const Tensor& av = gr.value(a);
      Tensor& gb = gr.grad_slot(b);
      for (std::size_t i = 0; i < gy.numel(); ++i) gb[i] += gy[i] * av[i];
    }
  });
}

// x scaled by a constant.
inline Var scale(Graph& g, Var x, double c) {
  Tensor y = map_elementwise(g.value(x), [c](double v) { return v * c; });
  return g.make(std::move(y), {x}, [x, c](Graph& gr, const Tensor& gy) {
    Tensor& gx = gr.grad_slot(x);
    for (std::size_t i = 0; i < gy.numel(); ++i) gx[i] += gy[i] * c;
  });
}

// x scaled by a scalar node s (shape [1]).
inline Var scale_by(Graph& g, Var x, Var s) {
  if (g.value(s).numel() != 1) throw std::invalid_argument("scale_by: scale must be scalar");
  const double sv = g.value(s).item();
  Tensor y = map_elementwise(g.value(x), [sv](double v) { return v * sv; });
  return g.make(std::move(y), {x, s}, [x, s](Graph& gr, const Tensor& gy) {
    const double sv = gr.value(s).item();
    if (gr.requires_grad(x)) {
      Tensor& gx = gr.grad_slot(x);
      for (std::size_t i = 0; i < gy.numel(); ++i) gx[i] += gy[i] * sv;
    }
    if (gr.requires_grad(s)) {
      const Tensor& xv = gr.value(x);
      double acc = 0.0;
      for (std::size_t i = 0; i < gy.numel(); ++i) acc += gy[i] * xv[i];
      gr.grad_slot(s)[0] += acc;
    }
  });
}

// 1 - s for a scalar node.
inline Var one_minus(Graph& g, Var s) {
  Tensor y = map_elementwise(g.value(s), [](double v) { return 1.0 - v; });
  return g.make(std::move(y), {s}, [s](Graph& gr, const Tensor& gy) {
    Tensor& gs = gr.grad_slot(s);
    for (std::size_t i = 0; i < gy.numel(); ++i) gs[i] -= gy[i];
  });
}

inline Var mul_broadcast_height(Graph& g, Var x, Var a) {
  Tensor y = multiply_broadcast_height(g.value(x), g.value(a));
  return g.make(std::move(y), {x, a}, [x, a](Graph& gr, const Tensor& gy) {
    const Tensor& xv = gr.value(x);
    const Tensor& av = gr.value(a);
    const std::size_t B = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    const bool gx_on = gr.requires_grad(x), ga_on = gr.requires_grad(a);
    Tensor* gx = gx_on ? &gr.grad_slot(x) : nullptr;
    Tensor* ga = ga_on ? &gr.grad_slot(a) : nullptr;
    for (std::size_t n = 0; n < B; ++n)
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t h = 0; h < H; ++h)
          for (std::size_t w = 0; w < W; ++w) {
            const double go = gy.at(n, c, h, w);
            if (gx) gx->at(n, c, h, w) += go * av.at(n, c, 0, w);
            if (ga) ga->at(n, c, 0, w) += go * xv.at(n, c, h, w);
          }
  });
}

inline Var avg_pool_height(Graph& g, Var x) {
  Tensor y = orient::avg_pool_height(g.value(x));
  return g.make(std::move(y), {x}, [x](Graph& gr, const Tensor& gy) {
    gr.accumulate(x, avg_pool_height_backward(gr.value(x).shape(), gy));
  });
}

inline Var max_pool2d(Graph& g, Var x, PoolWindow win) {
  auto r = max_pool2d_indexed(g.value(x), win);
  return g.make(std::move(r.output), {x}, [x, idx = std::move(r.argmax)](Graph& gr, const Tensor& gy) {
    Tensor& gx = gr.grad_slot(x);
    for (std::size_t o = 0; o < idx.size(); ++o) gx[idx[o]] += gy[o];
  });
}

// gamma/beta are [C] leaves; `state` provides running stats and mode and
// must outlive the graph.
inline Var batchnorm(Graph& g, Var x, Var gamma, Var beta, BatchNormState& state, bool update_running = true) {
  auto saved = std::make_shared<BatchNormSaved>();
  Tensor y = batchnorm_forward(g.value(x), g.value(gamma).data(), g.value(beta).data(), state, saved.get(),
                               update_running);
  return g.make(std::move(y), {x, gamma, beta}, [x, gamma, beta, saved](Graph& gr, const Tensor& gy) {
    auto grads = batchnorm_backward(gy, gr.value(gamma).data(), *saved);
    gr.accumulate(x, grads.input);
    const std::size_t C = grads.gamma.size();
    gr.accumulate(gamma, Tensor({C}, std::move(grads.gamma)));
    gr.accumulate(beta, Tensor({C}, std::move(grads.beta)));
  });
}

// [B,C,H,W] -> [B,C]
inline Var global_avg_pool(Graph& g, Var x) {
  const Tensor& xv = g.value(x);
  orient::detail::require_rank(xv, 4, "global_avg_pool");
  const std::size_t B = xv.dim(0), C = xv.dim(1), S = xv.dim(2) * xv.dim(3);
  Tensor y({B, C});
  for (std::size_t i = 0; i < B * C; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < S; ++j) s += xv[i * S + j];
    y[i] = s / static_cast<double>(S);
  }
  return g.make(std::move(y), {x}, [x, S](Graph& gr, const Tensor& gy) {
    Tensor& gx = gr.grad_slot(x);
    const double inv = 1.0 / static_cast<double>(S);
    for (std::size_t i = 0; i < gy.numel(); ++i)
      for (std::size_t j = 0; j < S; ++j) gx[i * S + j] += gy[i] * inv;
  });
}

// [B,...] -> [B, prod(...)]
inline Var flatten(Graph& g, Var x) {
  const Tensor& xv = g.value(x);
  Tensor y = xv.reshaped({xv.dim(0), xv.numel() / xv.dim(0)});
  return g.make(std::move(y), {x}, [x](Graph& gr, const Tensor& gy) {
    gr.accumulate(x, gy.reshaped(gr.value(x).shape()));
  });
}

// [B,D1] ++ [B,D2] -> [B,D1+D2]
inline Var concat_columns(Graph& g, Var a, Var b) {
  const Tensor& av = g.value(a);
  const Tensor& bv = g.value(b);
  orient::detail::require_rank(av, 2, "concat_columns");
  orient::detail::require_rank(bv, 2, "concat_columns");
  if (av.dim(0) != bv.dim(0)) {
    throw std::invalid_argument("concat_columns: row count " + shape_str(av.shape()) + " vs " + shape_str(bv.shape()));
  }
  const std::size_t N = av.dim(0), D1 = av.dim(1), D2 = bv.dim(1);
  Tensor y({N, D1 + D2});
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t j = 0; j < D1; ++j) y.at(n, j) = av.at(n, j);
    for (std::size_t j = 0; j < D2; ++j) y.at(n, D1 + j) = bv.at(n, j);
  }
  return g.make(std::move(y), {a, b}, [a, b, N, D1, D2](Graph& gr, const Tensor& gy) {
    if (gr.requires_grad(a)) {
      Tensor& ga = gr.grad_slot(a);
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t j = 0; j < D1; ++j) ga.at(n, j) += gy.at(n, j);
    }
    if (gr.requires_grad(b)) {
      Tensor& gb = gr.grad_slot(b);
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t j = 0; j < D2; ++j) gb.at(n, j) += gy.at(n, D1 + j);
    }
  });
}

inline Var matmul(Graph& g, Var a, Var b) {
  Tensor y = orient::matmul(g.value(a), g.value(b));
  return g.make(std::move(y), {a, b}, [a, b](Graph& gr, const Tensor& gy) {
    const Tensor& av = gr.value(a);
    const Tensor& bv = gr.value(b);
    using orient::detail::ConstMatMap;
    using orient::detail::MatMap;
    ConstMatMap gym(gy.data().data(), gy.dim(0), gy.dim(1));
    if (gr.requires_grad(a)) {
      Tensor& ga = gr.grad_slot(a);
      MatMap(ga.data().data(), av.dim(0), av.dim(1)).noalias() +=
          gym * ConstMatMap(bv.data().data(), bv.dim(0), bv.dim(1)).transpose();
    }
    if (gr.requires_grad(b)) {
      Tensor& gb = gr.grad_slot(b);
      MatMap(gb.data().data(), bv.dim(0), bv.dim(1)).noalias() +=
          ConstMatMap(av.data().data(), av.dim(0), av.dim(1)).transpose() * gym;
    }
  });
}

// x [N,D], weight [K,D], bias [K] -> [N,K]
inline Var linear(Graph& g, Var x, Var weight, Var bias) {
  const Tensor& xv = g.value(x);
  const Tensor& wv = g.value(weight);
  const Tensor& bv = g.value(bias);
  if (xv.rank() != 2 || wv.rank() != 2 || xv.dim(1) != wv.dim(1) || bv.numel() != wv.dim(0)) {
    throw std::invalid_argument("linear: input " + shape_str(xv.shape()) + ", weight " + shape_str(wv.shape()) +
                                ", bias " + shape_str(bv.shape()));
  }
  const std::size_t N = xv.dim(0), D = xv.dim(1), K = wv.dim(0);
  using orient::detail::ConstMatMap;
  using orient::detail::MatMap;
  Tensor y({N, K});
  MatMap ym(y.data().data(), N, K);
  ym.noalias() = ConstMatMap(xv.data().data(), N, D) * ConstMatMap(wv.data().data(), K, D).transpose();
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t k = 0; k < K; ++k) y.at(n, k) += bv[k];
  return g.make(std::move(y), {x, weight, bias}, [x, weight, bias, N, D, K](Graph& gr, const Tensor& gy) {
    ConstMatMap gym(gy.data().data(), N, K);
    if (gr.requires_grad(x)) {
      Tensor& gx = gr.grad_slot(x);
      MatMap(gx.data().data(), N, D).noalias() += gym * ConstMatMap(gr.value(weight).data().data(), K, D);
    }
    if (gr.requires_grad(weight)) {
      Tensor& gw = gr.grad_slot(weight);
      MatMap(gw.data().data(), K, D).noalias() += gym.transpose() * ConstMatMap(gr.value(x).data().data(), N, D);
    }
    if (gr.requires_grad(bias)) {
      Tensor& gb = gr.grad_slot(bias);
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t k = 0; k < K; ++k) gb[k] += gy.at(n, k);
    }
  });
}

inline Var sum(Graph& g, Var x) {
  const Tensor& xv = g.value(x);
  double s = 0.0;
  for (double v : xv.data()) s += v;
  return g.make(Tensor::scalar(s), {x}, [x](Graph& gr, const Tensor& gy) {
    Tensor& gx = gr.grad_slot(x);
    for (std::size_t i = 0; i < gx.numel(); ++i) gx[i] += gy[0];
  });
}

// <x, weights> for a constant weight tensor; the usual random-projection
// loss for gradient checks.
inline Var dot_constant(Graph& g, Var x, Tensor weights) {
  const Tensor& xv = g.value(x);
  if (xv.numel() != weights.numel()) {
    throw std::invalid_argument("dot_constant: " + shape_str(xv.shape()) + " vs " + shape_str(weights.shape()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < xv.numel(); ++i) s += xv[i] * weights[i];
  return g.make(Tensor::scalar(s), {x}, [x, w = std::move(weights)](Graph& gr, const Tensor& gy) {
    Tensor& gx = gr.grad_slot(x);
    for (std::size_t i = 0; i < gx.numel(); ++i) gx[i] += gy[0] * w[i];
  });
}

inline Var cross_entropy(Graph& g, Var logits, std::vector<int> labels) {
  const double loss = orient::cross_entropy(g.value(logits), labels);
  return g.make(Tensor::scalar(loss), {logits}, [logits, labels = std::move(labels)](Graph& gr, const Tensor& gy) {
    Tensor gl = cross_entropy_backward(gr.value(logits), labels);
    for (std::size_t i = 0; i < gl.numel(); ++i) gl[i] *= gy[0];
    gr.accumulate(logits, gl);
  });
}

}  // namespace orient::ad
