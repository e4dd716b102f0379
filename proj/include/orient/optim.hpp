#pragma once

#include <cmath>
#include <map>
#include <set>
#include <stdexcept>
#include <string>

#include "orient/autodiff.hpp"
#include "orient/gradcheck.hpp"

namespace orient {

enum class OptimizerKind { adam, sgd };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::adam;
  double lr = 1e-3;
  double momentum = 0.9;  // sgd
  double beta1 = 0.9;     // adam
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0;

  void validate() const {
    if (!(lr >= 0.0) || !std::isfinite(lr)) throw std::invalid_argument("optimizer.lr must be finite and >= 0");
    if (momentum < 0.0 || momentum >= 1.0) throw std::invalid_argument("optimizer.momentum must be in [0,1)");
    if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) {
      throw std::invalid_argument("optimizer betas must be in [0,1)");
    }
    if (!(epsilon > 0.0)) throw std::invalid_argument("optimizer.epsilon must be > 0");
    if (weight_decay < 0.0) throw std::invalid_argument("optimizer.weight_decay must be >= 0");
  }
};

inline const char* optimizer_name(OptimizerKind k) { return k == OptimizerKind::adam ? "adam" : "sgd"; }

inline OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "adam") return OptimizerKind::adam;
  if (s == "sgd") return OptimizerKind::sgd;
  throw std::invalid_argument("optimizer '" + s + "' not in {adam,sgd}");
}

// Adam (bias-corrected) or SGD with heavy-ball momentum:
//   sgd:  v = mu*v + g;  p -= lr*v
//   adam: m = b1*m + (1-b1)*g;  v = b2*v + (1-b2)*g^2;
//         p -= lr * m_hat / (sqrt(v_hat) + eps)
// Weight decay is L2 added to the gradient and skipped for names in
// `no_decay`. Per-name learning-rate multipliers scale lr.
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig cfg, std::map<std::string, double> lr_multipliers = {},
                     std::set<std::string> no_decay = {})
      : cfg_(cfg), mult_(std::move(lr_multipliers)), no_decay_(std::move(no_decay)) {
    cfg_.validate();
  }

  void step(ParamSet& params, const ad::GradMap& grads) {
    ++t_;
    for (const auto& [name, grad] : grads) {
      auto it = params.find(name);
      if (it == params.end()) throw std::out_of_range("optimizer: gradient for unknown parameter '" + name + "'");
      Tensor& p = it->second;
      if (p.shape() != grad.shape()) throw std::invalid_argument("optimizer: gradient shape mismatch for '" + name + "'");
      const double lr = cfg_.lr * multiplier(name);
      const double wd = no_decay_.count(name) ? 0.0 : cfg_.weight_decay;
      auto pd = p.data();
      auto gd = grad.data();
      if (cfg_.kind == OptimizerKind::sgd) {
        Tensor& v = slot(first_, name, p);
        auto vd = v.data();
        for (std::size_t i = 0; i < pd.size(); ++i) {
          const double g = gd[i] + wd * pd[i];
          vd[i] = cfg_.momentum * vd[i] + g;
          pd[i] -= lr * vd[i];
        }
      } else {
        Tensor& m = slot(first_, name, p);
        Tensor& v = slot(second_, name, p);
        auto md = m.data();
        auto vd = v.data();
        const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (std::size_t i = 0; i < pd.size(); ++i) {
          const double g = gd[i] + wd * pd[i];
          md[i] = cfg_.beta1 * md[i] + (1.0 - cfg_.beta1) * g;
          vd[i] = cfg_.beta2 * vd[i] + (1.0 - cfg_.beta2) * g * g;
          pd[i] -= lr * (md[i] / c1) / (std::sqrt(vd[i] / c2) + cfg_.epsilon);
        }
      }
    }
  }

  std::size_t steps() const noexcept { return t_; }

  void set_multiplier(const std::string& name, double m) { mult_[name] = m; }

 private:
  double multiplier(const std::string& name) const {
    auto it = mult_.find(name);
    return it == mult_.end() ? 1.0 : it->second;
  }

  static Tensor& slot(std::map<std::string, Tensor>& m, const std::string& name, const Tensor& like) {
    auto it = m.find(name);
    if (it == m.end()) it = m.emplace(name, Tensor::zeros(like.shape())).first;
    return it->second;
  }

  OptimizerConfig cfg_;
  std::map<std::string, double> mult_;
  std::set<std::string> no_decay_;
  std::map<std::string, Tensor> first_, second_;
  std::size_t t_ = 0;
};

}  // namespace orient
