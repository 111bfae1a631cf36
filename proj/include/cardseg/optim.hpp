#pragma once

#include <map>
#include <string>
#include <vector>

#include "cardseg/module.hpp"

namespace cardseg::nn {

/// Optimizer state is exposed as named tensors so checkpoints can round-trip
/// a training run bit-exactly.
class Optimizer {
 public:
  explicit Optimizer(std::vector<std::pair<std::string, Var>> params)
      : params_(std::move(params)) {}
  virtual ~Optimizer() = default;

  virtual void step() = 0;

  void zero_grad() {
    for (auto& [name, p] : params_) p.zero_grad();
  }

  virtual std::vector<std::pair<std::string, Tensor*>> state_tensors() = 0;
  virtual std::map<std::string, std::string> state_scalars() const = 0;
  virtual void load_state_scalars(const std::map<std::string, std::string>& s) = 0;

  const std::vector<std::pair<std::string, Var>>& params() const { return params_; }

 protected:
  std::vector<std::pair<std::string, Var>> params_;
};

/// SGD with Nesterov momentum and coupled L2 weight decay:
///   g <- g + wd*w;  v <- mu*v + g;  w <- w - lr*(g + mu*v)
class SgdNesterov : public Optimizer {
 public:
  SgdNesterov(std::vector<std::pair<std::string, Var>> params, double lr, double momentum,
              double weight_decay)
      : Optimizer(std::move(params)), lr_(lr), momentum_(momentum), wd_(weight_decay) {
    for (auto& [name, p] : params_) velocity_.emplace_back(Tensor::zeros(p.val().shape));
  }

  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }

  void step() override {
    const float lr = static_cast<float>(lr_);
    const float mu = static_cast<float>(momentum_);
    const float wd = static_cast<float>(wd_);
    for (size_t j = 0; j < params_.size(); ++j) {
      Var& p = params_[j].second;
      if (!p.has_grad()) continue;
      float* w = p.val().ptr();
      float* g = p.grad().ptr();
      float* v = velocity_[j].ptr();
      const int64_t n = p.val().numel();
      for (int64_t i = 0; i < n; ++i) {
        const float gi = g[i] + wd * w[i];
        v[i] = mu * v[i] + gi;
        w[i] -= lr * (gi + mu * v[i]);
      }
    }
  }

  std::vector<std::pair<std::string, Tensor*>> state_tensors() override {
    std::vector<std::pair<std::string, Tensor*>> out;
    for (size_t j = 0; j < params_.size(); ++j)
      out.emplace_back("vel." + params_[j].first, &velocity_[j]);
    return out;
  }

  std::map<std::string, std::string> state_scalars() const override {
    return {{"lr", std::to_string(lr_)}};
  }

  void load_state_scalars(const std::map<std::string, std::string>& s) override {
    auto it = s.find("lr");
    if (it != s.end()) lr_ = std::stod(it->second);
  }

 private:
  double lr_, momentum_, wd_;
  std::vector<Tensor> velocity_;
};

class Adam : public Optimizer {
 public:
  Adam(std::vector<std::pair<std::string, Var>> params, double lr, double weight_decay,
       double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : Optimizer(std::move(params)), lr_(lr), wd_(weight_decay), b1_(beta1), b2_(beta2),
        eps_(eps) {
    for (auto& [name, p] : params_) {
      m_.emplace_back(Tensor::zeros(p.val().shape));
      v_.emplace_back(Tensor::zeros(p.val().shape));
    }
  }

  void step() override {
    ++t_;
    const double bc1 = 1.0 - std::pow(b1_, t_);
    const double bc2 = 1.0 - std::pow(b2_, t_);
    for (size_t j = 0; j < params_.size(); ++j) {
      Var& p = params_[j].second;
      if (!p.has_grad()) continue;
      float* w = p.val().ptr();
      float* g = p.grad().ptr();
      float* m = m_[j].ptr();
      float* v = v_[j].ptr();
      const int64_t n = p.val().numel();
      for (int64_t i = 0; i < n; ++i) {
        const double gi = g[i] + wd_ * w[i];
        const double mi = b1_ * m[i] + (1.0 - b1_) * gi;
        const double vi = b2_ * v[i] + (1.0 - b2_) * gi * gi;
        m[i] = static_cast<float>(mi);
        v[i] = static_cast<float>(vi);
        w[i] -= static_cast<float>(lr_ * (mi / bc1) / (std::sqrt(vi / bc2) + eps_));
      }
    }
  }

  std::vector<std::pair<std::string, Tensor*>> state_tensors() override {
    std::vector<std::pair<std::string, Tensor*>> out;
    for (size_t j = 0; j < params_.size(); ++j) {
      out.emplace_back("m." + params_[j].first, &m_[j]);
      out.emplace_back("v." + params_[j].first, &v_[j]);
    }
    return out;
  }

  std::map<std::string, std::string> state_scalars() const override {
    return {{"t", std::to_string(t_)}};
  }

  void load_state_scalars(const std::map<std::string, std::string>& s) override {
    auto it = s.find("t");
    if (it != s.end()) t_ = std::stoll(it->second);
  }

 private:
  double lr_, wd_, b1_, b2_, eps_;
  int64_t t_ = 0;
  std::vector<Tensor> m_, v_;
};

}  // namespace cardseg::nn
