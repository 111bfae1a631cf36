#pragma once

#include <string>
#include <utility>
#include <vector>

#include "cardseg/ops.hpp"

namespace cardseg::nn {

/// Base for anything with learnable parameters. Registration order is the
/// canonical parameter order (checkpoints and optimizers rely on it).
class Module {
 public:
  virtual ~Module() = default;
  Module() = default;
  Module(const Module&) = delete;
  Module& operator=(const Module&) = delete;

  /// Dotted names, depth-first in registration order.
  std::vector<std::pair<std::string, Var>> named_parameters() const {
    std::vector<std::pair<std::string, Var>> out;
    collect("", out);
    return out;
  }

  std::vector<Var> parameters() const {
    std::vector<Var> out;
    for (auto& [name, v] : named_parameters()) out.push_back(v);
    return out;
  }

  void set_requires_grad(bool on) const {
    for (auto& v : parameters()) v.node()->requires_grad = on;
  }

 protected:
  Var register_parameter(std::string name, Tensor init) {
    Var v = Var::parameter(std::move(init));
    params_.emplace_back(std::move(name), v);
    return v;
  }

  void register_module(std::string name, const Module& m) {
    children_.emplace_back(std::move(name), &m);
  }

 private:
  void collect(const std::string& prefix, std::vector<std::pair<std::string, Var>>& out) const {
    for (auto& [name, v] : params_) out.emplace_back(prefix + name, v);
    for (auto& [name, child] : children_) child->collect(prefix + name + ".", out);
  }

  std::vector<std::pair<std::string, Var>> params_;
  std::vector<std::pair<std::string, const Module*>> children_;
};

/// He-normal fan-in initialization for conv/linear weights.
inline Tensor he_normal(Rng& rng, std::vector<int> shape, int64_t fan_in) {
  Tensor t(std::move(shape));
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (float& v : t.data) v = static_cast<float>(rng.normal(0.0, stddev));
  return t;
}

inline Tensor normal_init(Rng& rng, std::vector<int> shape, double stddev) {
  Tensor t(std::move(shape));
  for (float& v : t.data) v = static_cast<float>(rng.normal(0.0, stddev));
  return t;
}

class Conv2d : public Module {
 public:
  Conv2d(Rng& rng, int in_c, int out_c, int k, int stride = 1, int pad = 0, int dilation = 1,
         double init_stddev = -1.0)
      : stride_(stride), pad_(pad), dilation_(dilation) {
    const int64_t fan_in = static_cast<int64_t>(in_c) * k * k;
    Tensor w = init_stddev < 0.0 ? he_normal(rng, {out_c, in_c, k, k}, fan_in)
                                 : normal_init(rng, {out_c, in_c, k, k}, init_stddev);
    w_ = register_parameter("weight", std::move(w));
    b_ = register_parameter("bias", Tensor({out_c}));
  }

  Var forward(const Var& x) const { return conv2d(x, w_, b_, stride_, pad_, dilation_); }

  Var weight() const { return w_; }
  Var bias() const { return b_; }

 private:
  Var w_, b_;
  int stride_, pad_, dilation_;
};

class ConvTranspose2d : public Module {
 public:
  ConvTranspose2d(Rng& rng, int in_c, int out_c, int k = 4, int stride = 2, int pad = 1)
      : stride_(stride), pad_(pad) {
    const int64_t fan_in = static_cast<int64_t>(in_c) * k * k;
    w_ = register_parameter("weight", he_normal(rng, {in_c, out_c, k, k}, fan_in));
    b_ = register_parameter("bias", Tensor({out_c}));
  }

  Var forward(const Var& x) const { return conv_transpose2d(x, w_, b_, stride_, pad_); }

 private:
  Var w_, b_;
  int stride_, pad_;
};

class Linear : public Module {
 public:
  Linear(Rng& rng, int in_c, int out_c, bool zero_init = false) {
    Tensor w = zero_init ? Tensor({out_c, in_c}) : he_normal(rng, {out_c, in_c}, in_c);
    w_ = register_parameter("weight", std::move(w));
    b_ = register_parameter("bias", Tensor({out_c}));
  }

  Var forward(const Var& x) const { return linear(x, w_, b_); }

 private:
  Var w_, b_;
};

}  // namespace cardseg::nn
