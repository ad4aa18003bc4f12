#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "xdseg/model.hpp"

namespace xdseg {

enum class OptimizerKind { sgd, adam, adamw };

const char* to_string(OptimizerKind k);
OptimizerKind optimizer_from_string(std::string_view s);

// sgd:   p -= lr * (g + wd * p)                     (plain, no momentum)
// adam:  L2 decay folded into the gradient
// adamw: decoupled decay, moments see the raw gradient
class Optimizer {
  public:
    Optimizer(OptimizerKind kind, double lr, double weight_decay);

    void step(const std::vector<ParamRef>& params);

    OptimizerKind kind() const { return kind_; }
    double learning_rate() const { return lr_; }
    double weight_decay() const { return wd_; }

  private:
    OptimizerKind kind_;
    double lr_, wd_;
    double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
    long t_ = 0;
    std::vector<std::vector<float>> m_, v_;  // per-parameter moments, lazily sized
};

}  // namespace xdseg
