#pragma once

#include <vector>

#include "balign/autograd.hpp"

namespace balign {

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Adam over a fixed list of leaf parameters. Parameters without a gradient
// in a given step are left untouched.
class Adam {
 public:
  Adam(std::vector<Var> params, AdamOptions options = {});

  void step();
  void zero_grad();
  long steps() const noexcept { return t_; }
  const AdamOptions& options() const noexcept { return opt_; }

 private:
  std::vector<Var> params_;
  std::vector<Tensor> m_, v_;
  AdamOptions opt_;
  long t_ = 0;
};

}  // namespace balign
