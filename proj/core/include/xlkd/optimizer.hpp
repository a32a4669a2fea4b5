#pragma once

#include <vector>

#include "xlkd/tensor.hpp"

namespace xlkd {

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam over a fixed list of leaf tensors. Tensors without an accumulated
// gradient at step() time are treated as having a zero gradient.
class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamOptions options);

  void zero_grad();
  void step();
  long steps() const { return t_; }
  void set_lr(double lr) { opt_.lr = lr; }
  double lr() const { return opt_.lr; }
  const std::vector<Tensor>& params() const { return params_; }

 private:
  std::vector<Tensor> params_;
  AdamOptions opt_;
  std::vector<std::vector<double>> m_, v_;
  long t_ = 0;
};

}  // namespace xlkd
