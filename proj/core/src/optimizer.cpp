#include "xlkd/optimizer.hpp"

#include <cmath>

namespace xlkd {

Adam::Adam(std::vector<Tensor> params, AdamOptions options) : params_(std::move(params)), opt_(options) {
  for (const auto& p : params_) {
    m_.emplace_back(p.numel(), 0.0);
    v_.emplace_back(p.numel(), 0.0);
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

void Adam::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto& p = params_[k];
    const auto g = p.grad();
    const bool have = !g.empty();
    auto w = p.mutable_data();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = have ? g[i] : 0.0;
      m[i] = opt_.beta1 * m[i] + (1.0 - opt_.beta1) * gi;
      v[i] = opt_.beta2 * v[i] + (1.0 - opt_.beta2) * gi * gi;
      w[i] -= opt_.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + opt_.eps);
    }
  }
}

}  // namespace xlkd
