#include "xlkd/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace xlkd {

namespace {

double eval_no_grad(const std::function<Tensor()>& fn) {
  NoGradScope scope;
  const Tensor out = fn();
  return out.item();
}

}  // namespace

double grad_check(const std::function<Tensor()>& fn, std::span<Tensor> params, double step) {
  if (!(step > 0.0)) throw std::invalid_argument("grad_check: step must be positive");

  std::vector<bool> saved_flags;
  for (auto& p : params) {
    saved_flags.push_back(p.requires_grad());
    p.set_requires_grad(true);
    p.zero_grad();
  }

  std::vector<std::vector<double>> analytic;
  {
    Graph graph;
    GraphScope scope(graph);
    const Tensor loss = fn();
    if (loss.numel() != 1) throw ShapeError("grad_check: fn must return a scalar");
    if (graph.size() > 0 && loss.requires_grad()) backward(graph, loss);
  }
  for (auto& p : params) {
    const auto g = p.grad();
    analytic.emplace_back(g.begin(), g.end());
    if (analytic.back().empty()) analytic.back().assign(p.numel(), 0.0);
  }

  const double base_a = eval_no_grad(fn);
  const double base_b = eval_no_grad(fn);
  if (base_a != base_b) throw NondeterministicError("grad_check: fn returned different values for identical inputs");

  double worst = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto values = params[k].mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double original = values[i];
      values[i] = original + step;
      const double up = eval_no_grad(fn);
      values[i] = original - step;
      const double down = eval_no_grad(fn);
      values[i] = original;
      const double numeric = (up - down) / (2.0 * step);
      const double a = analytic[k][i];
      worst = std::max(worst, std::abs(a - numeric) / std::max(1.0, std::abs(a)));
    }
  }

  for (std::size_t k = 0; k < params.size(); ++k) {
    params[k].zero_grad();
    params[k].set_requires_grad(saved_flags[k]);
  }
  return worst;
}

}  // namespace xlkd
