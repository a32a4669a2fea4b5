#pragma once

#include <functional>
#include <span>
#include <stdexcept>

#include "xlkd/tensor.hpp"

namespace xlkd {

class NondeterministicError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Compares the reverse-mode gradient of `fn` against central differences
// (f(x+h) - f(x-h)) / 2h, entry by entry over every tensor in `params`.
// Returns max |analytic - numeric| / max(1, |analytic|).
//
// `fn` must rebuild its computation from the current parameter values on
// every call and return a scalar. Parameters are restored bitwise on exit and
// their accumulated gradients are cleared.
double grad_check(const std::function<Tensor()>& fn, std::span<Tensor> params, double step = 1e-5);

}  // namespace xlkd
