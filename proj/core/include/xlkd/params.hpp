#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "xlkd/tensor.hpp"

namespace xlkd {

// A parameter tensor addressed by a dotted group name such as
// "denoiser.block0.w_k". `frozen` marks groups no strategy may train.
struct NamedTensor {
  std::string name;
  Tensor tensor;
  bool frozen = false;
};

using ParamList = std::vector<NamedTensor>;

bool starts_with(std::string_view s, std::string_view prefix);

// FNV-1a over the raw value bytes of one tensor.
std::uint64_t checksum(const Tensor& t);
std::size_t param_count(const ParamList& params);

// Fills a tensor with i.i.d. U(-bound, bound) draws.
class Rng;
Tensor uniform_tensor(Shape shape, double bound, Rng& rng);

}  // namespace xlkd
