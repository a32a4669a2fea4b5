#pragma once

// Parameter-efficient adapter: a token-wise MLP from the student condition
// space (d_S) to the teacher condition space (d_T), gelu between layers and
// nothing after the last.

#include <cstdint>
#include <vector>

#include "xlkd/params.hpp"
#include "xlkd/tensor.hpp"

namespace xlkd {

struct Linear {
  Tensor weight;  // [in, out]
  Tensor bias;    // [out]
};

struct AdapterParams {
  std::vector<Linear> layers;

  std::size_t input_dim() const { return layers.front().weight.dim(0); }
  std::size_t output_dim() const { return layers.back().weight.dim(1); }
  std::size_t parameter_count() const;
  // "adapter.layer<i>.w" / "adapter.layer<i>.b"
  ParamList named() const;
  AdapterParams clone() const;
};

AdapterParams init_adapter(int d_student, int d_teacher, const std::vector<int>& hidden, std::uint64_t seed);
AdapterParams adapter_from_params(const ParamList& params);

// Parameter count of init_adapter(d_student, d_teacher, hidden, ...).
std::size_t adapter_param_count(int d_student, int d_teacher, const std::vector<int>& hidden);

// emb [..., d_S] -> [..., d_T], applied to every token row independently.
Tensor apply_adapter(const AdapterParams& params, const Tensor& emb);

}  // namespace xlkd
