#include "xlkd/adapter.hpp"

#include <cmath>
#include <map>
#include <stdexcept>
#include <string>

#include "xlkd/rng.hpp"

namespace xlkd {

std::size_t AdapterParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.weight.numel() + l.bias.numel();
  return n;
}

ParamList AdapterParams::named() const {
  ParamList out;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const std::string base = "adapter.layer" + std::to_string(i);
    out.push_back({base + ".w", layers[i].weight, false});
    out.push_back({base + ".b", layers[i].bias, false});
  }
  return out;
}

AdapterParams AdapterParams::clone() const {
  AdapterParams out;
  for (const auto& l : layers) out.layers.push_back({l.weight.clone(), l.bias.clone()});
  return out;
}

std::size_t adapter_param_count(int d_student, int d_teacher, const std::vector<int>& hidden) {
  std::size_t n = 0;
  int in = d_student;
  for (int h : hidden) {
    n += static_cast<std::size_t>(in) * static_cast<std::size_t>(h) + static_cast<std::size_t>(h);
    in = h;
  }
  return n + static_cast<std::size_t>(in) * static_cast<std::size_t>(d_teacher) + static_cast<std::size_t>(d_teacher);
}

AdapterParams init_adapter(int d_student, int d_teacher, const std::vector<int>& hidden, std::uint64_t seed) {
  if (d_student < 1 || d_teacher < 1) throw std::invalid_argument("init_adapter: dims must be >= 1");
  for (int h : hidden) {
    if (h < 1) throw std::invalid_argument("init_adapter: hidden widths must be >= 1");
  }
  Rng rng(seed);
  std::vector<int> dims{d_student};
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(d_teacher);
  AdapterParams p;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    const auto in = static_cast<std::size_t>(dims[i]), out = static_cast<std::size_t>(dims[i + 1]);
    Linear l{uniform_tensor({in, out}, 1.0 / std::sqrt(static_cast<double>(in)), rng), Tensor::zeros({out})};
    l.weight.set_requires_grad(true);
    l.bias.set_requires_grad(true);
    p.layers.push_back(std::move(l));
  }
  return p;
}

AdapterParams adapter_from_params(const ParamList& params) {
  std::map<std::size_t, Linear> by_index;
  for (const auto& nt : params) {
    if (!starts_with(nt.name, "adapter.layer")) continue;
    const std::string rest = nt.name.substr(13);
    const auto dot = rest.find('.');
    const std::size_t idx = std::stoul(rest.substr(0, dot));
    const std::string field = rest.substr(dot + 1);
    if (field == "w") by_index[idx].weight = nt.tensor;
    else if (field == "b") by_index[idx].bias = nt.tensor;
  }
  if (by_index.empty()) throw std::invalid_argument("no adapter.* groups present");
  AdapterParams p;
  for (std::size_t i = 0; i < by_index.size(); ++i) {
    auto it = by_index.find(i);
    if (it == by_index.end() || !it->second.weight.defined() || !it->second.bias.defined()) {
      throw std::invalid_argument("adapter layer " + std::to_string(i) + " incomplete");
    }
    p.layers.push_back(it->second);
  }
  return p;
}

Tensor apply_adapter(const AdapterParams& params, const Tensor& emb) {
  if (params.layers.empty()) throw std::invalid_argument("apply_adapter: empty adapter");
  if (emb.shape().back() != params.input_dim()) {
    throw ShapeError("apply_adapter: embedding width " + std::to_string(emb.shape().back()) + " but adapter expects " +
                     std::to_string(params.input_dim()));
  }
  Tensor h = emb;
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    h = add_bias(matmul(h, params.layers[i].weight), params.layers[i].bias);
    if (i + 1 < params.layers.size()) h = gelu(h);
  }
  return h;
}

}  // namespace xlkd
