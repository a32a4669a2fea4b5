#include "xlkd/denoiser.hpp"

#include <cmath>
#include <map>
#include <stdexcept>
#include <string>

#include "xlkd/rng.hpp"

namespace xlkd {

namespace {

Tensor linear_init(std::size_t in, std::size_t out, Rng& rng) {
  return uniform_tensor({in, out}, 1.0 / std::sqrt(static_cast<double>(in)), rng);
}

template <typename F>
void for_each_tensor(DenoiserParams& p, F&& f) {
  f(p.in_w);
  f(p.in_b);
  for (auto& b : p.blocks) {
    for (Tensor* t : {&b.w1, &b.b1, &b.w_q, &b.w_k, &b.w_v, &b.w_o, &b.b_o, &b.w2, &b.b2}) f(*t);
    for (auto* pair : {&b.lora_k, &b.lora_v}) {
      if (*pair) {
        f((*pair)->a);
        f((*pair)->b);
      }
    }
  }
  f(p.head_w);
  f(p.head_b);
}

Tensor project(const Tensor& cond, const Tensor& w, const std::optional<LoraPair>& lora) {
  Tensor out = matmul(cond, w);
  if (lora) out = add(out, matmul(matmul(cond, lora->a), lora->b));
  return out;
}

}  // namespace

ParamList DenoiserParams::named() const {
  ParamList out{{"denoiser.in_w", in_w}, {"denoiser.in_b", in_b}};
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const auto& b = blocks[i];
    const std::string pre = "denoiser.block" + std::to_string(i) + ".";
    out.push_back({pre + "w1", b.w1});
    out.push_back({pre + "b1", b.b1});
    out.push_back({pre + "w_q", b.w_q});
    out.push_back({pre + "w_k", b.w_k});
    out.push_back({pre + "w_v", b.w_v});
    out.push_back({pre + "w_o", b.w_o});
    out.push_back({pre + "b_o", b.b_o});
    out.push_back({pre + "w2", b.w2});
    out.push_back({pre + "b2", b.b2});
    if (b.lora_k) {
      out.push_back({pre + "lora_a_k", b.lora_k->a});
      out.push_back({pre + "lora_b_k", b.lora_k->b});
    }
    if (b.lora_v) {
      out.push_back({pre + "lora_a_v", b.lora_v->a});
      out.push_back({pre + "lora_b_v", b.lora_v->b});
    }
  }
  out.push_back({"denoiser.head_w", head_w});
  out.push_back({"denoiser.head_b", head_b});
  return out;
}

DenoiserParams DenoiserParams::clone() const {
  DenoiserParams out = *this;
  for_each_tensor(out, [](Tensor& t) { t = t.clone(); });
  return out;
}

bool DenoiserParams::has_lora() const {
  for (const auto& b : blocks) {
    if (b.lora_k || b.lora_v) return true;
  }
  return false;
}

DenoiserParams init_denoiser(const DenoiserConfig& c, std::uint64_t seed) {
  if (c.blocks < 1 || c.width < 1 || c.attn_dim < 1 || c.cond_dim < 1 || c.side < 1) {
    throw std::invalid_argument("init_denoiser: all dimensions must be >= 1");
  }
  Rng rng(seed);
  DenoiserParams p;
  p.config = c;
  const double kv_bound = c.kv_init_gain / std::sqrt(static_cast<double>(c.cond_dim));
  p.in_w = linear_init(c.pixels() + c.time_dim, c.width, rng);
  p.in_b = Tensor::zeros({c.width});
  for (std::size_t i = 0; i < c.blocks; ++i) {
    DenoiserBlock b;
    b.w1 = linear_init(c.width, c.width, rng);
    b.b1 = Tensor::zeros({c.width});
    b.w_q = linear_init(c.width, c.attn_dim, rng);
    b.w_k = uniform_tensor({c.cond_dim, c.attn_dim}, kv_bound, rng);
    b.w_v = uniform_tensor({c.cond_dim, c.attn_dim}, kv_bound, rng);
    b.w_o = linear_init(c.attn_dim, c.width, rng);
    b.b_o = Tensor::zeros({c.width});
    b.w2 = linear_init(c.width, c.width, rng);
    b.b2 = Tensor::zeros({c.width});
    p.blocks.push_back(std::move(b));
  }
  p.head_w = linear_init(c.width, c.pixels(), rng);
  p.head_b = Tensor::zeros({c.pixels()});
  return p;
}

DenoiserParams denoiser_from_params(const DenoiserConfig& config, const ParamList& params) {
  std::map<std::string, Tensor> by_name;
  for (const auto& nt : params) by_name[nt.name] = nt.tensor;
  auto get = [&](const std::string& name) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw std::invalid_argument("missing parameter group " + name);
    return it->second;
  };
  DenoiserParams p;
  p.config = config;
  p.in_w = get("denoiser.in_w");
  p.in_b = get("denoiser.in_b");
  for (std::size_t i = 0; i < config.blocks; ++i) {
    const std::string pre = "denoiser.block" + std::to_string(i) + ".";
    DenoiserBlock b;
    b.w1 = get(pre + "w1");
    b.b1 = get(pre + "b1");
    b.w_q = get(pre + "w_q");
    b.w_k = get(pre + "w_k");
    b.w_v = get(pre + "w_v");
    b.w_o = get(pre + "w_o");
    b.b_o = get(pre + "b_o");
    b.w2 = get(pre + "w2");
    b.b2 = get(pre + "b2");
    if (by_name.count(pre + "lora_a_k")) b.lora_k = LoraPair{get(pre + "lora_a_k"), get(pre + "lora_b_k")};
    if (by_name.count(pre + "lora_a_v")) b.lora_v = LoraPair{get(pre + "lora_a_v"), get(pre + "lora_b_v")};
    p.blocks.push_back(std::move(b));
  }
  p.head_w = get("denoiser.head_w");
  p.head_b = get("denoiser.head_b");
  if (p.in_w.shape() != Shape{config.pixels() + config.time_dim, config.width} ||
      p.head_w.shape() != Shape{config.width, config.pixels()} ||
      p.blocks.front().w_k.shape() != Shape{config.cond_dim, config.attn_dim}) {
    throw ShapeError("denoiser parameter shapes do not match the configured architecture");
  }
  return p;
}

Tensor cross_attention(const Tensor& hidden, const Tensor& cond, const DenoiserBlock& block) {
  const std::size_t d_t = block.w_k.dim(0);
  const std::size_t d_attn = block.w_k.dim(1);
  if (cond.rank() != 3 || cond.dim(2) != d_t) {
    throw ConditionDimError("cross_attention: condition " + shape_str(cond.shape()) + " but keys expect width " +
                            std::to_string(d_t));
  }
  if (hidden.rank() != 2 || hidden.dim(0) != cond.dim(0)) {
    throw ShapeError("cross_attention: hidden " + shape_str(hidden.shape()) + " vs condition " +
                     shape_str(cond.shape()));
  }
  const std::size_t n = hidden.dim(0);
  const Tensor q = reshape(matmul(hidden, block.w_q), {n, 1, d_attn});
  const Tensor keys = project(cond, block.w_k, block.lora_k);
  const Tensor values = project(cond, block.w_v, block.lora_v);
  const Tensor scores = softmax_lastdim(scale(matmul(q, transpose_last2(keys)), 1.0 / std::sqrt(double(d_attn))));
  const Tensor attended = reshape(matmul(scores, values), {n, d_attn});
  return add(hidden, add_bias(matmul(attended, block.w_o), block.b_o));
}

DenoiserOutput denoise(const DenoiserParams& params, const Tensor& x_t, std::span<const int> t, const Tensor& cond) {
  const auto& c = params.config;
  if (x_t.rank() != 2 || x_t.dim(1) != c.pixels() || x_t.dim(0) != t.size()) {
    throw ShapeError("denoise: x_t " + shape_str(x_t.shape()) + " with " + std::to_string(t.size()) +
                     " timesteps, expected [n, " + std::to_string(c.pixels()) + "]");
  }
  if (cond.rank() != 3 || cond.dim(2) != c.cond_dim) {
    throw ConditionDimError("denoise: condition " + shape_str(cond.shape()) + " but denoiser expects width " +
                            std::to_string(c.cond_dim));
  }
  if (cond.dim(0) != x_t.dim(0)) throw ShapeError("denoise: batch of condition and x_t differ");

  const Tensor inputs[] = {x_t, time_embedding(t, c.time_dim)};
  Tensor h = add_bias(matmul(concat(inputs, 1), params.in_w), params.in_b);
  DenoiserOutput out;
  for (const auto& block : params.blocks) {
    const Tensor u = gelu(add_bias(matmul(h, block.w1), block.b1));
    const Tensor a = cross_attention(u, cond, block);
    h = add(h, add_bias(matmul(a, block.w2), block.b2));
    out.taps.push_back(h);
  }
  out.eps_hat = add_bias(matmul(h, params.head_w), params.head_b);
  return out;
}

EpsFn eps_fn(const DenoiserParams& params) {
  return [&params](const Tensor& x_t, std::span<const int> t, const Tensor& cond) {
    return denoise(params, x_t, t, cond).eps_hat;
  };
}

void add_lora(DenoiserParams& params, std::size_t rank, std::uint64_t seed) {
  if (rank < 1) throw std::invalid_argument("add_lora: rank must be >= 1");
  Rng rng(seed);
  const auto& c = params.config;
  const double bound = 1.0 / std::sqrt(static_cast<double>(c.cond_dim));
  for (auto& b : params.blocks) {
    b.lora_k = LoraPair{uniform_tensor({c.cond_dim, rank}, bound, rng), Tensor::zeros({rank, c.attn_dim})};
    b.lora_v = LoraPair{uniform_tensor({c.cond_dim, rank}, bound, rng), Tensor::zeros({rank, c.attn_dim})};
  }
}

DenoiserParams merge_lora(const DenoiserParams& params) {
  NoGradScope no_grad;
  DenoiserParams out = params.clone();
  for (auto& b : out.blocks) {
    if (b.lora_k) b.w_k = add(b.w_k, matmul(b.lora_k->a, b.lora_k->b)).detach();
    if (b.lora_v) b.w_v = add(b.w_v, matmul(b.lora_v->a, b.lora_v->b)).detach();
    b.lora_k.reset();
    b.lora_v.reset();
  }
  return out;
}

DenoiserParams perturb_gaussian(const DenoiserParams& params, double sigma, std::uint64_t seed) {
  if (sigma < 0.0) throw std::invalid_argument("perturb_gaussian: sigma must be >= 0");
  DenoiserParams out = params.clone();
  if (sigma == 0.0) return out;
  Rng rng(seed);
  for_each_tensor(out, [&](Tensor& t) {
    for (auto& v : t.mutable_data()) v += sigma * rng.normal();
  });
  return out;
}

}  // namespace xlkd
