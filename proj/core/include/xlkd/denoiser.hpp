#pragma once

// Conditional noise predictor shared by the teacher and student paths.
//
//   h0   = [x_t | time_emb(t)] W_in + b_in
//   u    = gelu(h W_1 + b_1)
//   a    = u + softmax(q K^T / sqrt(d_attn)) V W_o + b_o,
//          q = u W_q, K = C W_k (+ C A_k B_k), V = C W_v (+ C A_v B_v)
//   h'   = h + a W_2 + b_2            (tap of the block)
//   eps  = h_B W_head + b_head
//
// The condition C enters only through the key/value projections.

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "xlkd/diffusion.hpp"
#include "xlkd/params.hpp"
#include "xlkd/tensor.hpp"

namespace xlkd {

class ConditionDimError : public ShapeError {
 public:
  using ShapeError::ShapeError;
};

struct DenoiserConfig {
  std::size_t side = 16;  // G
  std::size_t time_dim = 8;
  std::size_t width = 288;  // >= side^2 + time_dim keeps x_t recoverable in the residual stream
  std::size_t attn_dim = 32;
  std::size_t blocks = 3;
  std::size_t cond_dim = 32;  // d_T
  // W_K / W_V init bound is kv_init_gain / sqrt(d_T). The frozen encoders emit
  // small activations, so unit gain leaves attention nearly blind to the
  // condition for thousands of steps.
  double kv_init_gain = 32.0;

  std::size_t pixels() const { return side * side; }
};

struct LoraPair {
  Tensor a;  // [d_T, r]
  Tensor b;  // [r, d_attn]
};

struct DenoiserBlock {
  Tensor w1, b1;
  Tensor w_q, w_k, w_v;
  Tensor w_o, b_o;
  Tensor w2, b2;
  std::optional<LoraPair> lora_k, lora_v;
};

struct DenoiserParams {
  DenoiserConfig config;
  Tensor in_w, in_b;
  std::vector<DenoiserBlock> blocks;
  Tensor head_w, head_b;

  // "denoiser.in_w", "denoiser.block<i>.w_k", "denoiser.block<i>.lora_a_k", ...
  ParamList named() const;
  DenoiserParams clone() const;
  bool has_lora() const;
};

struct DenoiserOutput {
  Tensor eps_hat;             // [n, G*G]
  std::vector<Tensor> taps;   // one [n, W] per block, in block order
};

DenoiserParams init_denoiser(const DenoiserConfig& config, std::uint64_t seed);
DenoiserParams denoiser_from_params(const DenoiserConfig& config, const ParamList& params);

// hidden [n, W], cond [n, L, d_T] -> [n, W] (residual included).
Tensor cross_attention(const Tensor& hidden, const Tensor& cond, const DenoiserBlock& block);

DenoiserOutput denoise(const DenoiserParams& params, const Tensor& x_t, std::span<const int> t, const Tensor& cond);

// Adapts denoise() to the sampler/loss callback signature.
EpsFn eps_fn(const DenoiserParams& params);

// Attaches rank-r key/value LoRA pairs; A ~ U(+-1/sqrt(d_T)), B = 0.
void add_lora(DenoiserParams& params, std::size_t rank, std::uint64_t seed);
// Folds W_k += A_k B_k and W_v += A_v B_v into a LoRA-free copy.
DenoiserParams merge_lora(const DenoiserParams& params);
// Copy with N(0, sigma^2) added to every tensor; sigma = 0 returns an exact copy.
DenoiserParams perturb_gaussian(const DenoiserParams& params, double sigma, std::uint64_t seed);

}  // namespace xlkd
