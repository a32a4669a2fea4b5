#pragma once

// Frozen text encoders: token embedding followed by one per-token
// gelu(x W + b) mixing layer.

#include <cstdint>
#include <span>
#include <string>

#include "xlkd/corpus.hpp"
#include "xlkd/params.hpp"
#include "xlkd/tensor.hpp"

namespace xlkd {

struct TextEncoderParams {
  int vocab_size = 0;
  int dim = 0;
  int id_base = 0;  // first token id handled by this encoder
  Tensor table;     // [vocab, dim]
  Tensor mixer_w;   // [dim, dim]
  Tensor mixer_b;   // [dim]
  bool frozen = true;

  ParamList named(const std::string& prefix) const;
};

TextEncoderParams init_encoder(int vocab_size, int dim, std::uint64_t seed, int id_base = 0);
// Rebuilds an encoder from named tensors (checkpoint groups under `prefix`).
TextEncoderParams encoder_from_params(const ParamList& params, const std::string& prefix, int id_base);

// [L, dim]; never records gradients.
Tensor encode(const TextEncoderParams& params, const Prompt& prompt);
// [n, L, dim]
Tensor encode_batch(const TextEncoderParams& params, std::span<const Prompt> prompts);

}  // namespace xlkd
