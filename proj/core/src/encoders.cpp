#include "xlkd/encoders.hpp"

#include <cmath>
#include <stdexcept>

#include "xlkd/rng.hpp"

namespace xlkd {

ParamList TextEncoderParams::named(const std::string& prefix) const {
  return {{prefix + ".table", table, true}, {prefix + ".mixer_w", mixer_w, true}, {prefix + ".mixer_b", mixer_b, true}};
}

TextEncoderParams init_encoder(int vocab_size, int dim, std::uint64_t seed, int id_base) {
  if (vocab_size < 1 || dim < 1) throw std::invalid_argument("init_encoder: vocab_size and dim must be >= 1");
  Rng rng(seed);
  const double bound = 1.0 / std::sqrt(static_cast<double>(dim));
  TextEncoderParams p;
  p.vocab_size = vocab_size;
  p.dim = dim;
  p.id_base = id_base;
  const auto v = static_cast<std::size_t>(vocab_size), d = static_cast<std::size_t>(dim);
  p.table = uniform_tensor({v, d}, bound, rng);
  p.mixer_w = uniform_tensor({d, d}, bound, rng);
  p.mixer_b = uniform_tensor({d}, bound, rng);
  return p;
}

TextEncoderParams encoder_from_params(const ParamList& params, const std::string& prefix, int id_base) {
  TextEncoderParams p;
  p.id_base = id_base;
  for (const auto& nt : params) {
    if (nt.name == prefix + ".table") p.table = nt.tensor;
    else if (nt.name == prefix + ".mixer_w") p.mixer_w = nt.tensor;
    else if (nt.name == prefix + ".mixer_b") p.mixer_b = nt.tensor;
  }
  if (!p.table.defined() || !p.mixer_w.defined() || !p.mixer_b.defined()) {
    throw std::invalid_argument("encoder groups '" + prefix + ".*' missing");
  }
  p.vocab_size = static_cast<int>(p.table.dim(0));
  p.dim = static_cast<int>(p.table.dim(1));
  return p;
}

Tensor encode_batch(const TextEncoderParams& params, std::span<const Prompt> prompts) {
  if (prompts.empty()) throw std::invalid_argument("encode: no prompts");
  NoGradScope no_grad;
  std::vector<std::size_t> ids;
  const std::size_t len = prompts[0].tokens.size();
  for (const auto& p : prompts) {
    if (p.tokens.size() != len) throw ShapeError("encode: prompts of unequal length");
    for (int tok : p.tokens) {
      const int local = tok - params.id_base;
      if (local < 0 || local >= params.vocab_size) {
        throw std::out_of_range("encode: token " + std::to_string(tok) + " outside encoder vocabulary [" +
                                std::to_string(params.id_base) + ", " +
                                std::to_string(params.id_base + params.vocab_size) + ")");
      }
      ids.push_back(static_cast<std::size_t>(local));
    }
  }
  const Tensor emb = embedding_lookup(params.table, ids);
  const Tensor mixed = gelu(add_bias(matmul(emb, params.mixer_w), params.mixer_b));
  return reshape(mixed, {prompts.size(), len, static_cast<std::size_t>(params.dim)});
}

Tensor encode(const TextEncoderParams& params, const Prompt& prompt) {
  const Tensor batch = encode_batch(params, std::span<const Prompt>(&prompt, 1));
  return reshape(batch, {batch.dim(1), batch.dim(2)});
}

}  // namespace xlkd
