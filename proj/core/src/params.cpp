#include "xlkd/params.hpp"

#include "xlkd/io.hpp"
#include "xlkd/rng.hpp"

namespace xlkd {

bool starts_with(std::string_view s, std::string_view prefix) { return s.substr(0, prefix.size()) == prefix; }

std::uint64_t checksum(const Tensor& t) {
  const auto d = t.data();
  return io::fnv1a64(std::span<const unsigned char>(reinterpret_cast<const unsigned char*>(d.data()),
                                                    d.size() * sizeof(double)));
}

std::size_t param_count(const ParamList& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.tensor.numel();
  return n;
}

Tensor uniform_tensor(Shape shape, double bound, Rng& rng) {
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = rng.uniform(-bound, bound);
  return Tensor(std::move(shape), std::move(v));
}

}  // namespace xlkd
