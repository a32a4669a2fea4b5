#include "xlkd/rng.hpp"

namespace xlkd {

std::uint64_t derive_seed(std::uint64_t master, SeedStream stream) {
  return master + static_cast<std::uint64_t>(stream);
}

}  // namespace xlkd
