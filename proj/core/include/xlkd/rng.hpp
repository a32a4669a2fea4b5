#pragma once

#include <cstdint>
#include <random>

namespace xlkd {

// Seeded generator shared by every stochastic routine. Streams are only
// reproducible within one build (std::normal_distribution is
// implementation-defined).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double normal() { return normal_(engine_); }
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
  // Inclusive on both ends.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    return std::uniform_int_distribution<std::int64_t>(lo, hi)(engine_);
  }
  std::uint64_t next_u64() { return engine_(); }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

// Per-purpose offsets applied to the master seed.
enum class SeedStream : std::uint64_t {
  kCorpus = 1000,
  kTeacherEncoder = 2000,
  kStudentEncoder = 2100,
  kDenoiserInit = 2200,
  kAdapterInit = 2300,
  kTrain = 3000,
  kEval = 4000,
  kVariant = 5000,
};

std::uint64_t derive_seed(std::uint64_t master, SeedStream stream);

}  // namespace xlkd
