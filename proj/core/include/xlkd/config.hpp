#pragma once

// Run configuration: flat dotted `key = value` lines, '#' comments.
// Absent keys keep their defaults; unknown keys are rejected.

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "xlkd/corpus.hpp"
#include "xlkd/denoiser.hpp"
#include "xlkd/distill.hpp"

namespace xlkd {

class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string key, const std::string& message)
      : std::runtime_error(key.empty() ? message : "config key '" + key + "': " + message), key_(std::move(key)) {}
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

struct RunConfig {
  std::uint64_t seed = 0;

  int T = 25;
  double beta_start = 2e-3;
  double beta_end = 0.35;

  std::size_t G = 16;

  int N = 2000;
  int M = 240;
  bool unique = false;
  Catalog catalog;

  int d_T = 32;
  int d_S = 24;

  std::size_t blocks = 3;
  std::size_t width = 288;
  std::size_t attn_dim = 32;
  std::size_t time_dim = 8;
  std::size_t lora_rank = 4;
  double kv_init_gain = 32.0;

  std::vector<int> adapter_hidden{64};

  StrategyTag strategy = StrategyTag::kUKD;
  TrainConfig train;    // adapter / strategy runs
  TrainConfig teacher;  // teacher pretraining

  std::size_t samples_per_prompt = 5;
  std::vector<std::uint64_t> eval_seeds{0, 1, 2, 3, 4};

  std::vector<StrategyTag> ablate_strategies{StrategyTag::kFT,   StrategyTag::kTKD,  StrategyTag::kULKD,
                                             StrategyTag::kUFKD, StrategyTag::kUTKD, StrategyTag::kUKD};
  std::vector<std::vector<int>> sweep_hidden{{32}, {64}, {128}};
  double sweep_threshold = 0.8;

  VariantOptions variant;

  RunConfig();

  void validate() const;  // throws ConfigError naming the offending key

  CorpusConfig corpus_config() const;
  NoiseSchedule schedule() const;
  DenoiserConfig denoiser_config() const;
  // Copies of train / teacher with the shared eval and LoRA settings applied.
  TrainConfig train_config() const;
  TrainConfig teacher_config() const;
  std::size_t teacher_vocab() const { return static_cast<std::size_t>(catalog.teacher_vocab()); }
};

// Applies `text` on top of `base`. Errors name the key (or line) at fault.
RunConfig parse_config(std::string_view text, RunConfig base = {});
RunConfig load_config(const std::filesystem::path& path);

// Every key with its resolved value, one `key = value` per line, in a fixed
// order; parse_config(dump_config(c)) reproduces c.
std::string dump_config(const RunConfig& config);

// ---- builders (seeded from the master seed) ------------------------------

TextEncoderParams make_teacher_encoder(const RunConfig& config);
TextEncoderParams make_student_encoder(const RunConfig& config);
AdapterParams make_adapter(const RunConfig& config, std::uint64_t seed, const std::vector<int>& hidden);
// Both encoders plus a fresh adapter around an already trained teacher.
Model make_model(const RunConfig& config, const DenoiserParams& teacher, std::uint64_t adapter_seed);

}  // namespace xlkd
