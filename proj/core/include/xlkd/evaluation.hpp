#pragma once

// Nearest-canonical fidelity scoring and the experiment drivers built on it.

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "xlkd/corpus.hpp"
#include "xlkd/distill.hpp"

namespace xlkd {

struct PromptResult {
  Prompt prompt;
  int target_id = 0;
  int nearest_id = 0;  // majority class over the samples
  bool correct = false;
  bool culture = false;
  double mse_to_canonical = 0.0;  // mean over samples, against the target render
};

struct EvalReport {
  std::vector<PromptResult> per_prompt;
  double fidelity_acc = 0.0;  // over non-culture prompts
  double culture_acc = 0.0;   // over culture prompts
  double mean_mse = 0.0;
  std::size_t parallel_count = 0;
  std::size_t culture_count = 0;

  bool operator==(const EvalReport& other) const;
};

bool operator==(const PromptResult& a, const PromptResult& b);

// Maps prompts to teacher-space conditions [n, L, d_T].
using CondFn = std::function<Tensor(std::span<const Prompt>)>;

CondFn teacher_cond_fn(const TextEncoderParams& teacher_encoder);
CondFn student_cond_fn(const TextEncoderParams& student_encoder, const AdapterParams& adapter);

// Canonical renders of every catalog concept, indexed by semantics id.
std::vector<ImageSample> canonical_renders(const Catalog& catalog, std::size_t side);

// Minimum-MSE canonical concept; ties go to the lowest semantics id.
int nearest_canonical(std::span<const double> pixels, std::span<const ImageSample> canon);

// Samples `samples_per_prompt` images per prompt with ddpm_sample and scores
// each prompt by majority vote (ties to the lowest id).
EvalReport fidelity_eval(const DenoiserParams& denoiser, const CondFn& cond, std::span<const Prompt> prompts,
                         const Catalog& catalog, const NoiseSchedule& s, std::size_t samples_per_prompt,
                         std::uint64_t seed);

// Scores already generated images, rows grouped per prompt
// (samples_per_prompt consecutive rows each).
EvalReport score_images(const Tensor& images, std::span<const Prompt> prompts, const Catalog& catalog,
                        std::size_t samples_per_prompt);

// Evaluation prompt sets: every distinct parallel concept / culture concept.
std::vector<Prompt> parallel_eval_prompts(const Catalog& catalog, Language language);
std::vector<Prompt> culture_eval_prompts(const Catalog& catalog);

// ---- experiments ---------------------------------------------------------

struct ArmRow {
  StrategyTag strategy = StrategyTag::kUKD;
  std::uint64_t seed = 0;
  double fidelity_acc = 0.0;
  double culture_acc = 0.0;
  MetricRow final_losses;
};

struct StrategyMean {
  StrategyTag strategy = StrategyTag::kUKD;
  double fidelity_acc = 0.0;
  double culture_acc = 0.0;
};

struct AblationTable {
  std::vector<ArmRow> rows;
  std::vector<StrategyMean> means;

  std::optional<ArmRow> find(StrategyTag tag, std::uint64_t seed) const;
  std::string csv() const;
};

// Model handed to each arm: adapter re-initialised from the arm seed.
using ModelFactory = std::function<Model(std::uint64_t seed)>;

AblationTable ablation_run(std::span<const StrategyTag> strategies, const CorpusBundle& corpus,
                           const ModelFactory& make_model, const NoiseSchedule& s, const TrainConfig& config,
                           std::span<const std::uint64_t> seeds);

class EvaluationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct PluginReport {
  double acc_base = 0.0;
  double acc_variant = 0.0;
  double degradation = 0.0;  // 1 - acc_variant / acc_base
};

// Evaluates one adapter against two denoisers. Throws EvaluationError when
// acc_base is zero.
PluginReport plugin_check(const AdapterParams& adapter, const TextEncoderParams& student_encoder,
                          const DenoiserParams& base, const DenoiserParams& variant,
                          std::span<const Prompt> prompts, const Catalog& catalog, const NoiseSchedule& s,
                          std::size_t samples_per_prompt, std::uint64_t seed);

struct SweepRow {
  std::vector<int> hidden;
  std::size_t param_count = 0;
  std::optional<long> steps_to_threshold;  // nullopt: never reached
  double final_acc = 0.0;
};

// UKD run per hidden configuration; steps_to_threshold is the first logged
// (evaluated) step with fidelity >= threshold.
std::vector<SweepRow> adapter_sweep(std::span<const std::vector<int>> hidden_configs, const CorpusBundle& corpus,
                                    const std::function<Model(const std::vector<int>&)>& make_model,
                                    const NoiseSchedule& s, const TrainConfig& config, std::uint64_t seed,
                                    double threshold = 0.8);

std::string sweep_csv(std::span<const SweepRow> rows);

}  // namespace xlkd
