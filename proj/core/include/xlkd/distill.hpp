#pragma once

// Knowledge-distillation losses, training strategies and the training loop
// that adapts a frozen teacher denoiser to the student text encoder.

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "xlkd/adapter.hpp"
#include "xlkd/corpus.hpp"
#include "xlkd/denoiser.hpp"
#include "xlkd/diffusion.hpp"
#include "xlkd/encoders.hpp"
#include "xlkd/optimizer.hpp"
#include "xlkd/params.hpp"

namespace xlkd {

enum class StrategyTag { kFT, kTKD, kULKD, kUFKD, kUTKD, kUKD, kLORA, kKV, kHybridUKD };

std::string_view strategy_name(StrategyTag tag);
// Accepts the names returned by strategy_name ("FT", ..., "HYBRID-UKD").
StrategyTag parse_strategy(std::string_view name);

// A strategy tag plus the glob patterns ('*' wildcard) naming its trainable
// parameter groups.
struct Strategy {
  StrategyTag tag = StrategyTag::kUKD;
  std::vector<std::string> trainable;

  bool trains(std::string_view group) const;
  bool trains_denoiser() const;
  bool is_kd() const;  // needs the teacher pass
  bool uses_denoising_loss() const;
  bool accepts_culture() const { return tag == StrategyTag::kHybridUKD; }
};

Strategy make_strategy(StrategyTag tag);
bool glob_match(std::string_view pattern, std::string_view text);

class FrozenGroupError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class StrategyError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct KDWeights {
  double lambda_fl = 1.0;
  double lambda_l = 1.0;

  void validate() const;
};

struct KDLosses {
  Tensor flkd;
  Tensor lkd;
  Tensor kd;
};

// lkd  = mean (eps_s - eps_t)^2
// flkd = sum over selected layers of mean (tap_s - tap_t)^2
// kd   = lambda_fl flkd + lambda_l lkd
// `layers` selects tap indices; empty means every tap. The teacher output
// must be detached.
KDLosses kd_losses(const DenoiserOutput& teacher, const DenoiserOutput& student, const KDWeights& w,
                   std::span<const std::size_t> layers = {});

// mean (adapted - teacher_emb)^2 over all elements.
Tensor tkd_loss(const Tensor& adapted, const Tensor& teacher_emb);

// ---- metrics -------------------------------------------------------------

inline constexpr const char* kMetricsHeader = "step,loss_total,loss_flkd,loss_lkd,loss_sd,eval_acc,eval_mse";

struct MetricRow {
  long step = 0;
  double loss_total = 0.0;
  double loss_flkd = 0.0;
  double loss_lkd = 0.0;
  double loss_sd = 0.0;
  double eval_acc = -1.0;  // -1 when no evaluation ran at this row
  double eval_mse = -1.0;
};

struct MetricTrace {
  std::vector<MetricRow> rows;

  // Rejects non-increasing step indices.
  void append(const MetricRow& row);
  std::string csv() const;
  bool operator==(const MetricTrace&) const = default;
};

bool operator==(const MetricRow& a, const MetricRow& b);

// ---- model and batches ---------------------------------------------------

// Everything a run reads or writes. `teacher` is the frozen pretrained
// denoiser; `student_denoiser` is a trainable copy present only for
// strategies that finetune the denoiser.
struct Model {
  TextEncoderParams teacher_encoder;
  TextEncoderParams student_encoder;
  DenoiserParams teacher;
  bool teacher_frozen = true;
  std::optional<DenoiserParams> student_denoiser;
  AdapterParams adapter;

  const DenoiserParams& student_path_denoiser() const { return student_denoiser ? *student_denoiser : teacher; }
  // Checkpoint groups: teacher_encoder.*, student_encoder.*, denoiser.*,
  // adapter.*. When a student denoiser exists it is saved as denoiser.*.
  ParamList named() const;
};

struct Batch {
  enum class Kind { kParallel, kCulture };

  Kind kind = Kind::kParallel;
  std::vector<Prompt> student_prompts;
  std::optional<std::vector<Prompt>> teacher;  // absent for culture batches
  Tensor images;                               // [n, G*G]

  // Counts every read so tests can prove culture steps never touch it.
  const std::vector<Prompt>& teacher_prompts() const;
  mutable std::size_t teacher_reads = 0;
};

Batch parallel_batch(const CorpusBundle& corpus, std::span<const std::size_t> indices);
Batch culture_batch(const CorpusBundle& corpus, std::span<const std::size_t> indices);

struct StepLosses {
  double total = 0.0;
  double flkd = 0.0;
  double lkd = 0.0;
  double sd = 0.0;
  double tkd = 0.0;
};

enum class Pass { kTeacher, kStudent };
using DrawObserver = std::function<void(Pass, const DiffusionDraw&)>;

// Learning rate at 1-based `step` under the config's decay rule.
struct TrainConfig;
double scheduled_lr(const TrainConfig& config, long step);

struct TrainConfig {
  long steps = 2000;
  double lr = 1e-3;
  bool cosine_decay = false;  // anneal lr to zero over `steps`
  std::size_t batch = 32;
  KDWeights weights;
  int hybrid_ratio = 3;  // parallel batches per culture batch
  long log_every = 100;
  long eval_every = 0;   // 0: evaluate only at the final step
  std::size_t samples_per_prompt = 5;
  std::size_t lora_rank = 4;
  std::vector<std::size_t> flkd_layers;  // empty: every block
};

// Owns optimizer state and the run's rng. One instance per training run.
class Trainer {
 public:
  Trainer(Model& model, Strategy strategy, const NoiseSchedule& schedule, const TrainConfig& config,
          std::uint64_t seed);

  StepLosses train_step(const Batch& batch);

  void set_draw_observer(DrawObserver observer) { observer_ = std::move(observer); }
  const Strategy& strategy() const { return strategy_; }
  std::size_t trainable_count() const;
  std::size_t total_count() const;
  Rng& rng() { return rng_; }

 private:
  Model& model_;
  Strategy strategy_;
  NoiseSchedule schedule_;
  TrainConfig config_;
  Rng rng_;
  std::vector<Tensor> trainable_;
  std::optional<Adam> adam_;
  DrawObserver observer_;
};

struct TrainResult {
  Model model;
  MetricTrace trace;
  std::size_t trainable_params = 0;
  std::size_t total_params = 0;
  double trainable_fraction() const {
    return total_params ? static_cast<double>(trainable_params) / static_cast<double>(total_params) : 0.0;
  }
};

// Optional per-log-row hook (CSV streaming).
using RowSink = std::function<void(const MetricRow&)>;

// Runs config.steps train_steps on batches sampled from `corpus`. The input
// model is copied; the teacher inside it is never modified.
TrainResult train(const Strategy& strategy, const CorpusBundle& corpus, const Model& init, const NoiseSchedule& s,
                  const TrainConfig& config, std::uint64_t seed, const RowSink& sink = {});

// ---- teacher pretraining -------------------------------------------------

struct TeacherResult {
  DenoiserParams denoiser;
  MetricTrace trace;
};

// Trains the denoiser alone on (teacher prompt, image) pairs with the
// denoising loss, conditioned on the frozen teacher encoder.
TeacherResult pretrain_teacher(const CorpusBundle& corpus, const TextEncoderParams& teacher_encoder,
                               const DenoiserConfig& arch, const NoiseSchedule& s, const TrainConfig& config,
                               std::uint64_t seed, const RowSink& sink = {});

// ---- denoiser variants ---------------------------------------------------

enum class VariantKind { kGaussianPerturb, kLoraMerged, kStyleShifted };

struct VariantOptions {
  double sigma = 0.01;       // gaussian-perturb
  long steps = 300;          // lora-merged / style-shifted finetune length
  double style_gain = 0.85;  // intensity remap p -> gain * p for style data
  double lr = 1e-3;
  std::size_t batch = 32;
  std::size_t lora_rank = 4;
};

// gaussian-perturb adds N(0, sigma^2) to every tensor. lora-merged trains
// key/value LoRA pairs on intensity-remapped teacher data and folds them in.
// style-shifted finetunes every denoiser tensor on the same remapped data.
DenoiserParams make_variant(const DenoiserParams& base, VariantKind kind, const VariantOptions& options,
                            const CorpusBundle& corpus, const TextEncoderParams& teacher_encoder,
                            const NoiseSchedule& s, std::uint64_t seed);

}  // namespace xlkd
