#include "xlkd/distill.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <cstdio>
#include <sstream>

#include "xlkd/evaluation.hpp"

namespace xlkd {

std::string_view strategy_name(StrategyTag tag) {
  switch (tag) {
    case StrategyTag::kFT: return "FT";
    case StrategyTag::kTKD: return "TKD";
    case StrategyTag::kULKD: return "ULKD";
    case StrategyTag::kUFKD: return "UFKD";
    case StrategyTag::kUTKD: return "UTKD";
    case StrategyTag::kUKD: return "UKD";
    case StrategyTag::kLORA: return "LORA";
    case StrategyTag::kKV: return "KV";
    case StrategyTag::kHybridUKD: return "HYBRID-UKD";
  }
  return "?";
}

StrategyTag parse_strategy(std::string_view name) {
  for (auto tag : {StrategyTag::kFT, StrategyTag::kTKD, StrategyTag::kULKD, StrategyTag::kUFKD, StrategyTag::kUTKD,
                   StrategyTag::kUKD, StrategyTag::kLORA, StrategyTag::kKV, StrategyTag::kHybridUKD}) {
    if (strategy_name(tag) == name) return tag;
  }
  throw StrategyError("unknown strategy '" + std::string(name) + "'");
}

bool glob_match(std::string_view pattern, std::string_view text) {
  std::size_t p = 0, t = 0, star = std::string_view::npos, mark = 0;
  while (t < text.size()) {
    if (p < pattern.size() && pattern[p] == '*') {
      star = p++;
      mark = t;
    } else if (p < pattern.size() && pattern[p] == text[t]) {
      ++p;
      ++t;
    } else if (star != std::string_view::npos) {
      p = star + 1;
      t = ++mark;
    } else {
      return false;
    }
  }
  while (p < pattern.size() && pattern[p] == '*') ++p;
  return p == pattern.size();
}

bool Strategy::trains(std::string_view group) const {
  return std::any_of(trainable.begin(), trainable.end(), [&](const auto& pat) { return glob_match(pat, group); });
}

bool Strategy::trains_denoiser() const {
  return std::any_of(trainable.begin(), trainable.end(), [](const auto& pat) { return starts_with(pat, "denoiser."); });
}

bool Strategy::is_kd() const {
  switch (tag) {
    case StrategyTag::kULKD:
    case StrategyTag::kUFKD:
    case StrategyTag::kUTKD:
    case StrategyTag::kUKD:
    case StrategyTag::kHybridUKD: return true;
    default: return false;
  }
}

bool Strategy::uses_denoising_loss() const {
  return tag == StrategyTag::kFT || tag == StrategyTag::kLORA || tag == StrategyTag::kKV;
}

Strategy make_strategy(StrategyTag tag) {
  Strategy s{tag, {"adapter.*"}};
  switch (tag) {
    case StrategyTag::kFT: s.trainable.push_back("denoiser.*"); break;
    case StrategyTag::kKV:
      s.trainable.push_back("denoiser.block*.w_k");
      s.trainable.push_back("denoiser.block*.w_v");
      break;
    case StrategyTag::kLORA: s.trainable.push_back("denoiser.block*.lora_*"); break;
    default: break;
  }
  return s;
}

void KDWeights::validate() const {
  if (lambda_fl < 0.0 || lambda_l < 0.0) throw std::invalid_argument("KD weights must be non-negative");
  if (lambda_fl == 0.0 && lambda_l == 0.0) throw std::invalid_argument("KD weights must not both be zero");
}

KDLosses kd_losses(const DenoiserOutput& teacher, const DenoiserOutput& student, const KDWeights& w,
                   std::span<const std::size_t> layers) {
  if (teacher.taps.size() != student.taps.size()) {
    throw ShapeError("kd_losses: teacher has " + std::to_string(teacher.taps.size()) + " taps, student " +
                     std::to_string(student.taps.size()));
  }
  if (teacher.eps_hat.requires_grad()) throw std::logic_error("kd_losses: teacher output must be detached");
  std::vector<std::size_t> selected(layers.begin(), layers.end());
  if (selected.empty()) {
    for (std::size_t l = 0; l < teacher.taps.size(); ++l) selected.push_back(l);
  }
  Tensor flkd;
  for (std::size_t l : selected) {
    if (l >= teacher.taps.size()) throw std::out_of_range("kd_losses: layer index out of range");
    if (teacher.taps[l].shape() != student.taps[l].shape()) {
      throw ShapeError("kd_losses: tap " + std::to_string(l) + " shapes differ");
    }
    const Tensor term = mse(student.taps[l], teacher.taps[l]);
    flkd = flkd.defined() ? add(flkd, term) : term;
  }
  const Tensor lkd = mse(student.eps_hat, teacher.eps_hat);
  const Tensor kd = add(scale(flkd, w.lambda_fl), scale(lkd, w.lambda_l));
  return {flkd, lkd, kd};
}

Tensor tkd_loss(const Tensor& adapted, const Tensor& teacher_emb) {
  if (adapted.shape() != teacher_emb.shape()) {
    throw ShapeError("tkd_loss: adapted " + shape_str(adapted.shape()) + " vs teacher " +
                     shape_str(teacher_emb.shape()));
  }
  return mse(adapted, teacher_emb);
}

// ---- metrics -------------------------------------------------------------

bool operator==(const MetricRow& a, const MetricRow& b) {
  return a.step == b.step && a.loss_total == b.loss_total && a.loss_flkd == b.loss_flkd && a.loss_lkd == b.loss_lkd &&
         a.loss_sd == b.loss_sd && a.eval_acc == b.eval_acc && a.eval_mse == b.eval_mse;
}

void MetricTrace::append(const MetricRow& row) {
  if (!rows.empty() && row.step <= rows.back().step) throw std::logic_error("metric trace steps must increase");
  rows.push_back(row);
}

std::string MetricTrace::csv() const {
  std::string out = std::string(kMetricsHeader) + "\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%ld,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g\n", r.step, r.loss_total, r.loss_flkd,
                  r.loss_lkd, r.loss_sd, r.eval_acc, r.eval_mse);
    out += buf;
  }
  return out;
}

// ---- model and batches ---------------------------------------------------

ParamList Model::named() const {
  ParamList out = teacher_encoder.named("teacher_encoder");
  for (auto& nt : student_encoder.named("student_encoder")) out.push_back(nt);
  for (auto nt : student_path_denoiser().named()) {
    nt.frozen = !student_denoiser && teacher_frozen;
    out.push_back(nt);
  }
  for (auto& nt : adapter.named()) out.push_back(nt);
  return out;
}

const std::vector<Prompt>& Batch::teacher_prompts() const {
  ++teacher_reads;
  if (!teacher) throw StrategyError("batch carries no teacher-language prompts");
  return *teacher;
}

namespace {

Tensor stack_images(const std::vector<const ImageSample*>& images) {
  const std::size_t p = images.front()->pixels.size();
  std::vector<double> data;
  data.reserve(images.size() * p);
  for (const auto* img : images) data.insert(data.end(), img->pixels.begin(), img->pixels.end());
  return Tensor({images.size(), p}, std::move(data));
}

}  // namespace

Batch parallel_batch(const CorpusBundle& corpus, std::span<const std::size_t> indices) {
  Batch b;
  b.kind = Batch::Kind::kParallel;
  b.teacher.emplace();
  std::vector<const ImageSample*> imgs;
  for (auto i : indices) {
    const auto& r = corpus.parallel.at(i);
    b.student_prompts.push_back(r.student);
    b.teacher->push_back(r.teacher);
    imgs.push_back(&r.image);
  }
  b.images = stack_images(imgs);
  return b;
}

Batch culture_batch(const CorpusBundle& corpus, std::span<const std::size_t> indices) {
  Batch b;
  b.kind = Batch::Kind::kCulture;
  std::vector<const ImageSample*> imgs;
  for (auto i : indices) {
    const auto& r = corpus.culture.at(i);
    b.student_prompts.push_back(r.student);
    imgs.push_back(&r.image);
  }
  b.images = stack_images(imgs);
  return b;
}

double scheduled_lr(const TrainConfig& config, long step) {
  if (!config.cosine_decay || config.steps <= 1) return config.lr;
  const double frac = static_cast<double>(step - 1) / static_cast<double>(config.steps - 1);
  return 0.5 * config.lr * (1.0 + std::cos(std::numbers::pi * frac));
}

// ---- trainer -------------------------------------------------------------

Trainer::Trainer(Model& model, Strategy strategy, const NoiseSchedule& schedule, const TrainConfig& config,
                 std::uint64_t seed)
    : model_(model), strategy_(std::move(strategy)), schedule_(schedule), config_(config), rng_(seed) {
  if (strategy_.is_kd()) config_.weights.validate();

  if (strategy_.trains_denoiser() && !model_.student_denoiser) {
    model_.student_denoiser = model_.teacher.clone();
    if (strategy_.tag == StrategyTag::kLORA && !model_.student_denoiser->has_lora()) {
      add_lora(*model_.student_denoiser, config_.lora_rank, seed ^ 0x10a4u);
    }
  }

  // Teacher tensors never train, even when a student copy exists.
  for (auto& nt : model_.teacher.named()) nt.tensor.set_requires_grad(false);
  for (auto& nt : model_.named()) {
    const bool on = strategy_.trains(nt.name);
    if (on && nt.frozen) throw FrozenGroupError("strategy " + std::string(strategy_name(strategy_.tag)) +
                                                " may not train frozen group " + nt.name);
    nt.tensor.set_requires_grad(on);
    if (on) trainable_.push_back(nt.tensor);
  }
  if (trainable_.empty()) throw StrategyError("strategy selects no trainable parameters");
  adam_.emplace(trainable_, AdamOptions{config_.lr});
}

std::size_t Trainer::trainable_count() const {
  std::size_t n = 0;
  for (const auto& t : trainable_) n += t.numel();
  return n;
}

std::size_t Trainer::total_count() const { return param_count(model_.named()); }

StepLosses Trainer::train_step(const Batch& batch) {
  const bool culture = batch.kind == Batch::Kind::kCulture;
  if (culture && !strategy_.accepts_culture()) {
    throw StrategyError("culture batch under non-hybrid strategy " + std::string(strategy_name(strategy_.tag)));
  }
  const std::size_t n = batch.student_prompts.size();
  const std::size_t pixels = batch.images.dim(1);
  const DiffusionDraw draw = sample_draw(n, pixels, schedule_, rng_);
  const Tensor x_t = forward_diffuse_rows(batch.images, draw.t, draw.eps, schedule_);

  StepLosses rec;
  adam_->zero_grad();
  Graph graph;
  GraphScope scope(graph);

  const Tensor adapted = apply_adapter(model_.adapter, encode_batch(model_.student_encoder, batch.student_prompts));
  Tensor loss;

  if (culture || strategy_.uses_denoising_loss()) {
    if (observer_) observer_(Pass::kStudent, draw);
    const Tensor eps_hat = denoise(model_.student_path_denoiser(), x_t, draw.t, adapted).eps_hat;
    loss = mse(draw.eps, eps_hat);
    rec.sd = loss.item();
  } else {
    const auto& teacher_prompts = batch.teacher_prompts();
    Tensor teacher_cond;
    DenoiserOutput teacher_out;
    {
      NoGradScope detached;
      teacher_cond = encode_batch(model_.teacher_encoder, teacher_prompts);
      if (strategy_.tag != StrategyTag::kTKD) {
        if (observer_) observer_(Pass::kTeacher, draw);
        teacher_out = denoise(model_.teacher, x_t, draw.t, teacher_cond);
      }
    }
    if (strategy_.tag == StrategyTag::kTKD) {
      loss = tkd_loss(adapted, teacher_cond);
      rec.tkd = loss.item();
    } else {
      if (observer_) observer_(Pass::kStudent, draw);
      const DenoiserOutput student_out = denoise(model_.teacher, x_t, draw.t, adapted);
      const KDLosses kd = kd_losses(teacher_out, student_out, config_.weights, config_.flkd_layers);
      // Terms outside the strategy's objective are reported as 0.
      if (strategy_.tag != StrategyTag::kULKD) rec.flkd = kd.flkd.item();
      if (strategy_.tag != StrategyTag::kUFKD) rec.lkd = kd.lkd.item();
      switch (strategy_.tag) {
        case StrategyTag::kUFKD: loss = scale(kd.flkd, config_.weights.lambda_fl); break;
        case StrategyTag::kULKD: loss = scale(kd.lkd, config_.weights.lambda_l); break;
        case StrategyTag::kUTKD: {
          const Tensor t = tkd_loss(adapted, teacher_cond);
          rec.tkd = t.item();
          loss = add(kd.kd, t);
          break;
        }
        default: loss = kd.kd; break;
      }
    }
  }
  rec.total = loss.item();
  if (loss.requires_grad()) backward(graph, loss);
  adam_->set_lr(scheduled_lr(config_, adam_->steps() + 1));
  adam_->step();
  return rec;
}

// ---- training loop -------------------------------------------------------

namespace {

Model deep_copy(const Model& m) {
  Model out = m;
  out.adapter = m.adapter.clone();
  if (m.student_denoiser) out.student_denoiser = m.student_denoiser->clone();
  return out;
}

std::vector<std::size_t> sample_indices(Rng& rng, std::size_t pool, std::size_t count) {
  std::vector<std::size_t> idx(count);
  for (auto& i : idx) i = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(pool) - 1));
  return idx;
}

bool is_log_step(long step, long total, long every) { return step == total || (every > 0 && step % every == 0); }
bool is_eval_step(long step, long total, long every) { return step == total || (every > 0 && step % every == 0); }

}  // namespace

TrainResult train(const Strategy& strategy, const CorpusBundle& corpus, const Model& init, const NoiseSchedule& s,
                  const TrainConfig& config, std::uint64_t seed, const RowSink& sink) {
  if (strategy.accepts_culture() && corpus.culture.empty()) {
    throw StrategyError("HYBRID-UKD requires culture records in the corpus");
  }
  if (corpus.parallel.empty()) throw StrategyError("corpus has no parallel records");
  TrainResult result{deep_copy(init), {}, 0, 0};
  Trainer trainer(result.model, strategy, s, config, seed);
  result.trainable_params = trainer.trainable_count();
  result.total_params = trainer.total_count();

  const auto& catalog = corpus.config.catalog;
  const auto eval_prompts = parallel_eval_prompts(catalog, Language::kStudent);
  Rng batch_rng(seed ^ 0x5eedba7c4ull);
  const int ratio = std::max(1, config.hybrid_ratio);

  double acc_total = 0, acc_flkd = 0, acc_lkd = 0, acc_sd = 0;
  long acc_n = 0;
  for (long step = 1; step <= config.steps; ++step) {
    const bool culture_step = strategy.accepts_culture() && (step % (ratio + 1) == 0);
    StepLosses l;
    if (culture_step) {
      const auto idx = sample_indices(batch_rng, corpus.culture.size(), config.batch);
      l = trainer.train_step(culture_batch(corpus, idx));
    } else {
      const auto idx = sample_indices(batch_rng, corpus.parallel.size(), config.batch);
      l = trainer.train_step(parallel_batch(corpus, idx));
    }
    acc_total += l.total;
    acc_flkd += l.flkd;
    acc_lkd += l.lkd;
    acc_sd += l.sd;
    ++acc_n;

    if (!is_log_step(step, config.steps, config.log_every) && !is_eval_step(step, config.steps, config.eval_every)) {
      continue;
    }
    MetricRow row;
    row.step = step;
    row.loss_total = acc_total / acc_n;
    row.loss_flkd = acc_flkd / acc_n;
    row.loss_lkd = acc_lkd / acc_n;
    row.loss_sd = acc_sd / acc_n;
    acc_total = acc_flkd = acc_lkd = acc_sd = 0;
    acc_n = 0;
    if (is_eval_step(step, config.steps, config.eval_every)) {
      const auto report = fidelity_eval(result.model.student_path_denoiser(),
                                        student_cond_fn(result.model.student_encoder, result.model.adapter),
                                        eval_prompts, catalog, s, config.samples_per_prompt,
                                        seed ^ (0xe7a1ull + static_cast<std::uint64_t>(step)));
      row.eval_acc = report.fidelity_acc;
      row.eval_mse = report.mean_mse;
    }
    result.trace.append(row);
    if (sink) sink(row);
  }
  for (auto& nt : result.model.named()) nt.tensor.set_requires_grad(false);
  return result;
}

// ---- teacher pretraining -------------------------------------------------

TeacherResult pretrain_teacher(const CorpusBundle& corpus, const TextEncoderParams& teacher_encoder,
                               const DenoiserConfig& arch, const NoiseSchedule& s, const TrainConfig& config,
                               std::uint64_t seed, const RowSink& sink) {
  if (corpus.parallel.empty()) throw std::invalid_argument("pretrain_teacher: corpus has no parallel records");
  if (static_cast<std::size_t>(teacher_encoder.dim) != arch.cond_dim) {
    throw ConditionDimError("pretrain_teacher: teacher encoder width differs from denoiser condition width");
  }
  TeacherResult result{init_denoiser(arch, seed), {}};
  std::vector<Tensor> params;
  for (auto& nt : result.denoiser.named()) {
    nt.tensor.set_requires_grad(true);
    params.push_back(nt.tensor);
  }
  Adam adam(params, AdamOptions{config.lr});
  Rng rng(seed ^ 0x7eac4e5ull);
  const auto& catalog = corpus.config.catalog;
  const auto eval_prompts = parallel_eval_prompts(catalog, Language::kTeacher);
  const EpsFn fn = eps_fn(result.denoiser);

  double acc = 0;
  long acc_n = 0;
  for (long step = 1; step <= config.steps; ++step) {
    const auto idx = sample_indices(rng, corpus.parallel.size(), config.batch);
    const Batch batch = parallel_batch(corpus, idx);
    const Tensor cond = encode_batch(teacher_encoder, batch.teacher_prompts());
    adam.zero_grad();
    Graph graph;
    double value;
    {
      GraphScope scope(graph);
      const Tensor loss = denoising_loss(fn, batch.images, cond, s, rng);
      value = loss.item();
      backward(graph, loss);
    }
    adam.set_lr(scheduled_lr(config, step));
    adam.step();
    acc += value;
    ++acc_n;
    if (!is_log_step(step, config.steps, config.log_every) && !is_eval_step(step, config.steps, config.eval_every)) {
      continue;
    }
    MetricRow row;
    row.step = step;
    row.loss_total = row.loss_sd = acc / acc_n;
    acc = 0;
    acc_n = 0;
    if (is_eval_step(step, config.steps, config.eval_every)) {
      const auto report = fidelity_eval(result.denoiser, teacher_cond_fn(teacher_encoder), eval_prompts, catalog, s,
                                        config.samples_per_prompt, seed ^ (0xe7a1ull + static_cast<std::uint64_t>(step)));
      row.eval_acc = report.fidelity_acc;
      row.eval_mse = report.mean_mse;
    }
    result.trace.append(row);
    if (sink) sink(row);
  }
  for (auto& t : params) t.set_requires_grad(false);
  return result;
}

// ---- variants ------------------------------------------------------------

DenoiserParams make_variant(const DenoiserParams& base, VariantKind kind, const VariantOptions& options,
                            const CorpusBundle& corpus, const TextEncoderParams& teacher_encoder,
                            const NoiseSchedule& s, std::uint64_t seed) {
  if (kind == VariantKind::kGaussianPerturb) return perturb_gaussian(base, options.sigma, seed);

  DenoiserParams work = base.clone();
  if (kind == VariantKind::kLoraMerged) add_lora(work, options.lora_rank, seed ^ 0x10a4u);
  std::vector<Tensor> params;
  for (auto& nt : work.named()) {
    const bool on = kind == VariantKind::kStyleShifted || nt.name.find(".lora_") != std::string::npos;
    nt.tensor.set_requires_grad(on);
    if (on) params.push_back(nt.tensor);
  }
  Adam adam(params, AdamOptions{options.lr});
  Rng rng(seed ^ 0x5717eull);
  const EpsFn fn = eps_fn(work);
  for (long step = 1; step <= options.steps; ++step) {
    const auto idx = sample_indices(rng, corpus.parallel.size(), options.batch);
    const Batch batch = parallel_batch(corpus, idx);
    std::vector<double> remapped(batch.images.data().begin(), batch.images.data().end());
    for (auto& v : remapped) v *= options.style_gain;
    const Tensor images(batch.images.shape(), std::move(remapped));
    const Tensor cond = encode_batch(teacher_encoder, batch.teacher_prompts());
    adam.zero_grad();
    Graph graph;
    GraphScope scope(graph);
    const Tensor loss = denoising_loss(fn, images, cond, s, rng);
    backward(graph, loss);
    adam.step();
  }
  for (auto& t : params) t.set_requires_grad(false);
  return kind == VariantKind::kLoraMerged ? merge_lora(work) : work;
}

}  // namespace xlkd
