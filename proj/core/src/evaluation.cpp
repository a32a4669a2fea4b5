#include "xlkd/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>

namespace xlkd {

bool operator==(const PromptResult& a, const PromptResult& b) {
  return a.prompt == b.prompt && a.target_id == b.target_id && a.nearest_id == b.nearest_id &&
         a.correct == b.correct && a.culture == b.culture && a.mse_to_canonical == b.mse_to_canonical;
}

bool EvalReport::operator==(const EvalReport& o) const {
  return per_prompt == o.per_prompt && fidelity_acc == o.fidelity_acc && culture_acc == o.culture_acc &&
         mean_mse == o.mean_mse && parallel_count == o.parallel_count && culture_count == o.culture_count;
}

CondFn teacher_cond_fn(const TextEncoderParams& teacher_encoder) {
  return [&teacher_encoder](std::span<const Prompt> prompts) { return encode_batch(teacher_encoder, prompts); };
}

CondFn student_cond_fn(const TextEncoderParams& student_encoder, const AdapterParams& adapter) {
  return [&student_encoder, &adapter](std::span<const Prompt> prompts) {
    NoGradScope no_grad;
    return apply_adapter(adapter, encode_batch(student_encoder, prompts));
  };
}

std::vector<ImageSample> canonical_renders(const Catalog& catalog, std::size_t side) {
  std::vector<ImageSample> out;
  for (const auto& s : catalog.all_semantics()) out.push_back(render(s, side, catalog));
  return out;
}

namespace {

double mse_between(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s / static_cast<double>(a.size());
}

}  // namespace

int nearest_canonical(std::span<const double> pixels, std::span<const ImageSample> canon) {
  if (canon.empty()) throw EvaluationError("nearest_canonical: empty catalog");
  int best = 0;
  double best_mse = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < canon.size(); ++i) {
    const double m = mse_between(pixels, canon[i].pixels);
    if (m < best_mse) {
      best_mse = m;
      best = static_cast<int>(i);
    }
  }
  return best;
}

EvalReport score_images(const Tensor& images, std::span<const Prompt> prompts, const Catalog& catalog,
                        std::size_t samples_per_prompt) {
  if (prompts.empty()) throw EvaluationError("score_images: no prompts");
  if (catalog.concept_count() < 1) throw EvaluationError("score_images: empty catalog");
  const std::size_t px = images.dim(1);
  const auto side = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(px))));
  const auto canon = canonical_renders(catalog, side);
  const auto data = images.data();

  EvalReport rep;
  std::size_t par_ok = 0, cul_ok = 0;
  double mse_sum = 0.0;
  for (std::size_t p = 0; p < prompts.size(); ++p) {
    PromptResult r;
    r.prompt = prompts[p];
    const Semantics target = catalog.decode(prompts[p]);
    r.target_id = catalog.semantics_id(target);
    r.culture = catalog.is_culture(target);
    std::map<int, std::size_t> votes;
    double mse_acc = 0.0;
    for (std::size_t k = 0; k < samples_per_prompt; ++k) {
      const auto row = data.subspan((p * samples_per_prompt + k) * px, px);
      ++votes[nearest_canonical(row, canon)];
      mse_acc += mse_between(row, canon[static_cast<std::size_t>(r.target_id)].pixels);
    }
    std::size_t best_votes = 0;
    for (const auto& [id, count] : votes) {  // ascending id: ties keep the lowest
      if (count > best_votes) {
        best_votes = count;
        r.nearest_id = id;
      }
    }
    r.correct = r.nearest_id == r.target_id;
    r.mse_to_canonical = mse_acc / static_cast<double>(samples_per_prompt);
    mse_sum += r.mse_to_canonical;
    if (r.culture) {
      ++rep.culture_count;
      cul_ok += r.correct;
    } else {
      ++rep.parallel_count;
      par_ok += r.correct;
    }
    rep.per_prompt.push_back(std::move(r));
  }
  rep.fidelity_acc = rep.parallel_count ? static_cast<double>(par_ok) / static_cast<double>(rep.parallel_count) : 0.0;
  rep.culture_acc = rep.culture_count ? static_cast<double>(cul_ok) / static_cast<double>(rep.culture_count) : 0.0;
  rep.mean_mse = mse_sum / static_cast<double>(prompts.size());
  return rep;
}

EvalReport fidelity_eval(const DenoiserParams& denoiser, const CondFn& cond, std::span<const Prompt> prompts,
                         const Catalog& catalog, const NoiseSchedule& s, std::size_t samples_per_prompt,
                         std::uint64_t seed) {
  if (prompts.empty()) throw EvaluationError("fidelity_eval: no prompts");
  if (samples_per_prompt < 1) throw EvaluationError("fidelity_eval: samples_per_prompt must be >= 1");
  NoGradScope no_grad;
  const Tensor base = cond(prompts);  // [n, L, d]
  const std::size_t n = base.dim(0), len = base.dim(1), d = base.dim(2);
  std::vector<double> rep;
  rep.reserve(n * samples_per_prompt * len * d);
  const auto bd = base.data();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < samples_per_prompt; ++k) {
      rep.insert(rep.end(), bd.begin() + static_cast<std::ptrdiff_t>(i * len * d),
                 bd.begin() + static_cast<std::ptrdiff_t>((i + 1) * len * d));
    }
  }
  const Tensor conds({n * samples_per_prompt, len, d}, std::move(rep));
  Rng rng(seed);
  const Tensor images = ddpm_sample(eps_fn(denoiser), conds, denoiser.config.pixels(), s, rng);
  return score_images(images, prompts, catalog, samples_per_prompt);
}

std::vector<Prompt> parallel_eval_prompts(const Catalog& catalog, Language language) {
  std::vector<Prompt> out;
  for (const auto& sem : catalog.parallel_semantics()) {
    out.push_back(language == Language::kTeacher ? catalog.teacher_prompt(sem) : catalog.student_prompt(sem));
  }
  return out;
}

std::vector<Prompt> culture_eval_prompts(const Catalog& catalog) {
  std::vector<Prompt> out;
  for (const auto& sem : catalog.culture_semantics()) out.push_back(catalog.student_prompt(sem));
  return out;
}

// ---- experiments ---------------------------------------------------------

std::optional<ArmRow> AblationTable::find(StrategyTag tag, std::uint64_t seed) const {
  for (const auto& r : rows) {
    if (r.strategy == tag && r.seed == seed) return r;
  }
  return std::nullopt;
}

std::string AblationTable::csv() const {
  std::string out = "strategy,seed,fidelity_acc,culture_acc,loss_total,loss_flkd,loss_lkd,loss_sd\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%s,%llu,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g\n",
                  std::string(strategy_name(r.strategy)).c_str(), static_cast<unsigned long long>(r.seed),
                  r.fidelity_acc, r.culture_acc, r.final_losses.loss_total, r.final_losses.loss_flkd,
                  r.final_losses.loss_lkd, r.final_losses.loss_sd);
    out += buf;
  }
  for (const auto& m : means) {
    std::snprintf(buf, sizeof buf, "%s,mean,%.10g,%.10g,,,,\n", std::string(strategy_name(m.strategy)).c_str(),
                  m.fidelity_acc, m.culture_acc);
    out += buf;
  }
  return out;
}

AblationTable ablation_run(std::span<const StrategyTag> strategies, const CorpusBundle& corpus,
                           const ModelFactory& make_model, const NoiseSchedule& s, const TrainConfig& config,
                           std::span<const std::uint64_t> seeds) {
  if (strategies.empty()) throw std::invalid_argument("ablation_run: no strategies");
  if (seeds.empty()) throw std::invalid_argument("ablation_run: no seeds");
  const auto& catalog = corpus.config.catalog;
  const auto par = parallel_eval_prompts(catalog, Language::kStudent);
  const auto cul = culture_eval_prompts(catalog);

  AblationTable table;
  for (auto tag : strategies) {
    StrategyMean mean{tag, 0.0, 0.0};
    for (auto seed : seeds) {
      TrainConfig arm_cfg = config;
      arm_cfg.eval_every = 0;
      const TrainResult run = train(make_strategy(tag), corpus, make_model(seed), s, arm_cfg, seed);
      std::vector<Prompt> prompts = par;
      prompts.insert(prompts.end(), cul.begin(), cul.end());
      const auto report = fidelity_eval(run.model.student_path_denoiser(),
                                        student_cond_fn(run.model.student_encoder, run.model.adapter), prompts,
                                        catalog, s, config.samples_per_prompt, seed ^ 0xab1a7e0ull);
      ArmRow row{tag, seed, report.fidelity_acc, report.culture_acc,
                 run.trace.rows.empty() ? MetricRow{} : run.trace.rows.back()};
      mean.fidelity_acc += row.fidelity_acc;
      mean.culture_acc += row.culture_acc;
      table.rows.push_back(row);
    }
    mean.fidelity_acc /= static_cast<double>(seeds.size());
    mean.culture_acc /= static_cast<double>(seeds.size());
    table.means.push_back(mean);
  }
  return table;
}

PluginReport plugin_check(const AdapterParams& adapter, const TextEncoderParams& student_encoder,
                          const DenoiserParams& base, const DenoiserParams& variant,
                          std::span<const Prompt> prompts, const Catalog& catalog, const NoiseSchedule& s,
                          std::size_t samples_per_prompt, std::uint64_t seed) {
  const CondFn cond = student_cond_fn(student_encoder, adapter);
  const auto rb = fidelity_eval(base, cond, prompts, catalog, s, samples_per_prompt, seed);
  const auto rv = fidelity_eval(variant, cond, prompts, catalog, s, samples_per_prompt, seed);
  PluginReport out{rb.fidelity_acc, rv.fidelity_acc, 0.0};
  if (out.acc_base == 0.0) throw EvaluationError("plugin_check: adapter scores zero on the base denoiser");
  out.degradation = 1.0 - out.acc_variant / out.acc_base;
  return out;
}

std::vector<SweepRow> adapter_sweep(std::span<const std::vector<int>> hidden_configs, const CorpusBundle& corpus,
                                    const std::function<Model(const std::vector<int>&)>& make_model,
                                    const NoiseSchedule& s, const TrainConfig& config, std::uint64_t seed,
                                    double threshold) {
  if (hidden_configs.size() < 2) throw std::invalid_argument("adapter_sweep: need at least two configurations");
  std::vector<SweepRow> rows;
  for (const auto& hidden : hidden_configs) {
    const Model init = make_model(hidden);
    const TrainResult run = train(make_strategy(StrategyTag::kUKD), corpus, init, s, config, seed);
    SweepRow row;
    row.hidden = hidden;
    row.param_count = init.adapter.parameter_count();
    for (const auto& r : run.trace.rows) {
      if (r.eval_acc >= 0.0) {
        row.final_acc = r.eval_acc;
        if (!row.steps_to_threshold && r.eval_acc >= threshold) row.steps_to_threshold = r.step;
      }
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string sweep_csv(std::span<const SweepRow> rows) {
  std::string out = "hidden,param_count,steps_to_threshold,final_acc\n";
  char buf[128];
  for (const auto& r : rows) {
    std::string hidden;
    for (std::size_t i = 0; i < r.hidden.size(); ++i) hidden += (i ? ";" : "") + std::to_string(r.hidden[i]);
    std::snprintf(buf, sizeof buf, ",%zu,%s,%.10g\n", r.param_count,
                  r.steps_to_threshold ? std::to_string(*r.steps_to_threshold).c_str() : "never", r.final_acc);
    out += hidden + buf;
  }
  return out;
}

}  // namespace xlkd
