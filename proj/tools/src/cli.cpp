#include "xlkd/cli.hpp"

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "xlkd/checkpoint.hpp"
#include "xlkd/config.hpp"
#include "xlkd/evaluation.hpp"
#include "xlkd/io.hpp"
#include "xlkd/rng.hpp"

namespace fs = std::filesystem;

namespace xlkd::cli {

namespace {

struct Options {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::string checkpoint;
  std::string corpus;
  std::string adapter;
  std::string strategy;
  std::string variant = "all";
  std::string language;
  int concept_id = 0;
  std::size_t count = 0;
};

class RuntimeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

RunConfig resolve_config(const Options& o) {
  RunConfig c = o.config.empty() ? parse_config("") : load_config(o.config);
  if (o.seed) c.seed = *o.seed;
  if (!o.strategy.empty()) c = parse_config("train.strategy = " + o.strategy, c);
  c.validate();
  return c;
}

void prepare_out(const Options& o, const RunConfig& c) {
  fs::create_directories(o.out);
  io::write_atomic(fs::path(o.out) / "config.effective.txt", dump_config(c));
}

CorpusBundle get_corpus(const Options& o, const RunConfig& c) {
  if (!o.corpus.empty()) return load_corpus(o.corpus);
  return gen_corpus(c.corpus_config(), derive_seed(c.seed, SeedStream::kCorpus));
}

ParamList read_checkpoint(const std::string& path, const char* what) {
  if (path.empty()) throw RuntimeError(std::string("--checkpoint is required (") + what + ")");
  if (!fs::exists(path)) throw RuntimeError(std::string("missing ") + what + " checkpoint: " + path);
  return load_checkpoint(path);
}

bool has_prefix(const ParamList& p, std::string_view prefix) { return !select_groups(p, prefix).empty(); }

// Everything a checkpoint holds, with absent encoders rebuilt from the seed.
struct Loaded {
  Model model;
  bool has_adapter = false;
};

Loaded load_model(const RunConfig& c, const ParamList& params) {
  Loaded out;
  if (!has_prefix(params, "denoiser.")) throw RuntimeError("checkpoint has no denoiser.* groups");
  out.model.teacher = denoiser_from_params(c.denoiser_config(), select_groups(params, "denoiser."));
  out.model.teacher_frozen = select_groups(params, "denoiser.").front().frozen;
  out.model.teacher_encoder = has_prefix(params, "teacher_encoder.")
                                  ? encoder_from_params(params, "teacher_encoder", 0)
                                  : make_teacher_encoder(c);
  out.model.student_encoder = has_prefix(params, "student_encoder.")
                                  ? encoder_from_params(params, "student_encoder", c.catalog.student_offset())
                                  : make_student_encoder(c);
  out.has_adapter = has_prefix(params, "adapter.");
  out.model.adapter = out.has_adapter ? adapter_from_params(select_groups(params, "adapter."))
                                      : make_adapter(c, derive_seed(c.seed, SeedStream::kAdapterInit), c.adapter_hidden);
  return out;
}

ParamList teacher_groups(const TextEncoderParams& enc, const DenoiserParams& dn) {
  ParamList out = enc.named("teacher_encoder");
  for (auto nt : dn.named()) {
    nt.frozen = true;
    out.push_back(nt);
  }
  return out;
}

void write_text(const Options& o, const std::string& name, const std::string& text) {
  io::write_atomic(fs::path(o.out) / name, text);
}

std::string prompt_str(const Prompt& p) {
  std::string s;
  for (std::size_t i = 0; i < p.tokens.size(); ++i) s += (i ? " " : "") + std::to_string(p.tokens[i]);
  return s;
}

std::string eval_csv(const EvalReport& r) {
  std::string out = "prompt,target_id,nearest_id,correct,culture,mse\n";
  char buf[160];
  for (const auto& p : r.per_prompt) {
    std::snprintf(buf, sizeof buf, "%s,%d,%d,%d,%d,%.10g\n", prompt_str(p.prompt).c_str(), p.target_id, p.nearest_id,
                  p.correct ? 1 : 0, p.culture ? 1 : 0, p.mse_to_canonical);
    out += buf;
  }
  return out;
}

std::string kv(const std::string& k, double v) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "%s = %.10g\n", k.c_str(), v);
  return buf;
}

// ---- commands ------------------------------------------------------------

int cmd_gen_data(const Options& o) {
  const RunConfig c = resolve_config(o);
  prepare_out(o, c);
  const auto corpus = gen_corpus(c.corpus_config(), derive_seed(c.seed, SeedStream::kCorpus));
  save_corpus(corpus, fs::path(o.out) / "corpus.xlkd");
  std::printf("corpus: %zu parallel, %zu culture records\n", corpus.parallel.size(), corpus.culture.size());
  return kExitOk;
}

int cmd_pretrain(const Options& o) {
  const RunConfig c = resolve_config(o);
  prepare_out(o, c);
  const auto corpus = get_corpus(o, c);
  const auto enc = make_teacher_encoder(c);
  const auto res = pretrain_teacher(corpus, enc, c.denoiser_config(), c.schedule(), c.teacher_config(),
                                    derive_seed(c.seed, SeedStream::kDenoiserInit));
  write_text(o, "metrics.csv", res.trace.csv());
  save_checkpoint(teacher_groups(enc, res.denoiser), fs::path(o.out) / "teacher.ckpt");
  if (!res.trace.rows.empty()) std::printf("teacher fidelity %.4f\n", res.trace.rows.back().eval_acc);
  return kExitOk;
}

int cmd_train(const Options& o) {
  const RunConfig c = resolve_config(o);
  const auto teacher = load_model(c, read_checkpoint(o.checkpoint, "teacher"));
  prepare_out(o, c);
  const auto corpus = get_corpus(o, c);
  Model init = make_model(c, teacher.model.teacher, derive_seed(c.seed, SeedStream::kAdapterInit));
  init.teacher_encoder = teacher.model.teacher_encoder;
  init.teacher_frozen = teacher.model.teacher_frozen;
  const auto res = train(make_strategy(c.strategy), corpus, init, c.schedule(), c.train_config(),
                         derive_seed(c.seed, SeedStream::kTrain));
  write_text(o, "metrics.csv", res.trace.csv());
  save_checkpoint(res.model.named(), fs::path(o.out) / "model.ckpt");
  save_checkpoint(res.model.adapter.named(), fs::path(o.out) / "adapter.ckpt");
  std::string report = "strategy = " + std::string(strategy_name(c.strategy)) + "\n";
  report += "trainable_params = " + std::to_string(res.trainable_params) + "\n";
  report += "total_params = " + std::to_string(res.total_params) + "\n";
  report += kv("trainable_fraction", res.trainable_fraction());
  if (!res.trace.rows.empty()) report += kv("final_fidelity", res.trace.rows.back().eval_acc);
  write_text(o, "report.txt", report);
  std::printf("%s", report.c_str());
  return kExitOk;
}

int cmd_ablate(const Options& o) {
  const RunConfig c = resolve_config(o);
  const auto teacher = load_model(c, read_checkpoint(o.checkpoint, "teacher"));
  prepare_out(o, c);
  const auto corpus = get_corpus(o, c);
  const ModelFactory factory = [&](std::uint64_t seed) {
    Model m = make_model(c, teacher.model.teacher, derive_seed(seed, SeedStream::kAdapterInit));
    m.teacher_encoder = teacher.model.teacher_encoder;
    return m;
  };
  std::vector<std::uint64_t> seeds;
  for (auto s : c.eval_seeds) seeds.push_back(derive_seed(c.seed + s, SeedStream::kTrain));
  const auto table = ablation_run(c.ablate_strategies, corpus, factory, c.schedule(), c.train_config(), seeds);
  write_text(o, "ablation.csv", table.csv());
  for (const auto& m : table.means) {
    std::printf("%-10s fidelity %.4f culture %.4f\n", std::string(strategy_name(m.strategy)).c_str(), m.fidelity_acc,
                m.culture_acc);
  }
  return kExitOk;
}

int cmd_eval(const Options& o) {
  const RunConfig c = resolve_config(o);
  const auto loaded = load_model(c, read_checkpoint(o.checkpoint, "model"));
  prepare_out(o, c);
  const bool teacher_lang = o.language.empty() ? !loaded.has_adapter : o.language == "teacher";
  if (!teacher_lang && o.language != "" && o.language != "student") {
    throw ConfigError("--language", "expected teacher or student");
  }
  const auto& m = loaded.model;
  std::vector<Prompt> prompts = parallel_eval_prompts(c.catalog, teacher_lang ? Language::kTeacher : Language::kStudent);
  if (!teacher_lang) {
    const auto cul = culture_eval_prompts(c.catalog);
    prompts.insert(prompts.end(), cul.begin(), cul.end());
  }
  const CondFn cond = teacher_lang ? teacher_cond_fn(m.teacher_encoder) : student_cond_fn(m.student_encoder, m.adapter);
  const auto rep = fidelity_eval(m.teacher, cond, prompts, c.catalog, c.schedule(), c.samples_per_prompt,
                                 derive_seed(c.seed, SeedStream::kEval));
  write_text(o, "eval.csv", eval_csv(rep));
  const std::string summary = std::string("language = ") + (teacher_lang ? "teacher" : "student") + "\n" +
                              kv("fidelity_acc", rep.fidelity_acc) + kv("culture_acc", rep.culture_acc) +
                              kv("mean_mse", rep.mean_mse);
  write_text(o, "summary.txt", summary);
  std::printf("%s", summary.c_str());
  return kExitOk;
}

int cmd_sample(const Options& o) {
  const RunConfig c = resolve_config(o);
  const auto loaded = load_model(c, read_checkpoint(o.checkpoint, "model"));
  prepare_out(o, c);
  if (o.concept_id < 0 || o.concept_id >= c.catalog.concept_count()) {
    throw ConfigError("--concept", "semantics id out of range");
  }
  const Semantics sem = c.catalog.semantics_from_id(o.concept_id);
  const bool teacher_lang = o.language.empty() ? !loaded.has_adapter : o.language == "teacher";
  if (teacher_lang && c.catalog.is_culture(sem)) throw RuntimeError("culture concepts have no teacher prompt");
  const Prompt p = teacher_lang ? c.catalog.teacher_prompt(sem) : c.catalog.student_prompt(sem);
  const auto& m = loaded.model;
  const CondFn cond = teacher_lang ? teacher_cond_fn(m.teacher_encoder) : student_cond_fn(m.student_encoder, m.adapter);
  const std::size_t count = o.count ? o.count : c.samples_per_prompt;
  const std::vector<Prompt> prompts(count, p);
  Rng rng(derive_seed(c.seed, SeedStream::kEval));
  const Tensor images = ddpm_sample(eps_fn(m.teacher), cond(prompts), c.G * c.G, c.schedule(), rng);
  const auto canon = canonical_renders(c.catalog, c.G);
  const auto id = std::to_string(o.concept_id);
  io::write_atomic(fs::path(o.out) / ("canonical_" + id + ".pgm"),
                   io::encode_pgm(canon[static_cast<std::size_t>(o.concept_id)].pixels, c.G));
  for (std::size_t k = 0; k < count; ++k) {
    const auto row = images.data().subspan(k * c.G * c.G, c.G * c.G);
    io::write_atomic(fs::path(o.out) / ("sample_" + id + "_" + std::to_string(k) + ".pgm"), io::encode_pgm(row, c.G));
    std::printf("sample %zu -> nearest %d\n", k, nearest_canonical(row, canon));
  }
  return kExitOk;
}

int cmd_plugin(const Options& o) {
  const RunConfig c = resolve_config(o);
  const auto base = load_model(c, read_checkpoint(o.checkpoint, "teacher"));
  const ParamList adapter_params = read_checkpoint(o.adapter, "adapter");
  if (!has_prefix(adapter_params, "adapter.")) throw RuntimeError("adapter checkpoint has no adapter.* groups");
  const AdapterParams adapter = adapter_from_params(select_groups(adapter_params, "adapter."));
  const TextEncoderParams student = has_prefix(adapter_params, "student_encoder.")
                                        ? encoder_from_params(adapter_params, "student_encoder",
                                                              c.catalog.student_offset())
                                        : make_student_encoder(c);
  prepare_out(o, c);
  std::vector<std::pair<std::string, VariantKind>> kinds;
  for (const auto& [name, kind] : {std::pair{"gaussian-perturb", VariantKind::kGaussianPerturb},
                                   std::pair{"lora-merged", VariantKind::kLoraMerged},
                                   std::pair{"style-shifted", VariantKind::kStyleShifted}}) {
    if (o.variant == "all" || o.variant == name) kinds.emplace_back(name, kind);
  }
  if (kinds.empty()) throw ConfigError("--variant", "expected gaussian-perturb, lora-merged, style-shifted or all");
  const auto corpus = get_corpus(o, c);
  const auto prompts = parallel_eval_prompts(c.catalog, Language::kStudent);
  VariantOptions vopt = c.variant;
  vopt.lora_rank = c.lora_rank;
  std::string csv = "variant,acc_base,acc_variant,degradation\n";
  for (const auto& [name, kind] : kinds) {
    const auto variant = make_variant(base.model.teacher, kind, vopt, corpus, base.model.teacher_encoder, c.schedule(),
                                      derive_seed(c.seed, SeedStream::kVariant));
    save_checkpoint(teacher_groups(base.model.teacher_encoder, variant), fs::path(o.out) / ("variant_" + name + ".ckpt"));
    const auto r = plugin_check(adapter, student, base.model.teacher,
                                variant, prompts, c.catalog, c.schedule(), c.samples_per_prompt,
                                derive_seed(c.seed, SeedStream::kEval));
    char buf[160];
    std::snprintf(buf, sizeof buf, "%s,%.10g,%.10g,%.10g\n", name.c_str(), r.acc_base, r.acc_variant, r.degradation);
    csv += buf;
    std::printf("%s", buf);
  }
  write_text(o, "plugin.csv", csv);
  return kExitOk;
}

int cmd_sweep(const Options& o) {
  const RunConfig c = resolve_config(o);
  const auto teacher = load_model(c, read_checkpoint(o.checkpoint, "teacher"));
  prepare_out(o, c);
  const auto corpus = get_corpus(o, c);
  TrainConfig tc = c.train_config();
  if (tc.eval_every == 0) tc.eval_every = tc.log_every;
  const auto rows = adapter_sweep(
      c.sweep_hidden, corpus,
      [&](const std::vector<int>& hidden) {
        Model m = make_model(c, teacher.model.teacher, derive_seed(c.seed, SeedStream::kAdapterInit));
        m.teacher_encoder = teacher.model.teacher_encoder;
        m.adapter = make_adapter(c, derive_seed(c.seed, SeedStream::kAdapterInit), hidden);
        return m;
      },
      c.schedule(), tc, derive_seed(c.seed, SeedStream::kTrain), c.sweep_threshold);
  const auto csv = sweep_csv(rows);
  write_text(o, "sweep.csv", csv);
  std::printf("%s", csv.c_str());
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"Cross-lingual adapter distillation for a toy conditional diffusion model", "xlkd"};
  app.require_subcommand(1);
  Options o;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "key = value config file");
    sub->add_option("--out", o.out, "output directory")->required();
    sub->add_option("--seed", o.seed, "master seed (overrides the config)");
    sub->add_option("--corpus", o.corpus, "corpus file from gen-data (default: regenerate from the seed)");
  };
  struct Cmd {
    const char* name;
    const char* help;
    int (*fn)(const Options&);
    bool checkpoint;
  };
  const Cmd cmds[] = {
      {"gen-data", "generate the synthetic bilingual corpus", cmd_gen_data, false},
      {"pretrain-teacher", "train the teacher denoiser on teacher-language data", cmd_pretrain, false},
      {"train", "train an adapter (or baseline) against a teacher checkpoint", cmd_train, true},
      {"ablate", "run every configured strategy over the evaluation seeds", cmd_ablate, true},
      {"eval", "nearest-canonical fidelity of a teacher or model checkpoint", cmd_eval, true},
      {"sample", "dump PGM samples for one concept", cmd_sample, true},
      {"plugin-check", "reuse a trained adapter on modified denoisers", cmd_plugin, true},
      {"sweep-adapter", "convergence speed over adapter hidden sizes", cmd_sweep, true},
  };
  std::vector<std::pair<CLI::App*, const Cmd*>> subs;
  for (const auto& cmd : cmds) {
    auto* sub = app.add_subcommand(cmd.name, cmd.help);
    common(sub);
    if (cmd.checkpoint) sub->add_option("--checkpoint", o.checkpoint, "teacher or model checkpoint");
    subs.emplace_back(sub, &cmd);
  }
  subs[2].first->add_option("--strategy", o.strategy, "overrides train.strategy");
  for (auto i : {4, 5}) subs[i].first->add_option("--language", o.language, "teacher or student");
  subs[5].first->add_option("--concept", o.concept_id, "semantics id to sample");
  subs[5].first->add_option("--count", o.count, "number of samples (default eval.samples_per_prompt)");
  subs[6].first->add_option("--adapter", o.adapter, "checkpoint holding adapter.* groups");
  subs[6].first->add_option("--variant", o.variant, "gaussian-perturb, lora-merged, style-shifted or all");

  std::vector<std::string> rev(args.rbegin(), args.rend() - (args.empty() ? 0 : 1));
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "xlkd: " << e.what() << "\n";
    return kExitConfig;
  }

  try {
    for (const auto& [sub, cmd] : subs) {
      if (sub->parsed()) return cmd->fn(o);
    }
  } catch (const ConfigError& e) {
    std::cerr << "xlkd: config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "xlkd: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitRuntime;
}

}  // namespace xlkd::cli
