#include "xlkd/config.hpp"

#include <charconv>
#include <cstdio>
#include <functional>
#include <sstream>

#include "xlkd/io.hpp"
#include "xlkd/rng.hpp"

namespace xlkd {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.push_back(trim(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

template <typename T>
T parse_number(const std::string& key, std::string_view v) {
  T out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size() || v.empty()) {
    throw ConfigError(key, "cannot parse '" + std::string(v) + "' as a number");
  }
  return out;
}

bool parse_bool(const std::string& key, std::string_view v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(key, "expected true or false, got '" + std::string(v) + "'");
}

template <typename T>
std::vector<T> parse_list(const std::string& key, std::string_view v, char sep = ',') {
  std::vector<T> out;
  if (trim(v).empty()) return out;
  for (auto item : split(v, sep)) out.push_back(parse_number<T>(key, item));
  return out;
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <typename T>
std::string join(const std::vector<T>& xs, const char* sep = ",") {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += sep;
    out += std::to_string(xs[i]);
  }
  return out;
}

struct Key {
  std::string name;
  std::function<void(RunConfig&, const std::string&, std::string_view)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename T, typename Field>
Key number_key(std::string name, Field field) {
  return {std::move(name),
          [field](RunConfig& c, const std::string& k, std::string_view v) { field(c) = parse_number<T>(k, v); },
          [field](const RunConfig& c) {
            if constexpr (std::is_floating_point_v<T>) {
              return fmt_double(field(const_cast<RunConfig&>(c)));
            } else {
              return std::to_string(field(const_cast<RunConfig&>(c)));
            }
          }};
}

template <typename Field>
Key bool_key(std::string name, Field field) {
  return {std::move(name), [field](RunConfig& c, const std::string& k, std::string_view v) { field(c) = parse_bool(k, v); },
          [field](const RunConfig& c) { return std::string(field(const_cast<RunConfig&>(c)) ? "true" : "false"); }};
}

std::string hidden_str(const std::vector<int>& h) { return join(h); }

void add_train_keys(std::vector<Key>& keys, const std::string& prefix, TrainConfig RunConfig::*member) {
  auto tc = [member](RunConfig& c) -> TrainConfig& { return c.*member; };
  keys.push_back(number_key<long>(prefix + "steps", [tc](RunConfig& c) -> long& { return tc(c).steps; }));
  keys.push_back(number_key<double>(prefix + "lr", [tc](RunConfig& c) -> double& { return tc(c).lr; }));
  keys.push_back(bool_key(prefix + "cosine_decay", [tc](RunConfig& c) -> bool& { return tc(c).cosine_decay; }));
  keys.push_back(number_key<std::size_t>(prefix + "batch", [tc](RunConfig& c) -> std::size_t& { return tc(c).batch; }));
  keys.push_back(number_key<long>(prefix + "log_every", [tc](RunConfig& c) -> long& { return tc(c).log_every; }));
  keys.push_back(number_key<long>(prefix + "eval_every", [tc](RunConfig& c) -> long& { return tc(c).eval_every; }));
}

const std::vector<Key>& key_table() {
  static const std::vector<Key> table = [] {
    std::vector<Key> k;
    k.push_back(number_key<std::uint64_t>("seed", [](RunConfig& c) -> std::uint64_t& { return c.seed; }));
    k.push_back(number_key<int>("schedule.T", [](RunConfig& c) -> int& { return c.T; }));
    k.push_back(number_key<double>("schedule.beta_start", [](RunConfig& c) -> double& { return c.beta_start; }));
    k.push_back(number_key<double>("schedule.beta_end", [](RunConfig& c) -> double& { return c.beta_end; }));
    k.push_back(number_key<std::size_t>("image.G", [](RunConfig& c) -> std::size_t& { return c.G; }));
    k.push_back(number_key<int>("corpus.N", [](RunConfig& c) -> int& { return c.N; }));
    k.push_back(number_key<int>("corpus.M", [](RunConfig& c) -> int& { return c.M; }));
    k.push_back(bool_key("corpus.unique", [](RunConfig& c) -> bool& { return c.unique; }));
    k.push_back(number_key<int>("corpus.shapes", [](RunConfig& c) -> int& { return c.catalog.shapes; }));
    k.push_back(number_key<int>("corpus.intensities", [](RunConfig& c) -> int& { return c.catalog.intensities; }));
    k.push_back(number_key<int>("corpus.positions", [](RunConfig& c) -> int& { return c.catalog.positions; }));
    k.push_back(number_key<int>("corpus.culture", [](RunConfig& c) -> int& { return c.catalog.culture; }));
    k.push_back(number_key<int>("encoders.d_T", [](RunConfig& c) -> int& { return c.d_T; }));
    k.push_back(number_key<int>("encoders.d_S", [](RunConfig& c) -> int& { return c.d_S; }));
    // Vocabulary sizes follow from the catalog; accepted only when consistent.
    for (const char* name : {"encoders.vocab_T", "encoders.vocab_S"}) {
      const bool teacher = std::string_view(name).back() == 'T';
      k.push_back({name,
                   [teacher](RunConfig& c, const std::string& key, std::string_view v) {
                     const int want = teacher ? c.catalog.teacher_vocab() : c.catalog.student_vocab();
                     if (parse_number<int>(key, v) != want) {
                       throw ConfigError(key, "must equal the catalog-derived size " + std::to_string(want) +
                                                  " (set corpus.* before it)");
                     }
                   },
                   [teacher](const RunConfig& c) {
                     return std::to_string(teacher ? c.catalog.teacher_vocab() : c.catalog.student_vocab());
                   }});
    }
    k.push_back(number_key<std::size_t>("denoiser.B", [](RunConfig& c) -> std::size_t& { return c.blocks; }));
    k.push_back(number_key<std::size_t>("denoiser.W", [](RunConfig& c) -> std::size_t& { return c.width; }));
    k.push_back(number_key<std::size_t>("denoiser.d_attn", [](RunConfig& c) -> std::size_t& { return c.attn_dim; }));
    k.push_back(number_key<std::size_t>("denoiser.d_time", [](RunConfig& c) -> std::size_t& { return c.time_dim; }));
    k.push_back(number_key<std::size_t>("denoiser.lora_rank", [](RunConfig& c) -> std::size_t& { return c.lora_rank; }));
    k.push_back(number_key<double>("denoiser.kv_init_gain", [](RunConfig& c) -> double& { return c.kv_init_gain; }));
    k.push_back({"adapter.hidden",
                 [](RunConfig& c, const std::string& key, std::string_view v) { c.adapter_hidden = parse_list<int>(key, v); },
                 [](const RunConfig& c) { return hidden_str(c.adapter_hidden); }});

    k.push_back({"train.strategy",
                 [](RunConfig& c, const std::string& key, std::string_view v) {
                   try {
                     c.strategy = parse_strategy(v);
                   } catch (const std::invalid_argument& e) {
                     throw ConfigError(key, e.what());
                   }
                 },
                 [](const RunConfig& c) { return std::string(strategy_name(c.strategy)); }});
    add_train_keys(k, "train.", &RunConfig::train);
    k.push_back(number_key<double>("train.lambda_fl", [](RunConfig& c) -> double& { return c.train.weights.lambda_fl; }));
    k.push_back(number_key<double>("train.lambda_l", [](RunConfig& c) -> double& { return c.train.weights.lambda_l; }));
    k.push_back(number_key<int>("train.hybrid_ratio", [](RunConfig& c) -> int& { return c.train.hybrid_ratio; }));
    k.push_back({"train.flkd_layers",
                 [](RunConfig& c, const std::string& key, std::string_view v) {
                   c.train.flkd_layers = parse_list<std::size_t>(key, v);
                 },
                 [](const RunConfig& c) { return join(c.train.flkd_layers); }});
    add_train_keys(k, "teacher.", &RunConfig::teacher);

    k.push_back(number_key<std::size_t>("eval.samples_per_prompt",
                                        [](RunConfig& c) -> std::size_t& { return c.samples_per_prompt; }));
    k.push_back({"eval.seeds",
                 [](RunConfig& c, const std::string& key, std::string_view v) {
                   c.eval_seeds = parse_list<std::uint64_t>(key, v);
                 },
                 [](const RunConfig& c) { return join(c.eval_seeds); }});
    k.push_back({"ablate.strategies",
                 [](RunConfig& c, const std::string& key, std::string_view v) {
                   c.ablate_strategies.clear();
                   for (auto item : split(v, ',')) {
                     try {
                       c.ablate_strategies.push_back(parse_strategy(item));
                     } catch (const std::invalid_argument& e) {
                       throw ConfigError(key, e.what());
                     }
                   }
                 },
                 [](const RunConfig& c) {
                   std::string out;
                   for (std::size_t i = 0; i < c.ablate_strategies.size(); ++i) {
                     out += (i ? "," : "") + std::string(strategy_name(c.ablate_strategies[i]));
                   }
                   return out;
                 }});
    k.push_back({"sweep.hidden",
                 [](RunConfig& c, const std::string& key, std::string_view v) {
                   c.sweep_hidden.clear();
                   for (auto cfg : split(v, ';')) c.sweep_hidden.push_back(parse_list<int>(key, cfg));
                 },
                 [](const RunConfig& c) {
                   std::string out;
                   for (std::size_t i = 0; i < c.sweep_hidden.size(); ++i) out += (i ? ";" : "") + hidden_str(c.sweep_hidden[i]);
                   return out;
                 }});
    k.push_back(number_key<double>("sweep.threshold", [](RunConfig& c) -> double& { return c.sweep_threshold; }));
    k.push_back(number_key<double>("variant.sigma", [](RunConfig& c) -> double& { return c.variant.sigma; }));
    k.push_back(number_key<long>("variant.steps", [](RunConfig& c) -> long& { return c.variant.steps; }));
    k.push_back(number_key<double>("variant.style_gain", [](RunConfig& c) -> double& { return c.variant.style_gain; }));
    k.push_back(number_key<double>("variant.lr", [](RunConfig& c) -> double& { return c.variant.lr; }));
    k.push_back(number_key<std::size_t>("variant.batch", [](RunConfig& c) -> std::size_t& { return c.variant.batch; }));
    return k;
  }();
  return table;
}

}  // namespace

RunConfig::RunConfig() {
  train.steps = 6000;
  train.lr = 2e-3;
  train.cosine_decay = true;
  train.log_every = 500;
  teacher.steps = 20000;
  teacher.lr = 2e-3;
  teacher.batch = 64;
  teacher.cosine_decay = true;
  teacher.log_every = 1000;
}

void RunConfig::validate() const {
  try {
    catalog.validate();
  } catch (const std::exception& e) {
    throw ConfigError("corpus", e.what());
  }
  auto require = [](bool ok, const char* key, const char* what) {
    if (!ok) throw ConfigError(key, what);
  };
  require(T >= 1, "schedule.T", "must be >= 1");
  require(beta_start > 0.0 && beta_start <= beta_end, "schedule.beta_start", "need 0 < beta_start <= beta_end");
  require(beta_end < 1.0, "schedule.beta_end", "must be < 1");
  require(G >= 8, "image.G", "must be >= 8");
  require(N >= 0, "corpus.N", "must be >= 0");
  require(M >= 0, "corpus.M", "must be >= 0");
  require(d_T >= 1, "encoders.d_T", "must be >= 1");
  require(d_S >= 1, "encoders.d_S", "must be >= 1");
  require(blocks >= 1, "denoiser.B", "must be >= 1");
  require(width >= 1, "denoiser.W", "must be >= 1");
  require(attn_dim >= 1, "denoiser.d_attn", "must be >= 1");
  require(time_dim >= 1, "denoiser.d_time", "must be >= 1");
  require(lora_rank >= 1, "denoiser.lora_rank", "must be >= 1");
  require(kv_init_gain > 0.0, "denoiser.kv_init_gain", "must be > 0");
  for (int h : adapter_hidden) require(h >= 1, "adapter.hidden", "widths must be >= 1");
  for (const auto* t : {&train, &teacher}) {
    const char* pre = t == &train ? "train" : "teacher";
    const std::string p(pre);
    if (t->steps < 0) throw ConfigError(p + ".steps", "must be >= 0");
    if (!(t->lr > 0.0)) throw ConfigError(p + ".lr", "must be > 0");
    if (t->batch < 1) throw ConfigError(p + ".batch", "must be >= 1");
    if (t->log_every < 1) throw ConfigError(p + ".log_every", "must be >= 1");
    if (t->eval_every < 0) throw ConfigError(p + ".eval_every", "must be >= 0");
  }
  require(train.weights.lambda_fl >= 0.0, "train.lambda_fl", "must be >= 0");
  require(train.weights.lambda_l >= 0.0, "train.lambda_l", "must be >= 0");
  require(train.hybrid_ratio >= 1, "train.hybrid_ratio", "must be >= 1");
  for (auto l : train.flkd_layers) require(l < blocks, "train.flkd_layers", "layer index >= denoiser.B");
  require(samples_per_prompt >= 1, "eval.samples_per_prompt", "must be >= 1");
  require(!eval_seeds.empty(), "eval.seeds", "must list at least one seed");
  require(!ablate_strategies.empty(), "ablate.strategies", "must list at least one strategy");
  require(sweep_hidden.size() >= 2, "sweep.hidden", "needs at least two configurations");
  for (const auto& h : sweep_hidden) {
    for (int w : h) require(w >= 1, "sweep.hidden", "widths must be >= 1");
  }
  require(variant.sigma >= 0.0, "variant.sigma", "must be >= 0");
  require(variant.steps >= 0, "variant.steps", "must be >= 0");
  require(variant.lr > 0.0, "variant.lr", "must be > 0");
  require(variant.batch >= 1, "variant.batch", "must be >= 1");
}

CorpusConfig RunConfig::corpus_config() const {
  CorpusConfig c;
  c.parallel = N;
  c.culture = M;
  c.side = G;
  c.unique = unique;
  c.catalog = catalog;
  return c;
}

NoiseSchedule RunConfig::schedule() const { return make_schedule(T, beta_start, beta_end); }

DenoiserConfig RunConfig::denoiser_config() const {
  DenoiserConfig c;
  c.side = G;
  c.time_dim = time_dim;
  c.width = width;
  c.attn_dim = attn_dim;
  c.blocks = blocks;
  c.cond_dim = static_cast<std::size_t>(d_T);
  c.kv_init_gain = kv_init_gain;
  return c;
}

TrainConfig RunConfig::train_config() const {
  TrainConfig c = train;
  c.samples_per_prompt = samples_per_prompt;
  c.lora_rank = lora_rank;
  return c;
}

TrainConfig RunConfig::teacher_config() const {
  TrainConfig c = teacher;
  c.samples_per_prompt = samples_per_prompt;
  c.lora_rank = lora_rank;
  return c;
}

RunConfig parse_config(std::string_view text, RunConfig base) {
  const auto& table = key_table();
  std::size_t line_no = 0;
  for (auto raw : split(text, '\n')) {
    ++line_no;
    auto line = raw;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError(std::string(line), "line " + std::to_string(line_no) + " is not of the form key = value");
    }
    const std::string key(trim(line.substr(0, eq)));
    const auto value = trim(line.substr(eq + 1));
    const Key* match = nullptr;
    for (const auto& k : table) {
      if (k.name == key) match = &k;
    }
    if (!match) throw ConfigError(key, "unknown key");
    match->set(base, key, value);
  }
  base.validate();
  return base;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::string text;
  try {
    text = io::read_file(path);
  } catch (const std::exception& e) {
    throw ConfigError("", e.what());
  }
  return parse_config(text);
}

std::string dump_config(const RunConfig& config) {
  std::string out;
  for (const auto& k : key_table()) out += k.name + " = " + k.get(config) + "\n";
  return out;
}

TextEncoderParams make_teacher_encoder(const RunConfig& config) {
  return init_encoder(config.catalog.teacher_vocab(), config.d_T, derive_seed(config.seed, SeedStream::kTeacherEncoder),
                      0);
}

TextEncoderParams make_student_encoder(const RunConfig& config) {
  return init_encoder(config.catalog.student_vocab(), config.d_S, derive_seed(config.seed, SeedStream::kStudentEncoder),
                      config.catalog.student_offset());
}

AdapterParams make_adapter(const RunConfig& config, std::uint64_t seed, const std::vector<int>& hidden) {
  return init_adapter(config.d_S, config.d_T, hidden, seed);
}

Model make_model(const RunConfig& config, const DenoiserParams& teacher, std::uint64_t adapter_seed) {
  Model m;
  m.teacher_encoder = make_teacher_encoder(config);
  m.student_encoder = make_student_encoder(config);
  m.teacher = teacher;
  m.adapter = make_adapter(config, adapter_seed, config.adapter_hidden);
  return m;
}

}  // namespace xlkd
