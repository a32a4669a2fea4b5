#include <gtest/gtest.h>

#include <map>

#include "test_support.hpp"
#include "xlkd/config.hpp"
#include "xlkd/distill.hpp"
#include "xlkd/grad_check.hpp"

using namespace xlkd;
using xlkd::testing::bitwise_equal;
using xlkd::testing::random_tensor;

namespace {

RunConfig small_run() {
  return parse_config(
      "image.G = 8\n"
      "encoders.d_T = 8\n"
      "encoders.d_S = 6\n"
      "denoiser.W = 48\n"
      "denoiser.d_attn = 8\n"
      "denoiser.B = 2\n"
      "denoiser.kv_init_gain = 4\n"
      "adapter.hidden = 12\n"
      "corpus.N = 64\n"
      "corpus.M = 16\n"
      "train.batch = 4\n"
      "train.steps = 20\n"
      "train.log_every = 5\n"
      "train.cosine_decay = false\n"
      "eval.samples_per_prompt = 1\n"
      "schedule.T = 6\n");
}

struct Fixture {
  RunConfig cfg = small_run();
  CorpusBundle corpus = gen_corpus(cfg.corpus_config(), 3);
  Model model = make_model(cfg, init_denoiser(cfg.denoiser_config(), 4), 5);
  NoiseSchedule s = cfg.schedule();
};

std::map<std::string, std::uint64_t> checksums(const Model& m) {
  std::map<std::string, std::uint64_t> out;
  for (const auto& nt : m.named()) out[nt.name] = checksum(nt.tensor);
  return out;
}

std::vector<std::string> changed(const std::map<std::string, std::uint64_t>& a,
                                 const std::map<std::string, std::uint64_t>& b) {
  std::vector<std::string> out;
  for (const auto& [k, v] : b) {
    auto it = a.find(k);
    if (it == a.end() || it->second != v) out.push_back(k);
  }
  return out;
}

DenoiserOutput fake_output(std::vector<double> tap_values, double eps_value) {
  DenoiserOutput o;
  for (double v : tap_values) o.taps.push_back(Tensor::full({2, 3}, v));
  o.eps_hat = Tensor::full({2, 4}, eps_value);
  return o;
}

Batch parallel(const CorpusBundle& c, std::size_t n, std::size_t from = 0) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < n; ++i) idx.push_back(from + i);
  return parallel_batch(c, idx);
}

}  // namespace

TEST(KDLosses, IdenticalOutputsAreExactlyZero) {
  auto a = fake_output({0.3, -1.2}, 0.7);
  auto l = kd_losses(a, a, KDWeights{});
  EXPECT_EQ(l.flkd.item(), 0.0);
  EXPECT_EQ(l.lkd.item(), 0.0);
  EXPECT_EQ(l.kd.item(), 0.0);
}

TEST(KDLosses, WeightedReductions) {
  auto t = fake_output({0.0, 0.0}, 0.5);
  auto s = fake_output({1.0, std::sqrt(3.0)}, 0.5);
  auto l = kd_losses(t, s, KDWeights{2.0, 5.0});
  EXPECT_NEAR(l.flkd.item(), 4.0, 1e-15);
  EXPECT_EQ(l.lkd.item(), 0.0);
  EXPECT_NEAR(l.kd.item(), 8.0, 1e-14);
}

TEST(KDLosses, BilinearInWeights) {
  Rng rng(1);
  DenoiserOutput t, s;
  for (int i = 0; i < 3; ++i) {
    t.taps.push_back(random_tensor({2, 5}, rng));
    s.taps.push_back(random_tensor({2, 5}, rng));
  }
  t.eps_hat = random_tensor({2, 4}, rng);
  s.eps_hat = random_tensor({2, 4}, rng);
  const double base = kd_losses(t, s, KDWeights{0.7, 1.3}).kd.item();
  EXPECT_NEAR(kd_losses(t, s, KDWeights{0.7 * 3, 1.3 * 3}).kd.item(), 3 * base, 1e-13);
}

TEST(KDLosses, LayerSubset) {
  auto t = fake_output({0.0, 0.0, 0.0}, 0.0);
  auto s = fake_output({1.0, 2.0, 3.0}, 0.0);
  const std::size_t layers[] = {2};
  EXPECT_NEAR(kd_losses(t, s, KDWeights{}, layers).flkd.item(), 9.0, 1e-15);
}

TEST(KDLosses, Errors) {
  auto t = fake_output({0.0, 0.0}, 0.0);
  auto s = fake_output({0.0}, 0.0);
  EXPECT_THROW(kd_losses(t, s, KDWeights{}), ShapeError);
  auto g = fake_output({0.0, 0.0}, 0.0);
  g.eps_hat.set_requires_grad(true);
  EXPECT_THROW(kd_losses(g, t, KDWeights{}), std::logic_error);
  EXPECT_THROW(KDWeights({0.0, 0.0}).validate(), std::invalid_argument);
  EXPECT_THROW(KDWeights({-1.0, 1.0}).validate(), std::invalid_argument);
}

TEST(KDLosses, OnlyStudentSideReceivesGradient) {
  DenoiserConfig c;
  c.side = 4;
  c.width = 24;
  c.blocks = 2;
  c.attn_dim = 4;
  c.cond_dim = 3;
  auto teacher = init_denoiser(c, 1);
  auto student = teacher.clone();
  for (auto& nt : teacher.named()) nt.tensor.set_requires_grad(true);
  for (auto& nt : student.named()) nt.tensor.set_requires_grad(true);
  Rng rng(2);
  auto x = random_tensor({2, 16}, rng);
  auto cond_t = random_tensor({2, 3, 3}, rng);
  auto cond_s = random_tensor({2, 3, 3}, rng);
  const int t[] = {1, 2};
  Graph g;
  GraphScope scope(g);
  DenoiserOutput to;
  {
    NoGradScope off;
    to = denoise(teacher, x, t, cond_t);
  }
  auto so = denoise(student, x, t, cond_s);
  backward(g, kd_losses(to, so, KDWeights{}).kd);
  for (const auto& nt : teacher.named()) EXPECT_FALSE(nt.tensor.has_grad()) << nt.name;
  bool any = false;
  for (const auto& nt : student.named()) any = any || nt.tensor.has_grad();
  EXPECT_TRUE(any);
}

TEST(TkdLoss, Basics) {
  Rng rng(3);
  auto a = random_tensor({2, 3, 4}, rng);
  EXPECT_EQ(tkd_loss(a, a).item(), 0.0);
  EXPECT_EQ(tkd_loss(Tensor::zeros({2, 3, 4}), Tensor::full({2, 3, 4}, 1.0)).item(), 1.0);
  EXPECT_THROW(tkd_loss(Tensor::zeros({2, 3, 4}), Tensor::zeros({2, 3, 5})), ShapeError);
}

class AdapterGradients : public ::testing::TestWithParam<int> {};

TEST_P(AdapterGradients, KdAndTkdMatchFiniteDifferences) {
  const std::uint64_t seed = static_cast<std::uint64_t>(GetParam());
  Rng rng(seed * 31 + 7);
  DenoiserConfig c;
  c.side = 4;
  c.time_dim = 4;
  c.width = static_cast<std::size_t>(rng.uniform_int(12, 24));
  c.blocks = 2;
  c.attn_dim = static_cast<std::size_t>(rng.uniform_int(2, 6));
  c.cond_dim = static_cast<std::size_t>(rng.uniform_int(2, 5));
  c.kv_init_gain = rng.uniform(0.5, 4.0);
  const int d_s = static_cast<int>(rng.uniform_int(2, 5));
  auto den = init_denoiser(c, seed);
  auto adapter = init_adapter(d_s, static_cast<int>(c.cond_dim), {static_cast<int>(rng.uniform_int(2, 6))}, seed + 1);
  const std::size_t n = 2;
  auto x = random_tensor({n, 16}, rng);
  auto student_emb = random_tensor({n, 3, static_cast<std::size_t>(d_s)}, rng);
  auto teacher_emb = random_tensor({n, 3, c.cond_dim}, rng, -0.5, 0.5);
  const int t[] = {1, 3};
  DenoiserOutput to;
  {
    NoGradScope off;
    to = denoise(den, x, t, teacher_emb);
  }
  std::vector<Tensor> params;
  for (auto& nt : adapter.named()) params.push_back(nt.tensor);
  Graph g;
  GraphScope scope(g);
  const KDWeights w{rng.uniform(0.5, 2), rng.uniform(0.5, 2)};
  auto kd = [&] { return kd_losses(to, denoise(den, x, t, apply_adapter(adapter, student_emb)), w).kd; };
  auto tkd = [&] { return tkd_loss(apply_adapter(adapter, student_emb), teacher_emb); };
  EXPECT_LT(grad_check(kd, params), 1e-4);
  EXPECT_LT(grad_check(tkd, params), 1e-4);
}

INSTANTIATE_TEST_SUITE_P(RandomConfigs, AdapterGradients, ::testing::Range(0, 20));

TEST(Strategy, FreezeMasks) {
  for (auto tag : {StrategyTag::kUKD, StrategyTag::kUFKD, StrategyTag::kULKD, StrategyTag::kTKD, StrategyTag::kUTKD,
                   StrategyTag::kHybridUKD}) {
    auto s = make_strategy(tag);
    EXPECT_TRUE(s.trains("adapter.layer0.w"));
    EXPECT_FALSE(s.trains("denoiser.block0.w_k"));
    EXPECT_FALSE(s.trains_denoiser());
  }
  auto ft = make_strategy(StrategyTag::kFT);
  EXPECT_TRUE(ft.trains("denoiser.head_w"));
  EXPECT_TRUE(ft.trains("adapter.layer1.b"));
  auto kv = make_strategy(StrategyTag::kKV);
  EXPECT_TRUE(kv.trains("denoiser.block2.w_k"));
  EXPECT_TRUE(kv.trains("denoiser.block0.w_v"));
  EXPECT_FALSE(kv.trains("denoiser.block0.w_q"));
  auto lora = make_strategy(StrategyTag::kLORA);
  EXPECT_TRUE(lora.trains("denoiser.block1.lora_a_k"));
  EXPECT_FALSE(lora.trains("denoiser.block1.w_k"));
  for (int t = 0; t <= static_cast<int>(StrategyTag::kHybridUKD); ++t) {
    auto s = make_strategy(static_cast<StrategyTag>(t));
    EXPECT_FALSE(s.trains("teacher_encoder.table"));
    EXPECT_FALSE(s.trains("student_encoder.mixer_w"));
    EXPECT_EQ(parse_strategy(strategy_name(s.tag)), s.tag);
  }
  EXPECT_THROW(parse_strategy("XKD"), StrategyError);
}

TEST(Strategy, GlobMatching) {
  EXPECT_TRUE(glob_match("adapter.*", "adapter.layer0.w"));
  EXPECT_TRUE(glob_match("denoiser.block*.w_k", "denoiser.block12.w_k"));
  EXPECT_FALSE(glob_match("denoiser.block*.w_k", "denoiser.block1.w_q"));
  EXPECT_TRUE(glob_match("*", ""));
}

TEST(Trainer, ExactZeroKdWithClonedEncoderAndIdentityAdapter) {
  RunConfig cfg = parse_config("image.G = 8\nencoders.d_T = 8\nencoders.d_S = 8\ndenoiser.W = 48\ndenoiser.B = 2\n"
                               "corpus.N = 64\ncorpus.M = 0\ntrain.batch = 4\nschedule.T = 6\n");
  Fixture f;
  f.cfg = cfg;
  f.corpus = gen_corpus(cfg.corpus_config(), 3);
  f.model = make_model(cfg, init_denoiser(cfg.denoiser_config(), 4), 5);
  f.s = cfg.schedule();
  auto& m = f.model;
  m.student_encoder = m.teacher_encoder;
  m.student_encoder.table = m.teacher_encoder.table.clone();
  m.student_encoder.mixer_w = m.teacher_encoder.mixer_w.clone();
  m.student_encoder.mixer_b = m.teacher_encoder.mixer_b.clone();
  m.student_encoder.id_base = cfg.catalog.student_offset();
  std::vector<double> eye(64, 0.0);
  for (int i = 0; i < 8; ++i) eye[i * 9] = 1.0;
  m.adapter.layers = {{Tensor({8, 8}, eye, true), Tensor::zeros({8}, true)}};
  const auto before = checksums(m);
  Trainer trainer(m, make_strategy(StrategyTag::kUKD), f.s, cfg.train_config(), 1);
  Rng rng(2);
  for (int step = 0; step < 100; ++step) {
    std::vector<std::size_t> idx;
    for (int i = 0; i < 4; ++i) idx.push_back(static_cast<std::size_t>(rng.uniform_int(0, 63)));
    auto l = trainer.train_step(parallel_batch(f.corpus, idx));
    ASSERT_LE(std::abs(l.flkd), 1e-12);
    ASSERT_LE(std::abs(l.lkd), 1e-12);
  }
  EXPECT_TRUE(changed(before, checksums(m)).empty());
}

TEST(Trainer, FinetuneChangesDenoiserUkdDoesNot) {
  Fixture f;
  const auto before = checksums(f.model);
  {
    Model m = f.model;
    m.adapter = f.model.adapter.clone();
    Trainer ft(m, make_strategy(StrategyTag::kFT), f.s, f.cfg.train_config(), 1);
    ft.train_step(parallel(f.corpus, 4));
    auto ch = changed(before, checksums(m));
    EXPECT_TRUE(std::any_of(ch.begin(), ch.end(), [](auto& n) { return n.rfind("denoiser.", 0) == 0; }));
    // The teacher object itself is never written.
    for (const auto& nt : f.model.teacher.named()) EXPECT_EQ(checksum(nt.tensor), before.at(nt.name));
  }
  auto run = train(make_strategy(StrategyTag::kUKD), f.corpus, f.model, f.s, f.cfg.train_config(), 1);
  for (const auto& name : changed(before, checksums(run.model))) EXPECT_EQ(name.rfind("adapter.", 0), 0u) << name;
  EXPECT_FALSE(changed(before, checksums(run.model)).empty());
}

TEST(Trainer, KvAndLoraFreezeContracts) {
  Fixture f;
  const auto before = checksums(f.model);
  auto kv = train(make_strategy(StrategyTag::kKV), f.corpus, f.model, f.s, f.cfg.train_config(), 2);
  for (const auto& name : changed(before, checksums(kv.model))) {
    const bool ok = name.rfind("adapter.", 0) == 0 || name.ends_with(".w_k") || name.ends_with(".w_v");
    EXPECT_TRUE(ok) << name;
  }
  auto lora = train(make_strategy(StrategyTag::kLORA), f.corpus, f.model, f.s, f.cfg.train_config(), 2);
  ASSERT_TRUE(lora.model.student_denoiser.has_value());
  for (const auto& name : changed(before, checksums(lora.model))) {
    const bool ok = name.rfind("adapter.", 0) == 0 || name.find(".lora_") != std::string::npos;
    EXPECT_TRUE(ok) << name;
  }
}

TEST(Trainer, TeacherAndStudentShareDraws) {
  Fixture f;
  Trainer trainer(f.model, make_strategy(StrategyTag::kUKD), f.s, f.cfg.train_config(), 3);
  std::vector<std::pair<Pass, DiffusionDraw>> seen;
  trainer.set_draw_observer([&](Pass p, const DiffusionDraw& d) { seen.emplace_back(p, d); });
  trainer.train_step(parallel(f.corpus, 4));
  ASSERT_EQ(seen.size(), 2u);
  EXPECT_EQ(seen[0].first, Pass::kTeacher);
  EXPECT_EQ(seen[1].first, Pass::kStudent);
  EXPECT_EQ(seen[0].second.t, seen[1].second.t);
  EXPECT_TRUE(bitwise_equal(seen[0].second.eps, seen[1].second.eps));
}

TEST(Trainer, CultureBatchRules) {
  Fixture f;
  std::vector<std::size_t> idx{0, 1, 2};
  auto cb = culture_batch(f.corpus, idx);
  {
    Trainer ukd(f.model, make_strategy(StrategyTag::kUKD), f.s, f.cfg.train_config(), 1);
    EXPECT_THROW(ukd.train_step(cb), StrategyError);
  }
  Trainer hybrid(f.model, make_strategy(StrategyTag::kHybridUKD), f.s, f.cfg.train_config(), 1);
  const auto before = checksums(f.model);
  auto l = hybrid.train_step(cb);
  EXPECT_EQ(cb.teacher_reads, 0u);
  EXPECT_GT(l.sd, 0.0);
  EXPECT_EQ(l.flkd, 0.0);
  for (const auto& name : changed(before, checksums(f.model))) EXPECT_EQ(name.rfind("adapter.", 0), 0u) << name;

  Batch no_teacher = parallel(f.corpus, 2);
  no_teacher.teacher.reset();
  EXPECT_THROW(hybrid.train_step(no_teacher), StrategyError);
}

TEST(Trainer, RefusesFrozenGroups) {
  Fixture f;
  Strategy rogue{StrategyTag::kUKD, {"adapter.*", "student_encoder.table"}};
  EXPECT_THROW(Trainer(f.model, rogue, f.s, f.cfg.train_config(), 1), FrozenGroupError);
  // Naming a denoiser group trains a copy; the frozen teacher stays untouched.
  auto teacher_before = f.model.teacher.named();
  for (auto& nt : teacher_before) nt.tensor = nt.tensor.clone();
  Strategy copy{StrategyTag::kFT, {"adapter.*", "denoiser.head_w"}};
  Trainer t(f.model, copy, f.s, f.cfg.train_config(), 1);
  ASSERT_TRUE(f.model.student_denoiser.has_value());
  t.train_step(parallel(f.corpus, 2));
  const auto teacher_after = f.model.teacher.named();
  for (std::size_t i = 0; i < teacher_before.size(); ++i) {
    EXPECT_TRUE(bitwise_equal(teacher_before[i].tensor, teacher_after[i].tensor)) << teacher_before[i].name;
  }
}

TEST(Train, ZeroStepsReturnsInitialization) {
  Fixture f;
  auto tc = f.cfg.train_config();
  tc.steps = 0;
  auto run = train(make_strategy(StrategyTag::kUKD), f.corpus, f.model, f.s, tc, 1);
  EXPECT_TRUE(run.trace.rows.empty());
  EXPECT_TRUE(changed(checksums(f.model), checksums(run.model)).empty());
}

TEST(Train, DeterministicTrace) {
  Fixture f;
  auto a = train(make_strategy(StrategyTag::kHybridUKD), f.corpus, f.model, f.s, f.cfg.train_config(), 9);
  auto b = train(make_strategy(StrategyTag::kHybridUKD), f.corpus, f.model, f.s, f.cfg.train_config(), 9);
  EXPECT_EQ(a.trace.csv(), b.trace.csv());
  auto an = a.model.named();
  auto bn = b.model.named();
  for (std::size_t i = 0; i < an.size(); ++i) EXPECT_TRUE(bitwise_equal(an[i].tensor, bn[i].tensor));
}

TEST(Train, TraceRowsAtLogStepsWithFinalEvaluation) {
  Fixture f;
  auto tc = f.cfg.train_config();
  tc.steps = 12;
  tc.log_every = 5;
  auto run = train(make_strategy(StrategyTag::kULKD), f.corpus, f.model, f.s, tc, 1);
  ASSERT_EQ(run.trace.rows.size(), 3u);
  EXPECT_EQ(run.trace.rows[0].step, 5);
  EXPECT_EQ(run.trace.rows[1].step, 10);
  EXPECT_EQ(run.trace.rows[2].step, 12);
  EXPECT_EQ(run.trace.rows[0].eval_acc, -1.0);
  EXPECT_GE(run.trace.rows[2].eval_acc, 0.0);
  EXPECT_EQ(run.trace.rows[0].loss_flkd, 0.0);  // unused loss columns hold 0
  EXPECT_NEAR(run.trace.rows[0].loss_total, tc.weights.lambda_l * run.trace.rows[0].loss_lkd, 1e-12);
  EXPECT_EQ(run.trace.csv().substr(0, std::string(kMetricsHeader).size()), kMetricsHeader);
}

TEST(Train, HybridInterleavesCultureSteps) {
  Fixture f;
  auto tc = f.cfg.train_config();
  tc.steps = 8;
  tc.log_every = 1;
  tc.hybrid_ratio = 3;
  auto run = train(make_strategy(StrategyTag::kHybridUKD), f.corpus, f.model, f.s, tc, 1);
  for (const auto& r : run.trace.rows) {
    const bool culture = r.step % 4 == 0;
    EXPECT_EQ(r.loss_sd > 0.0, culture) << r.step;
    EXPECT_EQ(r.loss_lkd > 0.0, !culture) << r.step;
  }
  CorpusBundle no_culture = f.corpus;
  no_culture.culture.clear();
  EXPECT_THROW(train(make_strategy(StrategyTag::kHybridUKD), no_culture, f.model, f.s, tc, 1), StrategyError);
}

TEST(Train, TrainableFractionReported) {
  RunConfig cfg;
  auto model = make_model(cfg, init_denoiser(cfg.denoiser_config(), 1), 2);
  CorpusBundle corpus = gen_corpus(cfg.corpus_config(), 1);
  auto tc = cfg.train_config();
  tc.steps = 0;
  auto run = train(make_strategy(StrategyTag::kUKD), corpus, model, cfg.schedule(), tc, 1);
  EXPECT_EQ(run.trainable_params, 3680u);
  EXPECT_LT(run.trainable_fraction(), 0.05);
}

TEST(MetricTrace, RejectsNonIncreasingSteps) {
  MetricTrace t;
  t.append({.step = 3});
  EXPECT_THROW(t.append({.step = 3}), std::logic_error);
  EXPECT_THROW(t.append({.step = 2}), std::logic_error);
}

TEST(Schedule, CosineLearningRate) {
  TrainConfig c;
  c.steps = 101;
  c.lr = 2e-3;
  EXPECT_EQ(scheduled_lr(c, 50), 2e-3);
  c.cosine_decay = true;
  EXPECT_DOUBLE_EQ(scheduled_lr(c, 1), 2e-3);
  EXPECT_NEAR(scheduled_lr(c, 51), 1e-3, 1e-15);
  EXPECT_NEAR(scheduled_lr(c, 101), 0.0, 1e-18);
}
