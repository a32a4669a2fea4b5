#include <gtest/gtest.h>

#include "test_support.hpp"
#include "xlkd/config.hpp"
#include "xlkd/denoiser.hpp"
#include "xlkd/grad_check.hpp"

using namespace xlkd;
using xlkd::testing::bitwise_equal;
using xlkd::testing::random_tensor;

namespace {

DenoiserConfig small_config() {
  DenoiserConfig c;
  c.side = 4;
  c.time_dim = 4;
  c.width = 20;
  c.attn_dim = 6;
  c.blocks = 2;
  c.cond_dim = 5;
  c.kv_init_gain = 1.0;
  return c;
}

}  // namespace

TEST(CrossAttention, SingleTokenIsValueProjection) {
  auto p = init_denoiser(small_config(), 1);
  const auto& b = p.blocks[0];
  Rng rng(2);
  auto hidden = random_tensor({1, 20}, rng);
  auto cond = random_tensor({1, 1, 5}, rng);
  auto out = cross_attention(hidden, cond, b);
  auto want = add(hidden, add_bias(matmul(matmul(reshape(cond, {1, 5}), b.w_v), b.w_o), b.b_o));
  for (std::size_t i = 0; i < 20; ++i) EXPECT_NEAR(out.data()[i], want.data()[i], 1e-14);
}

TEST(CrossAttention, ZeroConditionLeavesHiddenUnchanged) {
  auto p = init_denoiser(small_config(), 1);
  Rng rng(3);
  auto hidden = random_tensor({2, 20}, rng);
  auto out = cross_attention(hidden, Tensor::zeros({2, 3, 5}), p.blocks[1]);
  EXPECT_TRUE(bitwise_equal(out, hidden));
}

TEST(CrossAttention, ConditionWidthMismatchIsTyped) {
  auto p = init_denoiser(small_config(), 1);
  EXPECT_THROW(cross_attention(Tensor::zeros({1, 20}), Tensor::zeros({1, 3, 4}), p.blocks[0]), ConditionDimError);
}

TEST(CrossAttention, GradCheckThroughKeysAndValues) {
  auto p = init_denoiser(small_config(), 4);
  auto& b = p.blocks[0];
  Rng rng(5);
  auto hidden = random_tensor({3, 20}, rng);
  auto cond = random_tensor({3, 3, 5}, rng, -2, 2);
  b.w_k.set_requires_grad(true);
  b.w_v.set_requires_grad(true);
  Tensor params[] = {b.w_k, b.w_v};
  Graph g;
  GraphScope scope(g);
  EXPECT_LT(grad_check([&] { return mean(square(cross_attention(hidden, cond, b))); }, params), 1e-4);
}

TEST(Denoise, ShapesAndTaps) {
  auto c = small_config();
  auto p = init_denoiser(c, 1);
  Rng rng(6);
  const int t[] = {1, 3};
  auto out = denoise(p, random_tensor({2, 16}, rng), t, random_tensor({2, 3, 5}, rng));
  EXPECT_EQ(out.eps_hat.shape(), (Shape{2, 16}));
  ASSERT_EQ(out.taps.size(), 2u);
  for (const auto& tap : out.taps) EXPECT_EQ(tap.shape(), (Shape{2, 20}));
}

TEST(Denoise, Deterministic) {
  auto p = init_denoiser(small_config(), 1);
  Rng rng(7);
  const int t[] = {2};
  auto x = random_tensor({1, 16}, rng);
  auto cond = random_tensor({1, 3, 5}, rng);
  auto a = denoise(p, x, t, cond);
  auto b = denoise(p, x, t, cond);
  EXPECT_TRUE(bitwise_equal(a.eps_hat, b.eps_hat));
  for (std::size_t i = 0; i < a.taps.size(); ++i) EXPECT_TRUE(bitwise_equal(a.taps[i], b.taps[i]));
}

TEST(Denoise, RejectsMismatchedInputs) {
  auto p = init_denoiser(small_config(), 1);
  const int t[] = {1};
  EXPECT_THROW(denoise(p, Tensor::zeros({1, 15}), t, Tensor::zeros({1, 3, 5})), ShapeError);
  EXPECT_THROW(denoise(p, Tensor::zeros({1, 16}), t, Tensor::zeros({1, 3, 6})), ConditionDimError);
}

TEST(Denoise, NamedGroupsRoundTrip) {
  auto c = small_config();
  auto p = init_denoiser(c, 8);
  auto q = denoiser_from_params(c, p.named());
  auto pn = p.named();
  auto qn = q.named();
  ASSERT_EQ(pn.size(), qn.size());
  for (std::size_t i = 0; i < pn.size(); ++i) {
    EXPECT_EQ(pn[i].name, qn[i].name);
    EXPECT_TRUE(bitwise_equal(pn[i].tensor, qn[i].tensor));
  }
}

TEST(Lora, ZeroBMergesToBase) {
  auto base = init_denoiser(small_config(), 1);
  auto with = base.clone();
  add_lora(with, 2, 3);
  ASSERT_TRUE(with.has_lora());
  EXPECT_EQ(with.blocks[0].lora_k->a.shape(), (Shape{5, 2}));
  EXPECT_EQ(with.blocks[0].lora_k->b.shape(), (Shape{2, 6}));
  auto merged = merge_lora(with);
  EXPECT_FALSE(merged.has_lora());
  for (std::size_t i = 0; i < base.blocks.size(); ++i) {
    EXPECT_TRUE(bitwise_equal(merged.blocks[i].w_k, base.blocks[i].w_k));
    EXPECT_TRUE(bitwise_equal(merged.blocks[i].w_v, base.blocks[i].w_v));
  }
}

TEST(Lora, EffectiveKeyProjection) {
  auto p = init_denoiser(small_config(), 1);
  add_lora(p, 2, 3);
  Rng rng(4);
  for (double& v : p.blocks[0].lora_k->b.mutable_data()) v = rng.uniform(-1, 1);
  auto merged = merge_lora(p);
  Rng r2(5);
  auto hidden = random_tensor({2, 20}, r2);
  auto cond = random_tensor({2, 3, 5}, r2);
  auto a = cross_attention(hidden, cond, p.blocks[0]);
  auto b = cross_attention(hidden, cond, merged.blocks[0]);
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_NEAR(a.data()[i], b.data()[i], 1e-12);
}

TEST(Variant, ZeroSigmaIsBitwiseCopy) {
  auto p = init_denoiser(small_config(), 1);
  auto q = perturb_gaussian(p, 0.0, 9);
  auto pn = p.named();
  auto qn = q.named();
  for (std::size_t i = 0; i < pn.size(); ++i) EXPECT_TRUE(bitwise_equal(pn[i].tensor, qn[i].tensor));
  EXPECT_THROW(perturb_gaussian(p, -0.1, 9), std::invalid_argument);
}

TEST(Variant, PerturbationHasRequestedScale) {
  DenoiserConfig c;
  auto p = init_denoiser(c, 1);
  auto q = perturb_gaussian(p, 0.01, 2);
  double s2 = 0;
  std::size_t n = 0;
  auto pn = p.named();
  auto qn = q.named();
  for (std::size_t i = 0; i < pn.size(); ++i) {
    for (std::size_t j = 0; j < pn[i].tensor.numel(); ++j) {
      const double d = qn[i].tensor.data()[j] - pn[i].tensor.data()[j];
      s2 += d * d;
      ++n;
    }
  }
  EXPECT_NEAR(std::sqrt(s2 / n), 0.01, 0.0002);
}

TEST(Pretrain, InitialLossNearOneWithSilentHead) {
  // A zeroed head predicts eps_hat = 0, so the loss is mean(eps^2).
  auto c = small_config();
  auto p = init_denoiser(c, 1);
  for (double& v : p.head_w.mutable_data()) v = 0.0;
  auto s = make_schedule(10, 1e-3, 0.2);
  Rng rng(3);
  double total = 0;
  for (int i = 0; i < 500; ++i) {
    total += denoising_loss(eps_fn(p), random_tensor({8, 16}, rng, 0, 1), random_tensor({8, 3, 5}, rng), s, rng).item();
  }
  EXPECT_NEAR(total / 500, 1.0, 0.02);
}

TEST(Pretrain, ZeroStepsReturnsInitialization) {
  RunConfig cfg;
  cfg.N = 20;
  cfg.M = 0;
  auto corpus = gen_corpus(cfg.corpus_config(), 1);
  auto tc = cfg.teacher_config();
  tc.steps = 0;
  auto res = pretrain_teacher(corpus, make_teacher_encoder(cfg), cfg.denoiser_config(), cfg.schedule(), tc, 5);
  EXPECT_TRUE(res.trace.rows.empty());
  auto init = init_denoiser(cfg.denoiser_config(), 5);
  auto a = res.denoiser.named();
  auto b = init.named();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_TRUE(bitwise_equal(a[i].tensor, b[i].tensor)) << a[i].name;
}

TEST(Pretrain, DifferentPromptsGiveDifferentPredictions) {
  RunConfig cfg = parse_config("corpus.N = 200\ncorpus.M = 0\ndenoiser.W = 272\nteacher.steps = 150\nteacher.batch = 16\n");
  auto corpus = gen_corpus(cfg.corpus_config(), 1);
  auto enc = make_teacher_encoder(cfg);
  auto res = pretrain_teacher(corpus, enc, cfg.denoiser_config(), cfg.schedule(), cfg.teacher_config(), 2);
  const Prompt prompts[] = {cfg.catalog.teacher_prompt({0, 2, 0}), cfg.catalog.teacher_prompt({3, 0, 8})};
  auto cond = encode_batch(enc, prompts);
  Tensor x = Tensor::zeros({2, 256});
  const int t[] = {10, 10};
  auto eps = denoise(res.denoiser, x, t, cond).eps_hat;
  double diff = 0;
  for (std::size_t i = 0; i < 256; ++i) diff += std::abs(eps.data()[i] - eps.data()[256 + i]);
  EXPECT_GT(diff, 1e-3);
}
