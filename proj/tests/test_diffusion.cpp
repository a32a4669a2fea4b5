#include <gtest/gtest.h>

#include <cmath>

#include "test_support.hpp"
#include "xlkd/denoiser.hpp"
#include "xlkd/diffusion.hpp"
#include "xlkd/grad_check.hpp"

using namespace xlkd;

TEST(Schedule, ConstantBetaProducts) {
  auto s = make_schedule(3, 0.1, 0.1);
  EXPECT_NEAR(s.alpha_bar[0], 0.9, 1e-15);
  EXPECT_NEAR(s.alpha_bar[1], 0.81, 1e-15);
  EXPECT_NEAR(s.alpha_bar[2], 0.729, 1e-15);
}

TEST(Schedule, SingleStep) {
  auto s = make_schedule(1, 0.5, 0.5);
  EXPECT_EQ(s.alpha_bar, std::vector<double>{0.5});
}

TEST(Schedule, LinearBetaMatchesIndependentProduct) {
  auto s = make_schedule(10, 1e-4, 0.02);
  double prod = 1.0;
  for (int i = 0; i < 10; ++i) {
    const double beta = 1e-4 + (0.02 - 1e-4) * i / 9.0;
    EXPECT_NEAR(s.beta[i], beta, 1e-17);
    prod *= 1.0 - beta;
  }
  EXPECT_NEAR(s.alpha_bar[9], prod, 1e-15);
}

TEST(Schedule, Invariants) {
  auto s = make_schedule(50, 1e-4, 0.35);
  for (int t = 0; t < 50; ++t) {
    EXPECT_GT(s.beta[t], 0.0);
    EXPECT_LT(s.beta[t], 1.0);
    EXPECT_EQ(s.alpha[t], 1.0 - s.beta[t]);
    EXPECT_EQ(s.sigma2[t], s.beta[t]);
    if (t > 0) {
      EXPECT_LT(s.alpha_bar[t], s.alpha_bar[t - 1]);
      EXPECT_NEAR(s.alpha_bar[t], s.alpha_bar[t - 1] * s.alpha[t], 1e-15);
    }
  }
}

TEST(Schedule, RejectsBadBounds) {
  EXPECT_THROW(make_schedule(0, 0.1, 0.2), std::invalid_argument);
  EXPECT_THROW(make_schedule(5, 0.0, 0.2), std::invalid_argument);
  EXPECT_THROW(make_schedule(5, 0.3, 0.2), std::invalid_argument);
  EXPECT_THROW(make_schedule(5, 0.1, 1.0), std::invalid_argument);
}

TEST(ForwardDiffuse, OnesWithZeroNoise) {
  auto s = make_schedule(3, 0.1, 0.1);
  auto x = forward_diffuse(Tensor::full({4}, 1.0), 3, Tensor::zeros({4}), s);
  for (double v : x.data()) EXPECT_NEAR(v, std::sqrt(0.729), 1e-15);
}

TEST(ForwardDiffuse, ZeroNoiseScalesExactly) {
  auto s = make_schedule(4, 0.05, 0.2);
  Tensor x0({3}, {0.2, 0.5, 0.9});
  auto x = forward_diffuse(x0, 2, Tensor::zeros({3}), s);
  for (int i = 0; i < 3; ++i) EXPECT_EQ(x.data()[i], std::sqrt(s.alpha_bar[1]) * x0.data()[i]);
}

TEST(ForwardDiffuse, ErrorsOnRangeAndShape) {
  auto s = make_schedule(4, 0.05, 0.2);
  EXPECT_THROW(forward_diffuse(Tensor::zeros({3}), 0, Tensor::zeros({3}), s), std::out_of_range);
  EXPECT_THROW(forward_diffuse(Tensor::zeros({3}), 5, Tensor::zeros({3}), s), std::out_of_range);
  EXPECT_THROW(forward_diffuse(Tensor::zeros({3}), 1, Tensor::zeros({4}), s), ShapeError);
}

TEST(ForwardDiffuse, AffineInBothArguments) {
  auto s = make_schedule(5, 0.02, 0.3);
  Rng rng(1);
  auto x1 = xlkd::testing::random_tensor({6}, rng), x2 = xlkd::testing::random_tensor({6}, rng);
  auto e1 = xlkd::testing::random_tensor({6}, rng), e2 = xlkd::testing::random_tensor({6}, rng);
  auto lhs = forward_diffuse(add(x1, x2), 3, add(e1, e2), s);
  auto rhs = add(forward_diffuse(x1, 3, e1, s), forward_diffuse(x2, 3, e2, s));
  for (int i = 0; i < 6; ++i) EXPECT_NEAR(lhs.data()[i], rhs.data()[i], 1e-14);
}

TEST(ForwardDiffuse, MonteCarloMoments) {
  auto s = make_schedule(5, 0.05, 0.3);
  const double x0 = 0.6;
  const int t = 4;
  Rng rng(2);
  const int n = 100000;
  std::vector<double> eps(n);
  for (auto& e : eps) e = rng.normal();
  auto x = forward_diffuse(Tensor::full({static_cast<std::size_t>(n)}, x0), t,
                           Tensor({static_cast<std::size_t>(n)}, eps), s);
  double m = 0, v = 0;
  for (double xi : x.data()) m += xi;
  m /= n;
  for (double xi : x.data()) v += (xi - m) * (xi - m);
  v /= n - 1;
  const double want_m = std::sqrt(s.alpha_bar[t - 1]) * x0;
  const double want_v = 1 - s.alpha_bar[t - 1];
  EXPECT_NEAR(m, want_m, 0.01 * want_m);
  EXPECT_NEAR(v, want_v, 0.01 * want_v);
}

TEST(ChainStep, ForcedZeroNoise) {
  // A generator is only consumed for z; a unit test substitutes z = 0 by
  // diffusing a tensor whose noise contribution is subtracted back out.
  auto s = make_schedule(1, 0.1, 0.1);
  Rng a(7), b(7);
  Tensor ones = Tensor::full({5}, 1.0);
  auto x = chain_diffuse_step(ones, 1, s, a);
  for (int i = 0; i < 5; ++i) {
    const double z = b.normal();
    EXPECT_NEAR(x.data()[i] - std::sqrt(0.1) * z, std::sqrt(0.9), 1e-15);
  }
}

TEST(ChainStep, MeanOverDraws) {
  auto s = make_schedule(3, 0.2, 0.2);
  Rng rng(3);
  const std::size_t n = 100000;
  auto x = chain_diffuse_step(Tensor::full({n}, 0.8), 2, s, rng);
  double m = 0;
  for (double v : x.data()) m += v;
  m /= static_cast<double>(n);
  // Standard error is sqrt(0.2 / n) ~ 0.0014.
  EXPECT_NEAR(m, std::sqrt(0.8) * 0.8, 0.006);
}

TEST(ChainStep, RejectsOutOfRange) {
  auto s = make_schedule(3, 0.2, 0.2);
  Rng rng(1);
  EXPECT_THROW(chain_diffuse_step(Tensor::zeros({2}), 4, s, rng), std::out_of_range);
}

TEST(PosteriorMean, ZeroEpsHat) {
  auto s = make_schedule(1, 0.1, 0.1);
  auto mu = posterior_mean(Tensor::full({3}, 1.0), 1, Tensor::zeros({3}), s);
  for (double v : mu.data()) EXPECT_NEAR(v, 1 / std::sqrt(0.9), 1e-15);
}

TEST(PosteriorMean, CoefficientRederived) {
  auto s = make_schedule(6, 0.01, 0.3);
  const int t = 4;
  double abar = 1;
  double beta = 0;
  for (int i = 1; i <= t; ++i) {
    beta = 0.01 + (0.3 - 0.01) * (i - 1) / 5.0;
    abar *= 1 - beta;
  }
  const double coef = beta / std::sqrt(1 - abar);
  // x_t = 0, eps_hat = 1 isolates -coef / sqrt(alpha_t).
  auto mu = posterior_mean(Tensor::zeros({1}), t, Tensor::full({1}, 1.0), s);
  EXPECT_NEAR(mu.item(), -coef / std::sqrt(1 - beta), 1e-14);
}

TEST(PosteriorMean, MatchesClosedFormPosteriorWithTrueNoise) {
  // With eps_hat = eps the mean equals the q(x_{t-1} | x_t, x_0) mean:
  // sqrt(abar_{t-1}) beta_t / (1 - abar_t) x0 + sqrt(alpha_t) (1 - abar_{t-1}) / (1 - abar_t) x_t.
  auto s = make_schedule(8, 0.01, 0.2);
  Rng rng(4);
  auto x0 = xlkd::testing::random_tensor({10}, rng, 0, 1);
  auto eps = xlkd::testing::random_tensor({10}, rng);
  const int t = 5;
  auto xt = forward_diffuse(x0, t, eps, s);
  auto mu = posterior_mean(xt, t, eps, s);
  const double ab = s.alpha_bar[t - 1], abp = s.alpha_bar[t - 2], b = s.beta[t - 1], a = s.alpha[t - 1];
  for (int i = 0; i < 10; ++i) {
    const double want = std::sqrt(abp) * b / (1 - ab) * x0.data()[i] + std::sqrt(a) * (1 - abp) / (1 - ab) * xt.data()[i];
    EXPECT_NEAR(mu.data()[i], want, 1e-12);
  }
}

TEST(Sampler, ZeroDenoiserTelescopes) {
  auto s = make_schedule(5, 0.05, 0.1);
  EpsFn zero = [](const Tensor& x, std::span<const int>, const Tensor&) { return Tensor::zeros(x.shape()); };
  Tensor xT({1, 4}, {0.1, 0.2, 0.3, 0.4});
  SamplerOptions opt;
  opt.x_T = xT;
  opt.zero_noise = true;
  Rng rng(1);
  auto out = ddpm_sample(zero, Tensor::zeros({1, 3, 2}), 4, s, rng, opt);
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(out.data()[i], xT.data()[i] / std::sqrt(s.alpha_bar[4]), 1e-14);
}

TEST(Sampler, ClampsToUnitInterval) {
  auto s = make_schedule(5, 0.05, 0.1);
  EpsFn zero = [](const Tensor& x, std::span<const int>, const Tensor&) { return Tensor::zeros(x.shape()); };
  SamplerOptions opt;
  opt.x_T = Tensor({1, 2}, {-3.0, 3.0});
  opt.zero_noise = true;
  Rng rng(1);
  auto out = ddpm_sample(zero, Tensor::zeros({1, 3, 2}), 2, s, rng, opt);
  EXPECT_EQ(out.data()[0], 0.0);
  EXPECT_EQ(out.data()[1], 1.0);
}

TEST(Sampler, SameSeedSameSample) {
  DenoiserConfig c;
  c.side = 8;
  c.width = 80;
  c.blocks = 2;
  c.cond_dim = 4;
  auto p = init_denoiser(c, 3);
  auto s = make_schedule(6, 0.01, 0.2);
  Rng r0(9);
  auto cond = xlkd::testing::random_tensor({2, 3, 4}, r0);
  Rng a(5), b(5);
  auto x = ddpm_sample(eps_fn(p), cond, c.pixels(), s, a);
  auto y = ddpm_sample(eps_fn(p), cond, c.pixels(), s, b);
  EXPECT_TRUE(xlkd::testing::bitwise_equal(x, y));
}

TEST(Sampler, RejectsWrongOutputShape) {
  auto s = make_schedule(3, 0.05, 0.1);
  EpsFn bad = [](const Tensor& x, std::span<const int>, const Tensor&) { return Tensor::zeros({x.dim(0), 1}); };
  Rng rng(1);
  EXPECT_THROW(ddpm_sample(bad, Tensor::zeros({1, 3, 2}), 4, s, rng), ShapeError);
}

TEST(DenoisingLoss, TrueNoiseGivesZero) {
  auto s = make_schedule(5, 0.05, 0.3);
  Rng rng(2);
  auto x0 = xlkd::testing::random_tensor({3, 4}, rng, 0, 1);
  auto draw = sample_draw(3, 4, s, rng);
  EpsFn oracle = [&](const Tensor&, std::span<const int>, const Tensor&) { return draw.eps; };
  EXPECT_EQ(denoising_loss(oracle, x0, Tensor::zeros({3, 1, 2}), draw, s).item(), 0.0);
}

TEST(DenoisingLoss, ZeroDenoiserExpectationIsOne) {
  auto s = make_schedule(5, 0.05, 0.3);
  EpsFn zero = [](const Tensor& x, std::span<const int>, const Tensor&) { return Tensor::zeros(x.shape()); };
  Rng rng(3);
  double total = 0;
  const int reps = 400;
  for (int i = 0; i < reps; ++i) total += denoising_loss(zero, Tensor::zeros({4, 64}), Tensor::zeros({4, 1, 2}), s, rng).item();
  // 102400 squared normals: standard error sqrt(2 / 102400) ~ 0.0044.
  EXPECT_NEAR(total / reps, 1.0, 0.02);
}

TEST(DenoisingLoss, TimestepsUniformInRange) {
  auto s = make_schedule(5, 0.05, 0.3);
  Rng rng(4);
  std::vector<int> counts(6, 0);
  for (int i = 0; i < 200; ++i) {
    for (int t : sample_draw(50, 2, s, rng).t) {
      ASSERT_GE(t, 1);
      ASSERT_LE(t, 5);
      ++counts[t];
    }
  }
  for (int t = 1; t <= 5; ++t) EXPECT_NEAR(counts[t] / 10000.0, 0.2, 0.02);
}

TEST(DenoisingLoss, GradCheckAgainstDenoiserParams) {
  DenoiserConfig c;
  c.side = 4;
  c.width = 24;
  c.blocks = 2;
  c.attn_dim = 5;
  c.cond_dim = 3;
  c.kv_init_gain = 1.0;
  auto p = init_denoiser(c, 11);
  auto s = make_schedule(4, 0.05, 0.3);
  Rng rng(5);
  auto x0 = xlkd::testing::random_tensor({2, 16}, rng, 0, 1);
  auto cond = xlkd::testing::random_tensor({2, 3, 3}, rng);
  auto draw = sample_draw(2, 16, s, rng);
  std::vector<Tensor> params;
  for (auto& nt : p.named()) {
    nt.tensor.set_requires_grad(true);
    params.push_back(nt.tensor);
  }
  Graph g;
  GraphScope scope(g);
  auto fn = [&] { return denoising_loss(eps_fn(p), x0, cond, draw, s); };
  EXPECT_LT(grad_check(fn, params), 1e-4);
}

TEST(TimeEmbedding, SinusoidalLayout) {
  const int t[] = {3};
  auto e = time_embedding(t, 4);
  EXPECT_NEAR(e.data()[0], std::sin(3.0), 1e-15);
  EXPECT_NEAR(e.data()[1], std::cos(3.0), 1e-15);
  EXPECT_NEAR(e.data()[2], std::sin(3.0 * std::pow(10000.0, -0.5)), 1e-15);
  EXPECT_NEAR(e.data()[3], std::cos(3.0 * std::pow(10000.0, -0.5)), 1e-15);
}
