#pragma once

// DDPM forward noising, ancestral sampling and the epsilon-prediction
// training objective. Images travel as rows of a [n, G*G] tensor; t is
// 1-based throughout.

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "xlkd/rng.hpp"
#include "xlkd/tensor.hpp"

namespace xlkd {

struct ImageSample {
  std::size_t side = 0;          // G
  std::vector<double> pixels;    // G*G, row-major
  std::optional<int> semantics_id;

  Tensor as_tensor() const { return Tensor({1, pixels.size()}, pixels); }
};

struct NoiseSchedule {
  int T = 0;
  std::vector<double> beta;       // beta[t-1]
  std::vector<double> alpha;      // 1 - beta
  std::vector<double> alpha_bar;  // running product of alpha
  std::vector<double> sigma2;     // reverse-step variance, equal to beta

  double beta_at(int t) const { return beta.at(static_cast<std::size_t>(t - 1)); }
  double alpha_at(int t) const { return alpha.at(static_cast<std::size_t>(t - 1)); }
  double alpha_bar_at(int t) const { return alpha_bar.at(static_cast<std::size_t>(t - 1)); }
  double sigma2_at(int t) const { return sigma2.at(static_cast<std::size_t>(t - 1)); }
};

// Linear beta from beta_start to beta_end inclusive.
NoiseSchedule make_schedule(int T, double beta_start, double beta_end);

void check_timestep(const NoiseSchedule& s, int t);

// sqrt(abar_t) x0 + sqrt(1 - abar_t) eps. Differentiable in x0 and eps.
Tensor forward_diffuse(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& s);
// Row i of x0 is noised to timestep t[i] with eps row i. Values only.
Tensor forward_diffuse_rows(const Tensor& x0, std::span<const int> t, const Tensor& eps, const NoiseSchedule& s);

// One Markov step: sqrt(1 - beta_t) x_prev + sqrt(beta_t) z, z ~ N(0, I).
Tensor chain_diffuse_step(const Tensor& x_prev, int t, const NoiseSchedule& s, Rng& rng);

// (1/sqrt(alpha_t)) (x_t - beta_t / sqrt(1 - abar_t) eps_hat).
Tensor posterior_mean(const Tensor& x_t, int t, const Tensor& eps_hat, const NoiseSchedule& s);

// Predicts noise for a batch: x_t [n, P], one timestep per row, condition
// batch [n, L, d]. Returns [n, P].
using EpsFn = std::function<Tensor(const Tensor& x_t, std::span<const int> t, const Tensor& cond)>;

struct SamplerOptions {
  std::optional<Tensor> x_T;  // start point [n, P]; drawn from N(0, I) when absent
  bool zero_noise = false;    // replace every injected z by 0
};

// Ancestral sampling from t = T down to 1; the t = 1 step adds no noise and
// the result is clamped to [0, 1]. Returns [n, P] with n = cond.dim(0).
Tensor ddpm_sample(const EpsFn& fn, const Tensor& cond, std::size_t pixels, const NoiseSchedule& s, Rng& rng,
                   const SamplerOptions& options = {});

ImageSample ddpm_sample_one(const EpsFn& fn, const Tensor& cond, std::size_t side, const NoiseSchedule& s, Rng& rng);

// Timesteps and noise consumed by one training pass.
struct DiffusionDraw {
  std::vector<int> t;
  Tensor eps;  // [n, P]
};

DiffusionDraw sample_draw(std::size_t n, std::size_t pixels, const NoiseSchedule& s, Rng& rng);

// mean over pixels and rows of (eps - eps_hat(x_t, t, cond))^2.
Tensor denoising_loss(const EpsFn& fn, const Tensor& x0, const Tensor& cond, const DiffusionDraw& draw,
                      const NoiseSchedule& s);
Tensor denoising_loss(const EpsFn& fn, const Tensor& x0, const Tensor& cond, const NoiseSchedule& s, Rng& rng);

// Sinusoidal embedding with base 10000: [sin(t w_0), cos(t w_0), ...],
// w_i = 10000^(-2i/dim). Output [t.size(), dim].
Tensor time_embedding(std::span<const int> t, std::size_t dim);

}  // namespace xlkd
