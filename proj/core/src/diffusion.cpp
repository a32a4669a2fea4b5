#include "xlkd/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace xlkd {

NoiseSchedule make_schedule(int T, double beta_start, double beta_end) {
  if (T < 1) throw std::invalid_argument("make_schedule: T must be >= 1");
  if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0)) {
    throw std::invalid_argument("make_schedule: need 0 < beta_start <= beta_end < 1");
  }
  NoiseSchedule s;
  s.T = T;
  double running = 1.0;
  for (int i = 0; i < T; ++i) {
    const double frac = T == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(T - 1);
    const double b = beta_start + (beta_end - beta_start) * frac;
    s.beta.push_back(b);
    s.alpha.push_back(1.0 - b);
    running *= 1.0 - b;
    s.alpha_bar.push_back(running);
    s.sigma2.push_back(b);
  }
  return s;
}

void check_timestep(const NoiseSchedule& s, int t) {
  if (t < 1 || t > s.T) {
    throw std::out_of_range("timestep " + std::to_string(t) + " outside [1, " + std::to_string(s.T) + "]");
  }
}

Tensor forward_diffuse(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& s) {
  check_timestep(s, t);
  if (x0.shape() != eps.shape()) {
    throw ShapeError("forward_diffuse: eps " + shape_str(eps.shape()) + " vs image " + shape_str(x0.shape()));
  }
  const double ab = s.alpha_bar_at(t);
  return add(scale(x0, std::sqrt(ab)), scale(eps, std::sqrt(1.0 - ab)));
}

Tensor forward_diffuse_rows(const Tensor& x0, std::span<const int> t, const Tensor& eps, const NoiseSchedule& s) {
  if (x0.shape() != eps.shape() || x0.rank() != 2 || x0.dim(0) != t.size()) {
    throw ShapeError("forward_diffuse_rows: x0 " + shape_str(x0.shape()) + ", eps " + shape_str(eps.shape()) +
                     ", " + std::to_string(t.size()) + " timesteps");
  }
  const std::size_t n = x0.dim(0), p = x0.dim(1);
  std::vector<double> out(n * p);
  const auto xd = x0.data();
  const auto ed = eps.data();
  for (std::size_t i = 0; i < n; ++i) {
    check_timestep(s, t[i]);
    const double a = std::sqrt(s.alpha_bar_at(t[i]));
    const double b = std::sqrt(1.0 - s.alpha_bar_at(t[i]));
    for (std::size_t j = 0; j < p; ++j) out[i * p + j] = a * xd[i * p + j] + b * ed[i * p + j];
  }
  return Tensor(x0.shape(), std::move(out));
}

Tensor chain_diffuse_step(const Tensor& x_prev, int t, const NoiseSchedule& s, Rng& rng) {
  check_timestep(s, t);
  const double keep = std::sqrt(1.0 - s.beta_at(t));
  const double noise = std::sqrt(s.beta_at(t));
  std::vector<double> out(x_prev.numel());
  const auto xd = x_prev.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = keep * xd[i] + noise * rng.normal();
  return Tensor(x_prev.shape(), std::move(out));
}

Tensor posterior_mean(const Tensor& x_t, int t, const Tensor& eps_hat, const NoiseSchedule& s) {
  check_timestep(s, t);
  if (x_t.shape() != eps_hat.shape()) {
    throw ShapeError("posterior_mean: eps_hat " + shape_str(eps_hat.shape()) + " vs x_t " + shape_str(x_t.shape()));
  }
  const double coef = s.beta_at(t) / std::sqrt(1.0 - s.alpha_bar_at(t));
  return scale(sub(x_t, scale(eps_hat, coef)), 1.0 / std::sqrt(s.alpha_at(t)));
}

Tensor ddpm_sample(const EpsFn& fn, const Tensor& cond, std::size_t pixels, const NoiseSchedule& s, Rng& rng,
                   const SamplerOptions& options) {
  NoGradScope no_grad;
  const std::size_t n = cond.dim(0);
  Tensor x;
  if (options.x_T) {
    if (options.x_T->shape() != Shape{n, pixels}) {
      throw ShapeError("ddpm_sample: x_T " + shape_str(options.x_T->shape()) + " vs " + shape_str({n, pixels}));
    }
    x = options.x_T->detach();
  } else {
    std::vector<double> start(n * pixels);
    for (auto& v : start) v = rng.normal();
    x = Tensor({n, pixels}, std::move(start));
  }
  std::vector<int> steps(n);
  for (int t = s.T; t >= 1; --t) {
    std::fill(steps.begin(), steps.end(), t);
    const Tensor eps_hat = fn(x, steps, cond);
    if (eps_hat.shape() != x.shape()) {
      throw ShapeError("ddpm_sample: denoiser returned " + shape_str(eps_hat.shape()) + ", expected " +
                       shape_str(x.shape()));
    }
    Tensor mu = posterior_mean(x, t, eps_hat, s);
    if (t > 1) {
      std::vector<double> next(mu.data().begin(), mu.data().end());
      const double sd = std::sqrt(s.sigma2_at(t));
      for (auto& v : next) {
        const double z = options.zero_noise ? 0.0 : rng.normal();
        v += sd * z;
      }
      x = Tensor(mu.shape(), std::move(next));
    } else {
      x = std::move(mu);
    }
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  for (auto& v : out) v = std::clamp(v, 0.0, 1.0);
  return Tensor({n, pixels}, std::move(out));
}

ImageSample ddpm_sample_one(const EpsFn& fn, const Tensor& cond, std::size_t side, const NoiseSchedule& s, Rng& rng) {
  Tensor batch_cond = cond.rank() == 2 ? reshape(cond.detach(), {1, cond.dim(0), cond.dim(1)}) : cond;
  const Tensor img = ddpm_sample(fn, batch_cond, side * side, s, rng);
  ImageSample out;
  out.side = side;
  out.pixels.assign(img.data().begin(), img.data().end());
  return out;
}

DiffusionDraw sample_draw(std::size_t n, std::size_t pixels, const NoiseSchedule& s, Rng& rng) {
  DiffusionDraw d;
  d.t.resize(n);
  for (auto& t : d.t) t = static_cast<int>(rng.uniform_int(1, s.T));
  std::vector<double> eps(n * pixels);
  for (auto& v : eps) v = rng.normal();
  d.eps = Tensor({n, pixels}, std::move(eps));
  return d;
}

Tensor denoising_loss(const EpsFn& fn, const Tensor& x0, const Tensor& cond, const DiffusionDraw& draw,
                      const NoiseSchedule& s) {
  const Tensor x_t = forward_diffuse_rows(x0, draw.t, draw.eps, s);
  const Tensor eps_hat = fn(x_t, draw.t, cond);
  return mse(draw.eps, eps_hat);
}

Tensor denoising_loss(const EpsFn& fn, const Tensor& x0, const Tensor& cond, const NoiseSchedule& s, Rng& rng) {
  if (x0.rank() != 2) throw ShapeError("denoising_loss: x0 must be [n, P], got " + shape_str(x0.shape()));
  const DiffusionDraw draw = sample_draw(x0.dim(0), x0.dim(1), s, rng);
  return denoising_loss(fn, x0, cond, draw, s);
}

Tensor time_embedding(std::span<const int> t, std::size_t dim) {
  std::vector<double> out(t.size() * dim);
  for (std::size_t r = 0; r < t.size(); ++r) {
    for (std::size_t j = 0; j < dim; ++j) {
      const double w = std::pow(10000.0, -static_cast<double>(2 * (j / 2)) / static_cast<double>(dim));
      out[r * dim + j] = (j % 2 == 0) ? std::sin(t[r] * w) : std::cos(t[r] * w);
    }
  }
  return Tensor({t.size(), dim}, std::move(out));
}

}  // namespace xlkd
