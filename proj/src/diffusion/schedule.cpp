#include <cmath>
#include <numeric>

#include "matten/diffusion.hpp"
#include "matten/error.hpp"

namespace matten::diffusion {

Schedule make_schedule(std::size_t steps) {
  if (steps < 2) throw ParameterError("schedule needs T >= 2, got " + std::to_string(steps));
  std::vector<double> betas(steps);
  for (std::size_t t = 0; t < steps; ++t) {
    betas[t] = 1e-4 + (2e-2 - 1e-4) * static_cast<double>(t) / static_cast<double>(steps - 1);
  }
  std::vector<std::size_t> map(steps);
  std::iota(map.begin(), map.end(), 0);
  return schedule_from_betas(std::move(betas), std::move(map));
}

Schedule schedule_from_betas(std::vector<double> betas, std::vector<std::size_t> timestep_map) {
  const std::size_t T = betas.size();
  if (T == 0 || timestep_map.size() != T) throw ParameterError("schedule: empty or mismatched timestep map");
  Schedule s;
  s.beta = std::move(betas);
  s.timestep_map = std::move(timestep_map);
  for (double b : s.beta) {
    if (!(b > 0.0 && b < 1.0)) throw ParameterError("schedule: beta outside (0, 1)");
  }
  double running = 1.0;
  for (std::size_t t = 0; t < T; ++t) {
    const double beta = s.beta[t], alpha = 1.0 - beta;
    const double prev = running;
    running *= alpha;
    s.alpha.push_back(alpha);
    s.alpha_bar.push_back(running);
    s.alpha_bar_prev.push_back(prev);
    s.sqrt_alpha_bar.push_back(std::sqrt(running));
    s.sqrt_one_minus_alpha_bar.push_back(std::sqrt(1.0 - running));
    s.sqrt_recip_alpha_bar.push_back(std::sqrt(1.0 / running));
    s.sqrt_recipm1_alpha_bar.push_back(std::sqrt(1.0 / running - 1.0));
    s.posterior_variance.push_back(beta * (1.0 - prev) / (1.0 - running));
    s.log_beta.push_back(std::log(beta));
    s.posterior_coef_x0.push_back(beta * std::sqrt(prev) / (1.0 - running));
    s.posterior_coef_xt.push_back((1.0 - prev) * std::sqrt(alpha) / (1.0 - running));
  }
  for (std::size_t t = 0; t < T; ++t) {
    const double v = t == 0 ? (T > 1 ? s.posterior_variance[1] : s.beta[0]) : s.posterior_variance[t];
    s.posterior_log_variance.push_back(std::log(v));
  }
  return s;
}

Schedule respace(const Schedule& base, std::size_t count) {
  const std::size_t T = base.size();
  if (count == 0 || count > T) {
    throw ParameterError("respace: " + std::to_string(count) + " steps from a " + std::to_string(T) + "-step schedule");
  }
  std::vector<std::size_t> kept;
  if (count == 1) {
    kept.push_back(T - 1);
  } else {
    for (std::size_t k = 0; k < count; ++k) {
      kept.push_back(static_cast<std::size_t>(
          std::llround(static_cast<double>(k) * static_cast<double>(T - 1) / static_cast<double>(count - 1))));
    }
  }
  std::vector<double> betas;
  std::vector<std::size_t> map;
  double last = 1.0;
  for (auto i : kept) {
    betas.push_back(1.0 - base.alpha_bar[i] / last);
    last = base.alpha_bar[i];
    map.push_back(base.timestep_map[i]);
  }
  return schedule_from_betas(std::move(betas), std::move(map));
}

Tensor q_sample(const Schedule& schedule, const Tensor& z0, std::span<const std::size_t> t,
                const Tensor& eps) {
  if (z0.shape() != eps.shape()) {
    throw DimensionError("q_sample: z0 " + to_string(z0.shape()) + " vs eps " + to_string(eps.shape()));
  }
  if (z0.rank() == 0 || z0.extent(0) != t.size()) {
    throw DimensionError("q_sample: " + std::to_string(t.size()) + " timesteps for " + to_string(z0.shape()));
  }
  for (auto ti : t) {
    if (ti >= schedule.size()) {
      throw IndexError("timestep " + std::to_string(ti) + " outside [0, " + std::to_string(schedule.size()) + ")");
    }
  }
  const std::size_t B = t.size(), per = z0.numel() / B;
  const auto x = z0.data(), e = eps.data();
  std::vector<double> out(z0.numel());
  std::vector<double> ca(B), cb(B);
  for (std::size_t b = 0; b < B; ++b) {
    ca[b] = schedule.sqrt_alpha_bar[t[b]];
    cb[b] = schedule.sqrt_one_minus_alpha_bar[t[b]];
    for (std::size_t i = b * per; i < (b + 1) * per; ++i) out[i] = ca[b] * x[i] + cb[b] * e[i];
  }
  return Tensor::make_op(z0.shape(), promote(z0.dtype(), eps.dtype()), std::move(out), {z0, eps},
                         [ca, cb, per](std::span<const double> g, GradSpans grads) {
                           for (std::size_t i = 0; i < g.size(); ++i) {
                             const std::size_t b = i / per;
                             if (!grads[0].empty()) grads[0][i] += ca[b] * g[i];
                             if (!grads[1].empty()) grads[1][i] += cb[b] * g[i];
                           }
                         });
}

}  // namespace matten::diffusion
