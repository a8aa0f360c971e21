#include <algorithm>
#include <cmath>
#include <numbers>

#include "matten/diffusion.hpp"
#include "matten/error.hpp"
#include "matten/ops.hpp"

namespace matten::diffusion {

namespace {

constexpr double kBin = 1.0 / 255.0;
constexpr double kProbFloor = 1e-12;

double cdf(double u) { return 0.5 * std::erfc(-u / std::numbers::sqrt2); }
double upper_tail(double u) { return 0.5 * std::erfc(u / std::numbers::sqrt2); }
double pdf(double u) { return std::exp(-0.5 * u * u) / std::sqrt(2.0 * std::numbers::pi); }

// log P and d log P / d log_variance for the discretized decoder.
std::pair<double, double> decoder_log_prob(double x, double mean, double log_variance) {
  const double inv = std::exp(-0.5 * log_variance);
  const double up = inv * (x - mean + kBin), lo = inv * (x - mean - kBin);
  double p, dp;
  if (x < -0.999) {
    p = cdf(up);
    dp = pdf(up) * (-0.5 * up);
  } else if (x > 0.999) {
    p = upper_tail(lo);
    dp = -pdf(lo) * (-0.5 * lo);
  } else {
    p = cdf(up) - cdf(lo);
    dp = pdf(up) * (-0.5 * up) - pdf(lo) * (-0.5 * lo);
  }
  if (p < kProbFloor) return {std::log(kProbFloor), 0.0};
  return {std::log(p), dp / p};
}

void check_batch(const Tensor& x, std::span<const std::size_t> t, const Schedule& s, const char* what) {
  if (x.rank() == 0 || x.extent(0) != t.size()) {
    throw DimensionError(std::string(what) + ": " + std::to_string(t.size()) + " timesteps for " + to_string(x.shape()));
  }
  for (auto ti : t) {
    if (ti >= s.size()) {
      throw IndexError("timestep " + std::to_string(ti) + " outside [0, " + std::to_string(s.size()) + ")");
    }
  }
}

}  // namespace

double normal_kl(double mean1, double logvar1, double mean2, double logvar2) {
  const double d = mean1 - mean2;
  return 0.5 * (-1.0 + logvar2 - logvar1 + std::exp(logvar1 - logvar2) + d * d * std::exp(-logvar2));
}

double discretized_gaussian_log_likelihood(double x, double mean, double log_scale) {
  return decoder_log_prob(x, mean, 2.0 * log_scale).first;
}

StepMoments step_moments(const Schedule& s, std::size_t step, std::span<const double> z_t,
                         std::span<const double> eps_hat, std::span<const double> sigma_raw,
                         Variance variance, bool clip_x0) {
  const std::size_t n = z_t.size();
  StepMoments m{std::vector<double>(n), std::vector<double>(n)};
  const double min_log = s.posterior_log_variance[step], max_log = s.log_beta[step];
  for (std::size_t i = 0; i < n; ++i) {
    double x0 = s.sqrt_recip_alpha_bar[step] * z_t[i] - s.sqrt_recipm1_alpha_bar[step] * eps_hat[i];
    if (clip_x0) x0 = std::clamp(x0, -1.0, 1.0);
    m.mean[i] = s.posterior_coef_x0[step] * x0 + s.posterior_coef_xt[step] * z_t[i];
    switch (variance) {
      case Variance::Learned: {
        const double v = 0.5 * (sigma_raw[i] + 1.0);
        m.log_variance[i] = v * max_log + (1.0 - v) * min_log;
        break;
      }
      case Variance::Posterior: m.log_variance[i] = min_log; break;
      case Variance::Beta: m.log_variance[i] = max_log; break;
    }
  }
  return m;
}

Tensor vlb_term(const Schedule& s, const Tensor& z0, const Tensor& z_t, std::span<const std::size_t> t,
                const Tensor& eps_hat, const Tensor& sigma_raw) {
  check_batch(z0, t, s, "vlb_term");
  for (const Tensor* x : {&z_t, &eps_hat, &sigma_raw}) {
    if (x->shape() != z0.shape()) {
      throw DimensionError("vlb_term: " + to_string(x->shape()) + " vs " + to_string(z0.shape()));
    }
  }
  const std::size_t B = t.size(), per = z0.numel() / B;
  const double weight = static_cast<double>(s.size()) / (static_cast<double>(B * per) * std::numbers::ln2);
  const auto x0 = z0.data(), xt = z_t.data(), eh = eps_hat.data(), raw = sigma_raw.data();
  std::vector<double> dloss(z0.numel());
  double total = 0.0;
  for (std::size_t b = 0; b < B; ++b) {
    const std::size_t step = t[b];
    const auto range = [&](std::span<const double> v) { return v.subspan(b * per, per); };
    const StepMoments model = step_moments(s, step, range(xt), range(eh), range(raw), Variance::Learned, false);
    const double dlv_draw = 0.5 * (s.log_beta[step] - s.posterior_log_variance[step]);
    for (std::size_t i = 0; i < per; ++i) {
      const std::size_t k = b * per + i;
      const double lv = model.log_variance[i];
      double term, dterm;
      if (step == 0) {
        const auto [logp, dlogp] = decoder_log_prob(x0[k], model.mean[i], lv);
        term = -logp;
        dterm = -dlogp;
      } else {
        const double true_mean = s.posterior_coef_x0[step] * x0[k] + s.posterior_coef_xt[step] * xt[k];
        const double true_lv = s.posterior_log_variance[step];
        const double d = true_mean - model.mean[i];
        term = normal_kl(true_mean, true_lv, model.mean[i], lv);
        dterm = 0.5 * (1.0 - std::exp(true_lv - lv) - d * d * std::exp(-lv));
      }
      total += term;
      dloss[k] = weight * dterm * dlv_draw;
    }
  }
  return Tensor::make_op({}, sigma_raw.dtype(), {weight * total}, {sigma_raw},
                         [dloss = std::move(dloss)](std::span<const double> g, GradSpans grads) {
                           for (std::size_t i = 0; i < dloss.size(); ++i) grads[0][i] += g[0] * dloss[i];
                         });
}

LossTerms hybrid_loss(const MattenModel& model, const Schedule& schedule, const Tensor& z0,
                      std::span<const std::size_t> t, const Tensor& eps,
                      std::span<const std::size_t> classes, double lambda) {
  check_batch(z0, t, schedule, "hybrid_loss");
  const Tensor z_t = q_sample(schedule, z0, t, eps);
  std::vector<std::size_t> model_t(t.size());
  for (std::size_t b = 0; b < t.size(); ++b) model_t[b] = schedule.timestep_map[t[b]];
  const ModelOutput out = model.forward(z_t, model_t, classes);
  LossTerms terms;
  terms.simple = mse(out.eps_hat, eps);
  terms.vlb = vlb_term(schedule, z0, z_t, t, out.eps_hat.detach(), out.sigma_raw);
  terms.total = add(terms.simple, scale(terms.vlb, lambda));
  return terms;
}

Tensor loss_simple(const MattenModel& model, const Schedule& schedule, const Tensor& z0,
                   std::span<const std::size_t> t, const Tensor& eps, std::span<const std::size_t> classes) {
  return hybrid_loss(model, schedule, z0, t, eps, classes).simple;
}

Tensor loss_vlb(const MattenModel& model, const Schedule& schedule, const Tensor& z0,
                std::span<const std::size_t> t, const Tensor& eps, std::span<const std::size_t> classes) {
  return hybrid_loss(model, schedule, z0, t, eps, classes).vlb;
}

}  // namespace matten::diffusion
