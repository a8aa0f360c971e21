#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "matten/model.hpp"
#include "matten/tensor.hpp"

namespace matten::diffusion {

/// Weight of the variational term in the hybrid objective.
inline constexpr double kVlbWeight = 1e-3;

/// Noise schedule over `size()` steps, with every derived table. A respaced
/// schedule keeps the training timestep of each of its steps in
/// `timestep_map`; the model is always conditioned on that value.
struct Schedule {
  std::vector<double> beta, alpha, alpha_bar, alpha_bar_prev;
  std::vector<double> sqrt_alpha_bar, sqrt_one_minus_alpha_bar;
  std::vector<double> sqrt_recip_alpha_bar, sqrt_recipm1_alpha_bar;
  std::vector<double> posterior_variance;
  /// log of the posterior variance, with step 0 borrowing step 1's value.
  std::vector<double> posterior_log_variance;
  std::vector<double> log_beta;
  std::vector<double> posterior_coef_x0, posterior_coef_xt;
  std::vector<std::size_t> timestep_map;

  std::size_t size() const { return beta.size(); }
};

/// Linear betas from 1e-4 to 2e-2. T < 2 is a ParameterError.
Schedule make_schedule(std::size_t steps);

/// Derived tables for arbitrary betas in (0, 1).
Schedule schedule_from_betas(std::vector<double> betas, std::vector<std::size_t> timestep_map);

/// `count` evenly strided steps of `base`, first and last included, with
/// betas recomputed so the kept alpha_bar values are unchanged.
Schedule respace(const Schedule& base, std::size_t count);

/// sqrt(abar_t) z0 + sqrt(1 - abar_t) eps, with t per batch element.
Tensor q_sample(const Schedule& schedule, const Tensor& z0, std::span<const std::size_t> t,
                const Tensor& eps);

/// KL(N(mean1, e^logvar1) || N(mean2, e^logvar2)) in nats.
double normal_kl(double mean1, double logvar1, double mean2, double logvar2);

/// log P(x) of a Gaussian discretized into 255 bins over [-1, 1], with the
/// outer bins open-ended.
double discretized_gaussian_log_likelihood(double x, double mean, double log_scale);

/// Reverse-step mean and log variance, elementwise.
struct StepMoments {
  std::vector<double> mean, log_variance;
};

enum class Variance { Learned, Posterior, Beta };

StepMoments step_moments(const Schedule& schedule, std::size_t step, std::span<const double> z_t,
                         std::span<const double> eps_hat, std::span<const double> sigma_raw,
                         Variance variance, bool clip_x0);

/// Variational term T * E[L_t] in bits per element, averaged over the batch.
/// L_t is the posterior KL for t > 0 and the discretized decoder NLL at t = 0.
/// Only `sigma_raw` carries a gradient; the mean uses `eps_hat` as a constant.
Tensor vlb_term(const Schedule& schedule, const Tensor& z0, const Tensor& z_t,
                std::span<const std::size_t> t, const Tensor& eps_hat, const Tensor& sigma_raw);

struct LossTerms {
  Tensor simple, vlb, total;
};

/// loss_simple + lambda * loss_vlb from one forward pass.
LossTerms hybrid_loss(const MattenModel& model, const Schedule& schedule, const Tensor& z0,
                      std::span<const std::size_t> t, const Tensor& eps,
                      std::span<const std::size_t> classes = {}, double lambda = kVlbWeight);

/// Mean of (eps - eps_hat)^2 over every element.
Tensor loss_simple(const MattenModel& model, const Schedule& schedule, const Tensor& z0,
                   std::span<const std::size_t> t, const Tensor& eps,
                   std::span<const std::size_t> classes = {});

Tensor loss_vlb(const MattenModel& model, const Schedule& schedule, const Tensor& z0,
                std::span<const std::size_t> t, const Tensor& eps,
                std::span<const std::size_t> classes = {});

/// Anything that predicts (eps_hat, sigma_raw) for z_t at the given
/// training timesteps.
using Denoiser = std::function<ModelOutput(const Tensor& z_t, std::span<const std::size_t> t)>;

struct SampleOptions {
  /// 0 runs every step of the schedule; otherwise a respaced subsequence.
  std::size_t steps = 0;
  Variance variance = Variance::Learned;
  bool clip_x0 = true;
  DType dtype = DType::F32;
};

/// Ancestral sampling from pure noise. Normals come from one mt19937_64
/// seeded with `seed`: the initial state first, then each step's noise.
/// A non-finite state raises SamplingError carrying the training timestep.
Tensor p_sample_loop(const Denoiser& denoiser, const Schedule& schedule, const Shape& shape,
                     std::uint64_t seed, const SampleOptions& options = {});

Tensor p_sample_loop(const MattenModel& model, const Schedule& schedule, const Shape& shape,
                     std::span<const std::size_t> classes, std::uint64_t seed,
                     SampleOptions options = {});

/// ema <- decay * ema + (1 - decay) * param, matched by name and shape.
void ema_update(std::span<const NamedTensor> ema, std::span<const NamedTensor> params,
                double decay);

/// Detached copies of `params` to seed an EMA.
std::vector<NamedTensor> clone_parameters(std::span<const NamedTensor> params);

/// Constant decay, optionally switching to `late` from step `switch_step` on.
struct EmaSchedule {
  double decay = 0.99;
  std::size_t switch_step = 0;
  double late = 0.99;

  double at(std::size_t step) const {
    return switch_step != 0 && step >= switch_step ? late : decay;
  }
};

}  // namespace matten::diffusion
