#include <cmath>
#include <random>

#include "matten/diffusion.hpp"
#include "matten/error.hpp"

namespace matten::diffusion {

Tensor p_sample_loop(const Denoiser& denoiser, const Schedule& base, const Shape& shape,
                     std::uint64_t seed, const SampleOptions& options) {
  if (shape.empty() || shape[0] == 0) throw DimensionError("p_sample_loop: empty batch in " + to_string(shape));
  const Schedule s = options.steps != 0 && options.steps < base.size() ? respace(base, options.steps) : base;
  const std::size_t n = numel(shape), B = shape[0];
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  std::vector<double> z(n);
  for (auto& v : z) v = round_to(options.dtype, normal(rng));

  NoGradGuard no_grad;
  for (std::size_t step = s.size(); step-- > 0;) {
    const std::size_t t = s.timestep_map[step];
    const std::vector<std::size_t> ts(B, t);
    const ModelOutput out = denoiser(Tensor::from_vector(shape, z, options.dtype), ts);
    const StepMoments m = step_moments(s, step, z, out.eps_hat.data(), out.sigma_raw.data(), options.variance,
                                       options.clip_x0);
    for (std::size_t i = 0; i < n; ++i) {
      double v = m.mean[i];
      if (step > 0) v += std::exp(0.5 * m.log_variance[i]) * normal(rng);
      if (!std::isfinite(v)) {
        throw SamplingError("sampling went non-finite at timestep " + std::to_string(t),
                            static_cast<std::ptrdiff_t>(t));
      }
      z[i] = round_to(options.dtype, v);
    }
  }
  return Tensor::from_vector(shape, std::move(z), options.dtype);
}

Tensor p_sample_loop(const MattenModel& model, const Schedule& schedule, const Shape& shape,
                     std::span<const std::size_t> classes, std::uint64_t seed, SampleOptions options) {
  options.dtype = model.config().dtype;
  const std::vector<std::size_t> labels(classes.begin(), classes.end());
  return p_sample_loop(
      [&](const Tensor& z, std::span<const std::size_t> t) { return model.forward(z, t, labels); }, schedule,
      shape, seed, options);
}

}  // namespace matten::diffusion
