#include <doctest.h>

#include <cmath>
#include <numbers>

#include "matten/diffusion.hpp"
#include "matten/error.hpp"
#include "matten/grad_check.hpp"
#include "matten/ops.hpp"
#include "support.hpp"

using namespace matten;
using namespace matten::diffusion;

namespace {

ModelConfig tiny(int variant) {
  ModelConfig c;
  c.variant = variant;
  c.layers = 1;
  c.hidden = 8;
  c.state = 4;
  c.patch = 2;
  c.in_channels = 1;
  c.heads = 2;
  c.timesteps = 10;
  c.num_classes = 2;
  c.dtype = DType::F64;
  return c;
}

void randomize(const MattenModel& m, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 0.3);
  for (const auto& p : m.parameters()) {
    auto v = p.tensor.to_vector();
    for (auto& x : v) x += g(rng);
    const_cast<Tensor&>(p.tensor).assign(v);
  }
}

Tensor randn64(Shape shape, std::uint64_t seed, double sd = 1.0) {
  std::mt19937_64 rng(seed);
  return Tensor::randn(std::move(shape), rng, sd, DType::F64);
}

// f here is scaled by T; see the model gradient tests for the step choice.
GradCheckOptions fd_options(std::size_t coords = 0) {
  GradCheckOptions opt;
  opt.step = 1e-3;
  opt.richardson = true;
  opt.max_coords_per_param = coords;
  return opt;
}

}  // namespace

TEST_CASE("schedule") {
  const auto s = make_schedule(1000);
  CHECK(s.size() == 1000);
  CHECK(s.beta[0] == doctest::Approx(1e-4).epsilon(1e-14));
  CHECK(s.beta[999] == doctest::Approx(2e-2).epsilon(1e-14));
  for (std::size_t t = 1; t < 1000; ++t) {
    CHECK(s.alpha_bar[t] < s.alpha_bar[t - 1]);
    CHECK(s.beta[t] >= s.beta[t - 1]);
  }
  CHECK(s.alpha_bar[0] > 0.9999 - 1e-12);
  CHECK(s.alpha_bar_prev[0] == 1.0);
  CHECK(s.posterior_variance[0] == 0.0);
  CHECK(s.posterior_log_variance[0] == std::log(s.posterior_variance[1]));

  const auto four = make_schedule(4);
  CHECK(four.beta[1] == doctest::Approx(0.006733333333333334).epsilon(1e-13));
  CHECK(four.posterior_variance[1] == doctest::Approx(9.85462957813289e-05).epsilon(1e-12));

  CHECK_THROWS_AS(make_schedule(1), ParameterError);
  CHECK_THROWS_AS(schedule_from_betas({0.1, 1.0}, {0, 1}), ParameterError);
}

TEST_CASE("respacing keeps alpha_bar") {
  const auto base = make_schedule(1000);
  const auto r = respace(base, 50);
  CHECK(r.size() == 50);
  CHECK(r.timestep_map.front() == 0);
  CHECK(r.timestep_map.back() == 999);
  for (std::size_t i = 0; i < 50; ++i)
    CHECK(r.alpha_bar[i] == doctest::Approx(base.alpha_bar[r.timestep_map[i]]).epsilon(1e-12));
  const auto same = respace(base, 1000);
  for (std::size_t i = 0; i < 1000; i += 97) CHECK(same.beta[i] == doctest::Approx(base.beta[i]).epsilon(1e-9));
  CHECK(respace(base, 1).timestep_map == std::vector<std::size_t>{999});
  CHECK_THROWS_AS(respace(base, 0), ParameterError);
}

TEST_CASE("q_sample") {
  const auto z0 = randn64({2, 3}, 1), eps = randn64({2, 3}, 2);
  SUBCASE("abar = 0.25") {
    const auto s = schedule_from_betas({0.75, 0.5}, {0, 1});
    const std::vector<std::size_t> t{0, 0};
    const auto zt = q_sample(s, z0, t, eps);
    for (std::size_t i = 0; i < 6; ++i)
      CHECK(zt.data()[i] == doctest::Approx(0.5 * z0.data()[i] + std::sqrt(0.75) * eps.data()[i]).epsilon(1e-14));
  }
  SUBCASE("abar near 1 and near 0") {
    const auto s = schedule_from_betas({1e-15, 1.0 - 1e-15}, {0, 1});
    const std::vector<std::size_t> t{0, 1};
    const auto zt = q_sample(s, z0, t, eps);
    for (std::size_t i = 0; i < 3; ++i) CHECK(zt.data()[i] == doctest::Approx(z0.data()[i]).epsilon(1e-7));
    for (std::size_t i = 3; i < 6; ++i) CHECK(zt.data()[i] == doctest::Approx(eps.data()[i]).epsilon(1e-7));
  }
  SUBCASE("errors") {
    const auto s = make_schedule(10);
    const std::vector<std::size_t> bad{0, 10}, one{0};
    CHECK_THROWS_AS(q_sample(s, z0, bad, eps), IndexError);
    CHECK_THROWS_AS(q_sample(s, z0, one, eps), DimensionError);
  }
}

TEST_CASE("forward process statistics") {
  const auto s = make_schedule(1000);
  const std::size_t n = 20000, t = 400;
  const double x = 0.7;
  const auto z0 = Tensor::full({n, 1}, x, DType::F64);
  const auto eps = randn64({n, 1}, 3);
  const std::vector<std::size_t> ts(n, t);
  const auto zt = q_sample(s, z0, ts, eps);
  double mean = 0.0, sq = 0.0;
  for (double v : zt.data()) mean += v;
  mean /= n;
  for (double v : zt.data()) sq += (v - mean) * (v - mean);
  const double var = sq / (n - 1), want_var = 1.0 - s.alpha_bar[t];
  CHECK(std::abs(mean - s.sqrt_alpha_bar[t] * x) <= 3.0 * std::sqrt(want_var / n));
  CHECK(std::abs(var - want_var) <= 3.0 * want_var * std::sqrt(2.0 / (n - 1)));
}

TEST_CASE("gaussian helpers") {
  CHECK(normal_kl(0.0, 1.0, 0.0, 0.0) == doctest::Approx((std::numbers::e - 2.0) / 2.0).epsilon(1e-14));
  CHECK(normal_kl(0.3, -0.2, 0.3, -0.2) == 0.0);
  std::mt19937_64 rng(4);
  std::normal_distribution<double> g;
  for (int i = 0; i < 1000; ++i) CHECK(normal_kl(g(rng), g(rng), g(rng), g(rng)) >= 0.0);

  // 256 pixel levels partition the line.
  for (double mean : {-1.0, 0.0, 0.37}) {
    for (double log_scale : {-3.0, -1.0, 0.5}) {
      double total = 0.0;
      for (int k = 0; k < 256; ++k) total += std::exp(discretized_gaussian_log_likelihood(k / 127.5 - 1.0, mean, log_scale));
      CHECK(total == doctest::Approx(1.0).epsilon(1e-9));
    }
  }
}

TEST_CASE("vlb term") {
  const auto s = make_schedule(1000);
  const auto z0 = randn64({2, 2, 4, 4, 1}, 5, 0.5), eps = randn64({2, 2, 4, 4, 1}, 6);
  SUBCASE("exact posterior gives zero KL") {
    const std::vector<std::size_t> t{10, 500};
    const auto zt = q_sample(s, z0, t, eps);
    const auto raw = Tensor::full(z0.shape(), -1.0, DType::F64);
    CHECK(vlb_term(s, z0, zt, t, eps, raw).item() == doctest::Approx(0.0).scale(1.0).epsilon(1e-9));
  }
  SUBCASE("non-negative over random batches") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      std::mt19937_64 rng(seed);
      const std::vector<std::size_t> t{1 + rng() % 999, 1 + rng() % 999};
      const auto zt = q_sample(s, z0, t, eps);
      CHECK(vlb_term(s, z0, zt, t, randn64(z0.shape(), seed + 100), randn64(z0.shape(), seed + 200, 0.5)).item() >= 0.0);
    }
  }
  SUBCASE("gradient reaches sigma_raw only") {
    for (std::size_t t0 : {0, 1, 700}) {
      const std::vector<std::size_t> t{t0, 3};
      const auto zt = q_sample(s, z0, t, eps);
      auto raw = randn64(z0.shape(), 7, 0.5).set_requires_grad();
      auto eh = randn64(z0.shape(), 8).set_requires_grad();
      const std::vector<NamedTensor> p{{"raw", raw}, {"eps_hat", eh}};
      const auto report = grad_check([&] { return vlb_term(s, z0, zt, t, eh, raw); }, p, fd_options());
      INFO("t ", t0);
      CHECK(report.per_parameter[0].max_rel_err <= 1e-4);
      CHECK_FALSE(eh.has_grad());
    }
  }
}

TEST_CASE("loss_simple") {
  const auto s = make_schedule(10);
  SUBCASE("zero prediction gives mean eps^2") {
    const MattenModel m(tiny(1), 1);
    const auto z0 = randn64({2, 4, 32, 32, 1}, 9);
    const auto eps = randn64({2, 4, 32, 32, 1}, 10);
    const std::vector<std::size_t> t{3, 7};
    const double loss = loss_simple(m, s, z0, t, eps).item();
    double want = 0.0;
    for (double e : eps.data()) want += e * e;
    CHECK(loss == doctest::Approx(want / eps.numel()).epsilon(1e-12));
    CHECK(std::abs(loss - 1.0) <= 0.05);
  }
  SUBCASE("perfect prediction gives zero") {
    const auto eps = randn64({2, 3}, 11);
    CHECK(mse(eps, eps).item() == 0.0);
  }
  SUBCASE("batch order does not matter") {
    const MattenModel m(tiny(3), 2);
    randomize(m, 12);
    const auto z0 = randn64({2, 2, 4, 4, 1}, 13), eps = randn64({2, 2, 4, 4, 1}, 14);
    const std::vector<std::size_t> t{2, 8}, k{0, 1}, t_sw{8, 2}, k_sw{1, 0};
    const auto swap = [](const Tensor& x) {
      const std::vector<Tensor> parts{slice(x, 0, 1, 2), slice(x, 0, 0, 1)};
      return concat(parts, 0);
    };
    const double a = loss_simple(m, s, z0, t, eps, k).item();
    const double b = loss_simple(m, s, swap(z0), t_sw, swap(eps), k_sw).item();
    CHECK(a == doctest::Approx(b).epsilon(1e-13));
  }
}

TEST_CASE("hybrid loss") {
  const auto s = make_schedule(10);
  for (int v = 1; v <= 4; ++v) {
    const MattenModel m(tiny(v), 15);
    const auto z0 = randn64({2, 2, 4, 4, 1}, 16, 0.5), eps = randn64({2, 2, 4, 4, 1}, 17);
    const std::vector<std::size_t> t{0, 6}, k{1, 0};
    const auto init = hybrid_loss(m, s, z0, t, eps, k);
    CHECK(std::isfinite(init.total.item()));
    CHECK(init.total.item() == doctest::Approx(init.simple.item() + kVlbWeight * init.vlb.item()).epsilon(1e-14));

    randomize(m, 18);
    // The tape stops the mean path of the variational term, so the oracle
    // holds that path's eps_hat at its base-point value too.
    const auto zt = q_sample(s, z0, t, eps);
    const auto frozen = m.forward(zt, t, k).eps_hat.detach();
    const auto surrogate = [&] {
      const auto out = m.forward(zt, t, k);
      return add(mse(out.eps_hat, eps), scale(vlb_term(s, z0, zt, t, frozen, out.sigma_raw), kVlbWeight));
    };
    const auto grads = [&](const Tensor& loss) {
      for (const auto& p : m.parameters()) const_cast<Tensor&>(p.tensor).zero_grad();
      loss.backward();
      std::vector<double> all;
      for (const auto& p : m.parameters())
        if (p.tensor.has_grad()) all.insert(all.end(), p.tensor.grad().begin(), p.tensor.grad().end());
      return all;
    };
    const auto tape = hybrid_loss(m, s, z0, t, eps, k).total;
    CHECK(tape.item() == surrogate().item());
    CHECK(grads(tape) == grads(surrogate()));
    const auto report = grad_check([&] { return hybrid_loss(m, s, z0, t, eps, k).total; }, m.parameters(), fd_options(4));
    const auto oracle = grad_check(surrogate, m.parameters(), fd_options(4));
    INFO("variant ", v);
    CHECK(oracle.max_rel_err <= 1e-4);
    // The full function also moves through the stopped mean path.
    CHECK(report.max_rel_err > oracle.max_rel_err);
  }
}

TEST_CASE("sampling") {
  const auto s = make_schedule(8);
  const Shape shape{2, 1, 2, 2, 1};
  const Denoiser half = [](const Tensor& z, std::span<const std::size_t>) {
    return ModelOutput{scale(z, 0.5), Tensor::zeros(z.shape(), z.dtype())};
  };
  SampleOptions opt;
  opt.dtype = DType::F64;

  SUBCASE("deterministic and shaped") {
    const auto a = p_sample_loop(half, s, shape, 21, opt), b = p_sample_loop(half, s, shape, 21, opt);
    CHECK(a.shape() == shape);
    CHECK(testing::bit_equal(a.data(), b.data()));
    CHECK_FALSE(testing::bit_equal(a.data(), p_sample_loop(half, s, shape, 22, opt).data()));
  }
  SUBCASE("one step is the x0 prediction") {
    const auto one = respace(make_schedule(1000), 1);
    opt.variance = Variance::Posterior;
    opt.clip_x0 = false;
    const auto out = p_sample_loop(half, one, shape, 23, opt);
    std::mt19937_64 rng(23);
    std::normal_distribution<double> normal;
    const double ab = one.alpha_bar[0];
    for (double v : out.data()) {
      const double z = normal(rng);
      CHECK(v == doctest::Approx((z - std::sqrt(1.0 - ab) * 0.5 * z) / std::sqrt(ab)).epsilon(1e-12));
    }
  }
  SUBCASE("two steps follow the posterior by hand") {
    const auto two = make_schedule(2);
    opt.variance = Variance::Posterior;
    opt.clip_x0 = false;
    const auto out = p_sample_loop(half, two, {1, 1, 1, 1, 1}, 24, opt);
    std::mt19937_64 rng(24);
    std::normal_distribution<double> normal;
    double z = normal(rng);
    const auto post = [&](std::size_t t) {
      const double x0 = (z - std::sqrt(1.0 - two.alpha_bar[t]) * 0.5 * z) / std::sqrt(two.alpha_bar[t]);
      const double prev = t ? two.alpha_bar[t - 1] : 1.0;
      return std::sqrt(prev) * two.beta[t] / (1.0 - two.alpha_bar[t]) * x0 +
             std::sqrt(two.alpha[t]) * (1.0 - prev) / (1.0 - two.alpha_bar[t]) * z;
    };
    z = post(1) + std::sqrt(two.beta[1] * (1.0 - two.alpha_bar[0]) / (1.0 - two.alpha_bar[1])) * normal(rng);
    z = post(0);
    CHECK(out.item() == doctest::Approx(z).epsilon(1e-12));
  }
  SUBCASE("non-finite state reports the timestep") {
    const Denoiser bad = [](const Tensor& z, std::span<const std::size_t> t) {
      const double v = t[0] == 5 ? std::nan("") : 0.0;
      return ModelOutput{Tensor::full(z.shape(), v, z.dtype()), Tensor::zeros(z.shape(), z.dtype())};
    };
    opt.clip_x0 = false;
    try {
      p_sample_loop(bad, s, shape, 25, opt);
      FAIL("expected SamplingError");
    } catch (const SamplingError& e) {
      CHECK(e.index() == 5);
    }
  }
  SUBCASE("model overload with respacing") {
    const MattenModel m(tiny(4), 26);
    const auto base = make_schedule(10);
    const std::vector<std::size_t> k{0, 1};
    SampleOptions o;
    o.steps = 3;
    const auto a = p_sample_loop(m, base, {2, 2, 4, 4, 1}, k, 27, o);
    const auto b = p_sample_loop(m, base, {2, 2, 4, 4, 1}, k, 27, o);
    CHECK(a.shape() == Shape{2, 2, 4, 4, 1});
    CHECK(a.dtype() == DType::F64);
    CHECK(testing::bit_equal(a.data(), b.data()));
    for (double v : a.data()) CHECK(std::isfinite(v));
  }
}

TEST_CASE("ema") {
  auto e = Tensor::full({1}, 1.0, DType::F64), p = Tensor::full({1}, 0.0, DType::F64);
  const std::vector<NamedTensor> ema{{"w", e}}, params{{"w", p}};
  ema_update(ema, params, 0.99);
  CHECK(e.item() == doctest::Approx(0.99).epsilon(1e-15));

  auto same = Tensor::full({2}, 0.3, DType::F64);
  const std::vector<NamedTensor> fixed{{"w", same}};
  ema_update(fixed, clone_parameters(fixed), 0.99);
  CHECK(same.to_vector() == std::vector<double>{0.3, 0.3});

  auto start = Tensor::full({1}, 2.0, DType::F64), target = Tensor::full({1}, -1.0, DType::F64);
  const std::vector<NamedTensor> run{{"w", start}}, goal{{"w", target}};
  for (int k = 0; k < 10; ++k) ema_update(run, goal, 0.99);
  const double g = std::pow(0.99, 10);
  CHECK(start.item() == doctest::Approx(2.0 * g - 1.0 * (1.0 - g)).epsilon(1e-13));

  const std::vector<NamedTensor> renamed{{"v", target}};
  CHECK_THROWS_AS(ema_update(run, renamed, 0.99), StructureError);
  const std::vector<NamedTensor> reshaped{{"w", Tensor::zeros({2}, DType::F64)}};
  CHECK_THROWS_AS(ema_update(run, reshaped, 0.99), StructureError);
  CHECK_THROWS_AS(ema_update(run, {}, 0.99), StructureError);

  const EmaSchedule two{0.99, 50, 0.999};
  CHECK(two.at(49) == 0.99);
  CHECK(two.at(50) == 0.999);
  CHECK(EmaSchedule{}.at(1000000) == 0.99);
}
