#include "matten/bench.hpp"

#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <ostream>
#include <random>

#include <json.hpp>

#include "matten/attention.hpp"
#include "matten/diffusion.hpp"
#include "matten/error.hpp"
#include "matten/grad_check.hpp"
#include "matten/model.hpp"
#include "matten/ops.hpp"
#include "matten/ssm.hpp"

namespace matten {

std::string to_string(ScanMode mode) { return mode == ScanMode::Sequential ? "seq" : "par"; }

ScanMode parse_scan_mode(const std::string& text) {
  if (text == "seq") return ScanMode::Sequential;
  if (text == "par") return ScanMode::Parallel;
  throw ParameterError("scan mode must be seq or par, got '" + text + "'");
}

namespace {

std::vector<std::size_t> lengths(const BenchOptions& o) {
  if (o.min_length == 0 || o.min_length > o.max_length) {
    throw ParameterError("bench: need 0 < min_length <= max_length");
  }
  std::vector<std::size_t> out;
  for (std::size_t j = o.min_length; j <= o.max_length; j *= 2) out.push_back(j);
  return out;
}

template <typename F>
std::uint64_t best_of(std::size_t repeats, F run) {
  std::uint64_t best = std::numeric_limits<std::uint64_t>::max();
  for (std::size_t r = 0; r < std::max<std::size_t>(repeats, 1); ++r) {
    const auto a = std::chrono::steady_clock::now();
    run();
    const auto b = std::chrono::steady_clock::now();
    best = std::min<std::uint64_t>(best, std::chrono::duration_cast<std::chrono::nanoseconds>(b - a).count());
  }
  return best;
}

}  // namespace

std::vector<BenchPoint> bench_scan(ScanMode mode, const BenchOptions& o) {
  std::vector<BenchPoint> out;
  const std::size_t C = o.channels, N = o.state;
  for (std::size_t J : lengths(o)) {
    std::mt19937_64 rng(o.seed + J);
    std::normal_distribution<float> g;
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    std::vector<float> a(C * N), b(J * N), delta(J * C), c(J * N), d(C), x(J * C);
    for (std::size_t i = 0; i < C; ++i)
      for (std::size_t n = 0; n < N; ++n) a[i * N + n] = -(1.0f + static_cast<float>(n)) * (0.5f + u(rng));
    for (auto* v : {&b, &c, &d, &x})
      for (auto& e : *v) e = g(rng);
    for (auto& e : delta) e = 0.001f + 0.1f * u(rng);
    const auto disc = ssm::discretize_zoh<float>(a, b, delta, J, C, N);
    std::vector<float> y;
    const auto nanos = best_of(o.repeats, [&] {
      y = mode == ScanMode::Sequential ? ssm::scan_sequential<float>(disc, c, d, x)
                                       : ssm::scan_parallel<float>(disc, c, d, x, {o.threads});
    });
    double sum = 0.0;
    for (float v : y) sum += v;
    out.push_back({J, C, to_string(mode), nanos, sum});
  }
  return out;
}

std::vector<BenchPoint> bench_attention(const BenchOptions& o) {
  std::vector<BenchPoint> out;
  NoGradGuard no_grad;
  for (std::size_t J : lengths(o)) {
    std::mt19937_64 rng(o.seed + J);
    const auto params = attention::init_attention(o.channels, 1, false, rng);
    const auto x = Tensor::randn({1, J, o.channels}, rng);
    Tensor y;
    const auto nanos = best_of(o.repeats, [&] { y = attention::multi_head_attention(params, x); });
    double sum = 0.0;
    for (double v : y.data()) sum += v;
    out.push_back({J, o.channels, "attn", nanos, sum});
  }
  return out;
}

void write_bench_csv(std::ostream& out, const std::vector<BenchPoint>& points, bool header) {
  if (header) out << kBenchCsvHeader << '\n';
  for (const auto& p : points) {
    out << p.length << ',' << p.channels << ',' << p.mode << ',' << p.nanos << ',' << nlohmann::json(p.checksum).dump()
        << '\n';
  }
}

namespace {

Tensor rand64(Shape shape, std::mt19937_64& rng, double sd = 1.0) {
  return Tensor::randn(std::move(shape), rng, sd, DType::F64).set_requires_grad();
}

Tensor probe(const Tensor& y) {
  std::mt19937_64 rng(99);
  return sum(mul(y, Tensor::randn(y.shape(), rng, 1.0, DType::F64)));
}

Tensor probe(const ModelOutput& out) {
  std::mt19937_64 rng(3);
  const auto w1 = Tensor::randn(out.eps_hat.shape(), rng, 1.0, DType::F64);
  const auto w2 = Tensor::randn(out.sigma_raw.shape(), rng, 1.0, DType::F64);
  return add(sum(mul(out.eps_hat, w1)), sum(mul(out.sigma_raw, w2)));
}

struct Suite {
  std::vector<GradCase> cases;

  void add(const std::string& name, const std::function<Tensor()>& f, std::vector<NamedTensor> params,
           GradCheckOptions opt = {}) {
    const GradReport r = grad_check(f, params, opt);
    std::size_t coords = 0;
    for (const auto& p : r.per_parameter) coords += p.coords_checked;
    cases.push_back({name, r.max_rel_err, coords, r.passed(kGradTolerance)});
  }
};

// Model-scale graphs carry enough round-off that a 1e-5 step is noise
// dominated; a wider step with Richardson extrapolation is accurate there.
GradCheckOptions deep_options(std::size_t coords) {
  GradCheckOptions o;
  o.step = 1e-3;
  o.richardson = true;
  o.max_coords_per_param = coords;
  o.seed = 7;
  return o;
}

void primitives(Suite& s) {
  std::mt19937_64 rng(1);
  auto a = rand64({3, 4}, rng), b = rand64({3, 4}, rng), v = rand64({4}, rng);
  std::vector<double> positive(12);
  for (std::size_t i = 0; i < positive.size(); ++i) positive[i] = 0.5 + 0.1 * static_cast<double>(i);
  auto pos = Tensor::from_vector({3, 4}, positive, DType::F64).set_requires_grad();
  s.add("add", [&] { return probe(add(a, v)); }, {{"a", a}, {"v", v}});
  s.add("sub", [&] { return probe(sub(a, b)); }, {{"a", a}, {"b", b}});
  s.add("mul", [&] { return probe(mul(a, v)); }, {{"a", a}, {"v", v}});
  s.add("scale", [&] { return probe(add_scalar(scale(neg(a), 1.5), 2.0)); }, {{"a", a}});
  s.add("exp", [&] { return probe(exp(a)); }, {{"a", a}});
  s.add("log", [&] { return probe(log(pos)); }, {{"pos", pos}});
  s.add("square", [&] { return probe(square(a)); }, {{"a", a}});
  s.add("sigmoid", [&] { return probe(sigmoid(a)); }, {{"a", a}});
  s.add("silu", [&] { return probe(silu(a)); }, {{"a", a}});
  s.add("softplus", [&] { return probe(softplus(a)); }, {{"a", a}});
  s.add("softmax", [&] { return probe(softmax(a)); }, {{"a", a}});
  auto w = rand64({4, 5}, rng), bias = rand64({5}, rng), m = rand64({2, 4, 3}, rng), k = rand64({2, 3, 2}, rng);
  s.add("linear", [&] { return probe(linear(a, w, bias)); }, {{"a", a}, {"w", w}, {"bias", bias}});
  s.add("matmul", [&] { return probe(matmul(a, w)); }, {{"a", a}, {"w", w}});
  s.add("bmm", [&] { return probe(bmm(m, k)); }, {{"m", m}, {"k", k}});
  auto gain = rand64({4}, rng), shift = rand64({4}, rng);
  s.add("layer_norm", [&] { return probe(layer_norm(a, gain, shift)); }, {{"a", a}, {"gain", gain}, {"shift", shift}});
  auto x = rand64({2, 5, 3}, rng), cw = rand64({3, 4}, rng), cb = rand64({3}, rng);
  s.add("causal_conv1d", [&] { return probe(causal_conv1d(x, cw, cb)); }, {{"x", x}, {"w", cw}, {"b", cb}});
  s.add("layout ops", [&] {
    const std::vector<Tensor> parts{flip(x, 1), slice(x, 1, 1, 4)};
    return probe(concat(parts, 1));
  }, {{"x", x}});
  s.add("permute", [&] { return probe(permute(x, {2, 0, 1})); }, {{"x", x}});
  s.add("sum_axis", [&] { return probe(expand_axis(sum_axis(x, 1), 0, 2)); }, {{"x", x}});
  s.add("mse", [&] { return mse(a, b); }, {{"a", a}, {"b", b}});
}

void scans(Suite& s) {
  std::mt19937_64 rng(2);
  const std::size_t S = 2, J = 6, Di = 2, N = 3;
  auto x = rand64({S, J, Di}, rng), dl = rand64({S, J, Di}, rng, 0.5), alog = rand64({Di, N}, rng, 0.5);
  auto b = rand64({S, J, N}, rng), c = rand64({S, J, N}, rng), d = rand64({Di}, rng);
  s.add("scan", [&] { return probe(ssm::scan(x, exp(dl), neg(exp(alog)), b, c, d)); },
        {{"x", x}, {"dl", dl}, {"alog", alog}, {"b", b}, {"c", c}, {"d", d}});

  std::vector<double> al(Di * N);
  for (std::size_t i = 0; i < Di; ++i)
    for (std::size_t n = 0; n < N; ++n) al[i * N + n] = std::log(1.0 + static_cast<double>(n)) + 0.1 * static_cast<double>(i);
  ssm::SsmParams p{Tensor::from_vector({Di, N}, al, DType::F64).set_requires_grad(),
                   rand64({Di}, rng),
                   rand64({Di, 2 * N}, rng, 0.5),
                   rand64({Di, 1}, rng, 0.5),
                   rand64({1, Di}, rng, 0.5),
                   Tensor::full({Di}, -2.0, DType::F64).set_requires_grad()};
  auto xs = rand64({1, J, Di}, rng);
  s.add("selective_scan", [&] { return probe(ssm::selective_scan(p, xs)); },
        {{"x", xs}, {"a_log", p.a_log}, {"d_skip", p.d_skip}, {"proj_bc", p.proj_bc},
         {"dt_in", p.proj_delta_in}, {"dt_out", p.proj_delta_out}, {"dt_bias", p.delta_bias}});
}

void attention_case(Suite& s) {
  std::mt19937_64 rng(3);
  auto p = attention::init_attention(4, 2, true, rng, DType::F64);
  for (Tensor* t : {&p.w_q, &p.w_k, &p.w_v, &p.w_o, &p.b_q, &p.b_v, &p.b_o}) t->set_requires_grad();
  std::normal_distribution<double> g(0.0, 0.1);
  for (Tensor* t : {&p.b_q, &p.b_v, &p.b_o}) {
    auto v = t->to_vector();
    for (auto& e : v) e = g(rng);
    t->assign(v);
  }
  auto x = rand64({2, 3, 4}, rng);
  s.add("multi_head_attention", [&] { return probe(attention::multi_head_attention(p, x)); },
        {{"x", x}, {"w_q", p.w_q}, {"w_k", p.w_k}, {"w_v", p.w_v}, {"w_o", p.w_o},
         {"b_q", p.b_q}, {"b_v", p.b_v}, {"b_o", p.b_o}});
}

ModelConfig tiny(int variant, std::size_t layers, Conditioning mode) {
  ModelConfig c;
  c.variant = variant;
  c.layers = layers;
  c.hidden = 8;
  c.state = 4;
  c.patch = 2;
  c.in_channels = 2;
  c.heads = 2;
  c.timesteps = 10;
  c.num_classes = 2;
  c.conditioning = mode;
  c.dtype = DType::F64;
  return c;
}

// Zero-initialized projections make many gradients vanish identically;
// perturbing every parameter exercises all paths.
void perturb(const MattenModel& m, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 0.3);
  for (const auto& p : m.parameters()) {
    auto v = p.tensor.to_vector();
    for (auto& e : v) e += g(rng);
    Tensor t = p.tensor;
    t.assign(v);
  }
}

Tensor latent(Shape shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return Tensor::randn(std::move(shape), rng, 1.0, DType::F64);
}

void model_case(Suite& s, int variant, std::size_t layers, Conditioning mode, std::size_t coords) {
  const ModelConfig c = tiny(variant, layers, mode);
  const MattenModel m(c, 10 + static_cast<std::uint64_t>(variant));
  perturb(m, 20 + static_cast<std::uint64_t>(variant));
  const Tensor z = latent({2, 2, 4, 4, 2}, 30);
  const std::vector<std::size_t> t{3, 7}, k{0, 1};
  s.add("model V" + std::to_string(variant) + " L=" + std::to_string(layers) + " " + to_string(mode),
        [&] { return probe(m.forward(z, t, k)); }, m.parameters(), deep_options(coords));
}

void diffusion_cases(Suite& s) {
  const auto sched = diffusion::make_schedule(10);
  const MattenModel m(tiny(3, 3, Conditioning::MAdaN), 40);
  perturb(m, 41);
  const Tensor z0 = latent({2, 2, 4, 4, 2}, 42), eps = latent({2, 2, 4, 4, 2}, 43);
  const std::vector<std::size_t> t{0, 6}, k{1, 0};
  s.add("loss_simple", [&] { return diffusion::loss_simple(m, sched, z0, t, eps, k); }, m.parameters(),
        deep_options(3));
  std::mt19937_64 rng(44);
  auto eps_hat = rand64({2, 2, 4, 4, 2}, rng), sigma = rand64({2, 2, 4, 4, 2}, rng, 0.5);
  const Tensor zt = latent({2, 2, 4, 4, 2}, 45);
  s.add("vlb_term", [&] { return diffusion::vlb_term(sched, z0, zt, t, eps_hat.detach(), sigma); },
        {{"sigma_raw", sigma}}, deep_options(0));
}

}  // namespace

std::vector<GradCase> gradcheck_suite(const std::string& suite) {
  if (suite != "small" && suite != "full") throw ParameterError("gradcheck suite must be small or full, got '" + suite + "'");
  Suite s;
  primitives(s);
  scans(s);
  attention_case(s);
  if (suite == "small") {
    for (int v = 1; v <= 4; ++v) model_case(s, v, v == 3 ? 3 : v == 1 ? 1 : 2, Conditioning::MAdaN, 3);
  } else {
    for (int v = 1; v <= 4; ++v)
      for (auto mode : {Conditioning::MAdaN, Conditioning::ConditionalTokens}) {
        model_case(s, v, v == 1 ? 3 : v == 3 ? 3 : 2, mode, 4);
      }
    diffusion_cases(s);
  }
  return s.cases;
}

}  // namespace matten
