// Acceptance run: one PASS/FAIL line per criterion, exit status 1 on any FAIL.
#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <random>
#include <set>

#include "matten/analysis.hpp"
#include "matten/bench.hpp"
#include "matten/error.hpp"
#include "matten/metrics.hpp"
#include "matten/model.hpp"
#include "matten/ssm.hpp"
#include "matten/trainer.hpp"

using namespace matten;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// 1. Parallel scan against the sequential recurrence.
template <typename T>
double scan_gap(std::size_t J, std::size_t C, std::size_t N, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<T> a(C * N), b(J * N), delta(J * C), c(J * N), d(C), x(J * C);
  for (auto& v : a) v = static_cast<T>(-std::exp(2.0 * u(rng) - 1.0) * (1.0 + 4.0 * u(rng)));
  for (auto& v : b) v = static_cast<T>(g(rng));
  for (auto& v : delta) v = static_cast<T>(0.001 + 0.1 * u(rng));
  for (auto& v : c) v = static_cast<T>(g(rng));
  for (auto& v : d) v = static_cast<T>(g(rng));
  for (auto& v : x) v = static_cast<T>(g(rng));
  const auto disc = ssm::discretize_zoh<T>(a, b, delta, J, C, N);
  const auto ys = ssm::scan_sequential<T>(disc, c, d, x);
  const auto yp = ssm::scan_parallel<T>(disc, c, d, x);
  double m = 0.0;
  for (std::size_t i = 0; i < ys.size(); ++i) m = std::max(m, std::abs(double(ys[i]) - double(yp[i])));
  return m;
}

Verdict scan_oracle() {
  const auto start = Clock::now();
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<std::size_t> length(1, 4096), channels(1, 4), state(1, 16);
  double worst32 = 0.0, worst64 = 0.0;
  std::size_t longest = 0;
  for (std::size_t i = 0; i < 100; ++i) {
    const std::size_t J = i < 4 ? std::size_t{4096} >> i : length(rng);
    const std::size_t C = channels(rng), N = state(rng);
    longest = std::max(longest, J);
    worst32 = std::max(worst32, scan_gap<float>(J, C, N, rng));
    worst64 = std::max(worst64, scan_gap<double>(J, C, N, rng));
  }
  const double t = seconds_since(start);
  return {worst32 <= 1e-5 && worst64 <= 1e-10 && t < 30.0,
          fmt("100 instances, J up to %zu: max diff %.2e (32-bit, tol 1e-5), %.2e (64-bit, tol 1e-10), %.1f s (< 30)",
              longest, worst32, worst64, t)};
}

// 2. Finite-difference gradient suite.
Verdict gradient_suite() {
  const auto start = Clock::now();
  const auto cases = gradcheck_suite("full");
  double worst = 0.0;
  std::string failed;
  for (const auto& c : cases) {
    worst = std::max(worst, c.max_rel_err);
    if (!c.passed) failed += " " + c.name;
  }
  const double t = seconds_since(start);
  return {failed.empty() && t < 300.0,
          fmt("%zu cases, worst rel err %.2e (tol 1e-4), %.1f s (< 300)%s%s", cases.size(), worst, t,
              failed.empty() ? "" : ", failed:", failed.c_str())};
}

// 3. ZOH closed forms and the series fallback.
Verdict zoh() {
  double closed = 0.0;
  const auto track = [&](double got, double want) { closed = std::max(closed, std::abs(got - want)); };
  track(ssm::zoh_transition(1.0, -1.0), std::exp(-1.0));
  track(ssm::zoh_input_gain(1.0, -1.0), 1.0 - std::exp(-1.0));
  for (double dl : {0.01, 0.5, 2.0})
    for (double a : {-0.1, -1.0, -3.0}) {
      track(ssm::zoh_transition(dl, a), std::exp(dl * a));
      track(ssm::zoh_input_gain(dl, a), std::expm1(dl * a) / a);
    }
  // The first-order series is off by delta (delta a)^2 / 6 at the threshold, so
  // the absolute jump grows with delta; the tolerance applies for delta <= 1.
  const auto jump_at = [](double dl) {
    const double edge = ssm::kSeriesThreshold / dl;
    return std::max(std::abs(ssm::zoh_input_gain(dl, -edge * (1 - 1e-9)) - ssm::zoh_input_gain(dl, -edge * (1 + 1e-9))),
                    std::abs(ssm::zoh_transition(dl, -edge * (1 - 1e-9)) - ssm::zoh_transition(dl, -edge * (1 + 1e-9))));
  };
  double jump = 0.0;
  for (double dl : {0.01, 0.1, 0.5, 1.0}) jump = std::max(jump, jump_at(dl));
  return {closed <= 1e-12 && jump <= 1e-8,
          fmt("closed-form error %.2e (tol 1e-12), jump across series threshold %.2e for delta <= 1 (tol 1e-8; "
              "%.2e at delta 10)",
              closed, jump, jump_at(10.0))};
}

// 4. Identity at init.
Verdict identity_at_init() {
  std::size_t checked = 0, bad = 0;
  std::mt19937_64 rng(4);
  for (int v = 1; v <= 4; ++v)
    for (auto mode : {Conditioning::MAdaN, Conditioning::ConditionalTokens}) {
      ModelConfig c;
      c.variant = v;
      c.layers = 2;
      c.hidden = 8;
      c.state = 2;
      c.heads = 2;
      c.in_channels = 2;
      c.num_classes = 3;
      c.timesteps = 10;
      c.conditioning = mode;
      c.dtype = DType::F64;
      const MattenModel m(c, 40 + v, InitMode::Identity);
      const auto latent = Tensor::randn({2, 2, 4, 4, 2}, rng, 1.0, DType::F64);
      const std::vector<std::size_t> t{0, 9}, k{2, 0};
      const auto cond = m.embed_condition(t, k);
      const auto tokens = m.patchify_and_embed(latent);
      const auto mapped = m.variant_forward(tokens, cond);
      const auto out_tokens = mapped.data.data(), in_tokens = tokens.data.data();
      bool ok = std::equal(out_tokens.begin(), out_tokens.end(), in_tokens.begin(), in_tokens.end());
      const auto out = m.forward(latent, t, k);
      for (double x : out.eps_hat.data()) ok = ok && x == 0.0;
      ++checked;
      bad += ok ? 0 : 1;
    }
  return {bad == 0, fmt("%zu configurations (V1-V4, both conditioning modes): %zu not identity", checked, bad)};
}

// 5. Complexity formulas, crossover and empirical scaling.
Verdict complexity() {
  using namespace analysis;
  const auto start = Clock::now();
  bool exact = true;
  for (Count J : {1, 16, 256, 4096})
    for (Count D : {1, 64, 1152})
      for (Count N : {1, 16}) {
        exact = exact && flops_sa(J, D) == 2 * J * J * D;
        exact = exact && flops_ffn(J, D) == 4 * J * D * D;
        exact = exact && flops_ssm(J, D, N) == 3 * J * (2 * D) * N + J * (2 * D) * N * N;
      }
  exact = exact && flops_ssm(4096, 1152, 16) == 2868903936ULL && flops_ffn(256, 384) == 150994944ULL;
  const Count cross = crossover_length(16);

  BenchOptions opt;
  opt.repeats = 3;
  const auto slope = [](const std::vector<BenchPoint>& pts) {
    std::vector<double> x, y;
    for (const auto& p : pts) {
      x.push_back(static_cast<double>(p.length));
      y.push_back(static_cast<double>(p.nanos));
    }
    return loglog_slope(x, y);
  };
  const double scan_slope = slope(bench_scan(ScanMode::Parallel, opt));
  const double attn_slope = slope(bench_attention(opt));
  const double t = seconds_since(start);
  const bool pass = exact && cross == 304 && std::abs(scan_slope - 1.0) <= 0.3 && std::abs(attn_slope - 2.0) <= 0.4 &&
                    t < 600.0;
  return {pass, fmt("formulas %s, J* = %llu (want 304), slope scan %.2f (1.0 +- 0.3), attention %.2f (2.0 +- 0.4) "
                    "on J in [256, 8192], %.1f s (< 600)",
                    exact ? "exact" : "MISMATCH", static_cast<unsigned long long>(cross), scan_slope, attn_slope, t)};
}

// 6. Paper-scale cost reproduction.
Verdict cost() {
  using namespace analysis;
  const auto latent = latent_for_pixels(16, 256, 256);
  std::vector<double> g;
  for (int v = 1; v <= 4; ++v) g.push_back(static_cast<double>(model_cost(preset("XL", v), latent).total_flops) / 1e9);
  // Table 2 orders the variants 1 < 2 < 4 < 3.
  const bool order = g[0] < g[1] && g[1] < g[3] && g[3] < g[2];
  const double v3 = g[2] / 4008.0 - 1.0;
  const Count s = param_count(preset("S")), b = param_count(preset("B")), l = param_count(preset("L")),
              xl = param_count(preset("XL"));
  const double s_dev = static_cast<double>(s) / 35e6 - 1.0;
  const bool pass = std::abs(v3) <= 0.2 && order && s < b && b < l && l < xl && std::abs(s_dev) <= 0.3;
  return {pass, fmt("V3-XL %.0f G (%+.1f%% vs 4008, band 20%%), variants %.0f/%.0f/%.0f/%.0f G ordering %s, "
                    "params S %.1fM (%+.1f%% vs 35M, band 30%%) B %.1fM L %.1fM XL %.1fM",
                    g[2], 100 * v3, g[0], g[1], g[2], g[3], order ? "ok" : "WRONG", s / 1e6, 100 * s_dev, b / 1e6,
                    l / 1e6, xl / 1e6)};
}

// 7 and 8 share the toy setup.
TrainConfig toy_run(Conditioning mode) {
  TrainConfig c;
  c.model.variant = 3;
  c.model.hidden = 64;
  c.model.layers = 6;
  c.model.heads = 4;
  c.model.patch = 2;
  c.model.in_channels = 1;
  c.model.num_classes = 2;
  c.model.conditioning = mode;
  c.data.frames = 8;
  c.data.height = 16;
  c.data.width = 16;
  c.batch = 2;
  c.steps = 500;
  return c;
}

struct ToyResult {
  std::vector<double> totals;
  double first50 = 0.0, last50 = 0.0;
  bool finite = true;
  SampleSet samples;
  double reference_motion = 0.0;
  double train_seconds = 0.0, sample_seconds = 0.0;
};

constexpr std::size_t kToySamples = 16, kToySampleSteps = 50;

ToyResult toy(Conditioning mode, const std::filesystem::path& dir) {
  ToyResult r;
  const auto start = Clock::now();
  Trainer trainer(toy_run(mode));
  std::filesystem::create_directories(dir);
  std::ofstream csv(dir / "loss.csv");
  csv << kLossCsvHeader << '\n';
  try {
    trainer.run(&csv, {}, [&](const StepStats& s) {
      r.totals.push_back(s.total);
      if (s.step % 50 == 0) std::fprintf(stderr, "  %s step %zu loss %.4f\n", to_string(mode).c_str(), s.step, s.total);
    });
  } catch (const NumericError& e) {
    std::fprintf(stderr, "  %s\n", e.what());
    r.finite = false;
  }
  r.train_seconds = seconds_since(start);
  for (double x : r.totals) r.finite = r.finite && std::isfinite(x);
  if (r.totals.size() >= 100) {
    for (std::size_t i = 0; i < 50; ++i) {
      r.first50 += r.totals[i] / 50.0;
      r.last50 += r.totals[r.totals.size() - 50 + i] / 50.0;
    }
  }
  r.reference_motion = inter_frame_difference(trainer.data().videos);
  if (!r.finite) return r;
  trainer.save(dir);
  const auto sample_start = Clock::now();
  SampleRequest req;
  req.count = kToySamples;
  req.steps = kToySampleSteps;
  req.seed = 7;
  for (std::size_t i = 0; i < kToySamples; ++i) req.classes.push_back(i % 2);
  r.samples = sample_ema(trainer, req);
  r.sample_seconds = seconds_since(sample_start);
  write_samples(dir / "samples", r.samples);
  return r;
}

Verdict toy_training(const ToyResult& r) {
  if (!r.finite || r.totals.size() < 100) return {false, fmt("training stopped after %zu steps", r.totals.size())};
  const double ratio = r.last50 / r.first50;
  const double motion = inter_frame_difference(r.samples.videos);
  const double motion_ratio = motion / r.reference_motion;
  const double t = r.train_seconds + r.sample_seconds;
  const bool pass = ratio < 0.5 && motion_ratio >= 0.5 && motion_ratio <= 2.0 && t < 1800.0;
  return {pass, fmt("loss first-50 %.4f last-50 %.4f ratio %.3f (< 0.5); inter-frame diff samples %.4f data %.4f "
                    "ratio %.2f (within 2x); train %.0f s + sample %.0f s (< 1800)",
                    r.first50, r.last50, ratio, motion, r.reference_motion, motion_ratio, r.train_seconds,
                    r.sample_seconds)};
}

Verdict conditioning(const ToyResult& adan, const ToyResult& tokens) {
  std::string detail;
  bool pass = true;
  for (const auto* r : {&adan, &tokens}) {
    const char* name = r == &adan ? "m_adan" : "conditional_tokens";
    const bool stable = r->finite && r->totals.size() >= 100 && r->last50 < r->first50;
    double sep = 0.0;
    if (stable) sep = class_separation(r->samples.videos, r->samples.classes);
    pass = pass && stable && sep >= 3.0;
    detail += fmt("%s%s: %s, loss %.4f -> %.4f, class separation %.2f (>= 3)", detail.empty() ? "" : "; ", name,
                  stable ? "no divergence" : "DIVERGED", r->first50, r->last50, sep);
  }
  return {pass, detail};
}

// 9. Determinism and exact resume, 64-bit.
TrainConfig small_run() {
  TrainConfig c;
  c.model.variant = 3;
  c.model.layers = 2;
  c.model.hidden = 8;
  c.model.state = 4;
  c.model.heads = 2;
  c.model.in_channels = 1;
  c.model.num_classes = 2;
  c.model.timesteps = 20;
  c.model.dtype = DType::F64;
  c.data.frames = 4;
  c.data.height = 8;
  c.data.width = 8;
  c.data.sprite_size = 3;
  c.data.num_videos = 8;
  c.batch = 2;
  c.steps = 6;
  c.lr = 1e-3;
  c.seed = 11;
  return c;
}

bool same(const std::vector<NamedTensor>& a, const std::vector<NamedTensor>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto x = a[i].tensor.data(), y = b[i].tensor.data();
    if (a[i].name != b[i].name || !std::equal(x.begin(), x.end(), y.begin(), y.end())) return false;
  }
  return true;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

Verdict determinism(const std::filesystem::path& dir) {
  const TrainConfig c = small_run();
  Trainer a(c), b(c);
  std::vector<double> la, lb;
  a.run(nullptr, {}, [&](const StepStats& s) { la.push_back(s.total); });
  b.run(nullptr, {}, [&](const StepStats& s) { lb.push_back(s.total); });
  const bool repeat = la == lb && same(a.model().parameters(), b.model().parameters()) && same(a.ema(), b.ema());

  TrainConfig half = c;
  half.steps = 3;
  Trainer first(half);
  first.run();
  first.save(dir / "half");
  Trainer resumed = Trainer::load(dir / "half");
  resumed.set_total_steps(c.steps);
  std::vector<double> lr;
  resumed.run(nullptr, {}, [&](const StepStats& s) { lr.push_back(s.total); });
  const bool resume = std::equal(lr.begin(), lr.end(), la.begin() + 3, la.end()) &&
                      same(resumed.model().parameters(), a.model().parameters()) && same(resumed.ema(), a.ema());
  a.save(dir / "full");
  resumed.save(dir / "resumed");
  const bool files = slurp(dir / "full" / "tensors.mttn") == slurp(dir / "resumed" / "tensors.mttn");

  SampleRequest req;
  req.count = 2;
  req.steps = 5;
  req.seed = 3;
  const auto s1 = sample_ema(a, req), s2 = sample_ema(Trainer::load(dir / "full"), req);
  const auto d1 = s1.videos.data(), d2 = s2.videos.data();
  const bool sampling = std::equal(d1.begin(), d1.end(), d2.begin(), d2.end());
  return {repeat && resume && files && sampling,
          fmt("repeat run %s, resume at step 3 %s, checkpoint bytes %s, sampling from reloaded checkpoint %s",
              repeat ? "bit-identical" : "DIFFERS", resume ? "bit-identical" : "DIFFERS",
              files ? "identical" : "DIFFER", sampling ? "bit-identical" : "DIFFERS")};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria 1-9"};
  std::vector<int> only;
  std::string work = (std::filesystem::temp_directory_path() / "matten_acceptance").string();
  app.add_option("--only", only, "run only these criteria")->check(CLI::Range(1, 9));
  app.add_option("--work", work, "directory for training runs and samples");
  CLI11_PARSE(app, argc, argv);
  const std::set<int> chosen = only.empty() ? std::set<int>{1, 2, 3, 4, 5, 6, 7, 8, 9} : std::set<int>(only.begin(), only.end());
  const std::filesystem::path dir(work);
  std::filesystem::create_directories(dir);

  bool all = true;
  const auto report = [&](int n, const char* name, const std::function<Verdict()>& f) {
    if (!chosen.count(n)) return;
    Verdict v;
    try {
      v = f();
    } catch (const std::exception& e) {
      v = {false, std::string("error: ") + e.what()};
    }
    all = all && v.pass;
    std::printf("criterion %d (%s): %s  %s\n", n, name, v.pass ? "PASS" : "FAIL", v.detail.c_str());
    std::fflush(stdout);
  };

  report(1, "scan oracle", scan_oracle);
  report(2, "gradient suite", gradient_suite);
  report(3, "zoh", zoh);
  report(4, "identity at init", identity_at_init);
  report(5, "complexity", complexity);
  report(6, "cost reproduction", cost);
  std::optional<ToyResult> adan, tokens;
  if (chosen.count(7) || chosen.count(8)) {
    adan = toy(Conditioning::MAdaN, dir / "toy_m_adan");
    report(7, "toy training", [&] { return toy_training(*adan); });
  }
  if (chosen.count(8)) {
    tokens = toy(Conditioning::ConditionalTokens, dir / "toy_conditional_tokens");
    report(8, "conditioning", [&] { return conditioning(*adan, *tokens); });
  }
  report(9, "determinism", [&] { return determinism(dir / "determinism"); });
  std::printf("%s\n", all ? "ALL PASS" : "SOME CRITERIA FAILED");
  return all ? 0 : 1;
}
