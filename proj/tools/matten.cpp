#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "matten/analysis.hpp"
#include "matten/archive.hpp"
#include "matten/bench.hpp"
#include "matten/error.hpp"
#include "matten/metrics.hpp"
#include "matten/trainer.hpp"

using namespace matten;

namespace {

analysis::LatentShape parse_shape(const std::string& text) {
  std::vector<std::size_t> v;
  std::stringstream in(text);
  std::string part;
  while (std::getline(in, part, 'x')) {
    try {
      std::size_t used = 0;
      v.push_back(std::stoul(part, &used));
      if (used != part.size()) throw std::invalid_argument(part);
    } catch (const std::exception&) {
      throw ParameterError("--shape: expected FxHxWxC, got '" + text + "'");
    }
  }
  if (v.size() != 4) throw ParameterError("--shape: expected FxHxWxC, got '" + text + "'");
  return {v[0], v[1], v[2], v[3]};
}

// A model config file, or a training config whose "model" entry is used.
ModelConfig load_model_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
  ModelConfig c = j.contains("model") ? j.at("model").get<ModelConfig>() : j.get<ModelConfig>();
  c.validate();
  return c;
}

int cmd_train(const std::string& config_path, std::optional<std::size_t> steps, const std::string& out, bool resume) {
  const std::filesystem::path dir(out);
  std::optional<Trainer> trainer;
  if (resume && std::filesystem::exists(dir / "checkpoint.json")) {
    trainer.emplace(Trainer::load(dir));
    std::cerr << "resumed at step " << trainer->step_count() << "\n";
  } else {
    TrainConfig c = load_train_config(config_path);
    if (steps) c.steps = *steps;
    trainer.emplace(std::move(c));
  }
  if (steps) {
    if (trainer->step_count() > *steps) throw ConfigError("--steps is below the checkpoint's step count");
    trainer->set_total_steps(*steps);
  }
  std::filesystem::create_directories(dir);
  trainer->set_failure_dir(dir);
  const auto csv_path = dir / "loss.csv";
  const bool append = trainer->step_count() > 0 && std::filesystem::exists(csv_path);
  std::ofstream csv(csv_path, append ? std::ios::app : std::ios::trunc);
  if (!append) csv << kLossCsvHeader << '\n';
  const std::size_t total = trainer->config().steps;
  trainer->run(&csv, dir, [total](const StepStats& s) {
    if (s.step % 10 == 0 || s.step == total) {
      std::cerr << "step " << s.step << "/" << total << " loss " << s.total << " (simple " << s.simple << ", vlb "
                << s.vlb << ")\n";
    }
  });
  trainer->save(dir);
  std::cerr << "checkpoint written to " << dir.string() << "\n";
  return 0;
}

int cmd_sample(const std::string& ckpt, const SampleRequest& request, const std::string& out, bool png) {
  const Trainer trainer = Trainer::load(ckpt);
  const SampleSet samples = sample_ema(trainer, request);
  write_samples(out, samples, png);
  std::cerr << "wrote " << request.count << " samples to " << out << "\n";
  return 0;
}

int cmd_flops(const std::string& config_path, const std::string& shape_text) {
  const ModelConfig c = load_model_config(config_path);
  const auto shape = parse_shape(shape_text);
  const auto cost = analysis::model_cost(c, shape);
  std::cout << "name,flops,params\n";
  for (const auto& e : cost.entries) std::cout << e.name << ',' << e.flops << ',' << e.params << '\n';
  std::cout << "total," << cost.total_flops << ',' << cost.total_params << "\n\n";
  std::size_t width = 5;
  for (const auto& e : cost.entries) width = std::max(width, e.name.size());
  const auto row = [&](const std::string& name, analysis::Count flops, analysis::Count params) {
    std::cout << std::left << std::setw(static_cast<int>(width)) << name << "  " << std::right << std::setw(18) << flops
              << "  " << std::setw(12) << params << '\n';
  };
  std::cout << std::left << std::setw(static_cast<int>(width)) << "name" << "  " << std::right << std::setw(18)
            << "flops" << "  " << std::setw(12) << "params" << '\n';
  for (const auto& e : cost.entries) row(e.name, e.flops, e.params);
  row("total", cost.total_flops, cost.total_params);
  std::cout << std::fixed << std::setprecision(2) << "total " << static_cast<double>(cost.total_flops) / 1e9 << " G (MAC units)"
            << ", params " << static_cast<double>(cost.total_params) / 1e6 << " M\n";
  return 0;
}

int cmd_gradcheck(const std::string& suite) {
  const auto cases = gradcheck_suite(suite);
  bool ok = true;
  for (const auto& c : cases) {
    std::printf("%-40s rel %.3e  coords %zu  %s\n", c.name.c_str(), c.max_rel_err, c.coords, c.passed ? "ok" : "FAIL");
    ok = ok && c.passed;
  }
  std::printf("%zu cases, tolerance %.0e: %s\n", cases.size(), kGradTolerance, ok ? "all passed" : "FAILED");
  return ok ? 0 : 1;
}

int cmd_gen_data(const std::string& config_path, const std::string& out) {
  SpriteSpec spec;
  if (!config_path.empty()) {
    std::ifstream in(config_path);
    if (!in) throw ConfigError("cannot open config " + config_path);
    nlohmann::json j;
    in >> j;
    spec = j.contains("data") ? j.at("data").get<SpriteSpec>() : j.get<SpriteSpec>();
  }
  const auto data = gen_sprites(spec);
  std::vector<double> labels(data.labels.begin(), data.labels.end());
  const std::vector<NamedTensor> entries{
      {"videos", data.videos}, {"labels", Tensor::from_vector({labels.size()}, labels, DType::F64)}};
  save_archive(out, entries);
  std::cerr << "wrote " << spec.num_videos << " videos to " << out << "\n";
  return 0;
}

Tensor archive_tensor(const std::string& path, const std::string& name) {
  for (auto& e : load_archive(path))
    if (e.name == name) return e.tensor;
  throw LoadError(path + ": no tensor named '" + name + "'");
}

int cmd_metrics(const std::string& samples_path, const std::string& reference_path) {
  const Tensor samples = archive_tensor(samples_path, "samples");
  const Tensor reference = archive_tensor(reference_path, "videos");
  const ToyMetrics m = toy_metrics(samples, reference);
  nlohmann::json j = {{"mse", m.mse},
                      {"psnr", m.psnr},
                      {"inter_frame", m.inter_frame},
                      {"reference_inter_frame", m.reference_inter_frame},
                      {"histogram_distance", m.histogram_distance}};
  std::cout << j.dump(2) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mamba-attention video diffusion at desk scale"};
  app.require_subcommand(1);

  auto* train = app.add_subcommand("train", "train on procedural sprite videos");
  std::string config, out;
  std::optional<std::size_t> steps;
  bool resume = false;
  train->add_option("--config", config, "training config (JSON)")->required();
  train->add_option("--steps", steps, "total optimizer steps (overrides the config)");
  train->add_option("--out", out, "checkpoint directory")->required();
  train->add_flag("--resume", resume, "continue from the checkpoint in --out when present");

  auto* sample = app.add_subcommand("sample", "sample videos with the EMA weights");
  std::string ckpt;
  SampleRequest request;
  bool no_png = false;
  sample->add_option("--ckpt", ckpt, "checkpoint directory")->required();
  sample->add_option("--count", request.count, "number of videos");
  sample->add_option("--seed", request.seed, "sampling seed");
  sample->add_option("--steps", request.steps, "respaced sampling steps (0: all)");
  sample->add_option("--batch", request.batch, "videos per sampling batch");
  sample->add_option("--classes", request.classes, "class per video");
  sample->add_option("--out", out, "output directory")->required();
  sample->add_flag("--no-png", no_png, "skip the PNG frame strips");

  auto* flops = app.add_subcommand("flops", "per-sublayer FLOPs and parameters");
  std::string shape;
  flops->add_option("--config", config, "model or training config (JSON)")->required();
  flops->add_option("--shape", shape, "latent shape FxHxWxC")->required();

  auto* bench = app.add_subcommand("bench-scan", "time the scan kernels (CSV)");
  BenchOptions bopt;
  std::string mode = "par";
  bool with_attention = false;
  bench->add_option("--min-j", bopt.min_length, "shortest sequence");
  bench->add_option("--max-j", bopt.max_length, "longest sequence");
  bench->add_option("--mode", mode, "seq or par")->check(CLI::IsMember({"seq", "par"}));
  bench->add_option("--channels", bopt.channels, "channels");
  bench->add_option("--state", bopt.state, "state size N");
  bench->add_option("--repeats", bopt.repeats, "best of this many runs");
  bench->add_flag("--attention", with_attention, "also time dense attention");

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  std::string suite = "small";
  gradcheck->add_option("--suite", suite, "small or full")->check(CLI::IsMember({"small", "full"}));

  auto* gen = app.add_subcommand("gen-data", "write the sprite dataset as a tensor archive");
  gen->add_option("--config", config, "sprite spec or training config (JSON)");
  gen->add_option("--out", out, "archive path")->required();

  auto* metrics = app.add_subcommand("metrics", "toy metrics of samples against a dataset archive");
  std::string samples_path, reference_path;
  metrics->add_option("--samples", samples_path, "samples.mttn")->required();
  metrics->add_option("--reference", reference_path, "dataset archive from gen-data")->required();

  CLI11_PARSE(app, argc, argv);
  try {
    if (*train) return cmd_train(config, steps, out, resume);
    if (*sample) return cmd_sample(ckpt, request, out, !no_png);
    if (*flops) return cmd_flops(config, shape);
    if (*bench) {
      write_bench_csv(std::cout, bench_scan(parse_scan_mode(mode), bopt));
      if (with_attention) write_bench_csv(std::cout, bench_attention(bopt), false);
      return 0;
    }
    if (*gradcheck) return cmd_gradcheck(suite);
    if (*gen) return cmd_gen_data(config, out);
    if (*metrics) return cmd_metrics(samples_path, reference_path);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
