#include "matten/trainer.hpp"

#include <cmath>
#include <fstream>
#include <ostream>
#include <random>

#include "matten/archive.hpp"
#include "matten/error.hpp"

namespace matten {

void TrainConfig::validate() const {
  model.validate();
  data.validate();
  if (batch == 0) throw ConfigError("train.batch must be positive");
  if (!(lr > 0.0)) throw ConfigError("train.lr must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("train.betas must lie in [0, 1)");
  if (!(adam_eps > 0.0) || weight_decay < 0.0) throw ConfigError("train.adam_eps > 0 and weight_decay >= 0 required");
  if (data.channels != model.in_channels) {
    throw ConfigError("data.channels (" + std::to_string(data.channels) + ") must equal model.in_channels (" +
                      std::to_string(model.in_channels) + ")");
  }
  if (data.height % model.patch != 0 || data.width % model.patch != 0) {
    throw ConfigError("data frame size must be divisible by model.patch");
  }
  if (model.num_classes != 0 && model.num_classes < data.kinds.size()) {
    throw ConfigError("model.num_classes is smaller than the number of sprite classes");
  }
  if (data.num_videos == 0) throw ConfigError("data.num_videos must be positive");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"model", c.model},
       {"data", c.data},
       {"steps", c.steps},
       {"batch", c.batch},
       {"lr", c.lr},
       {"beta1", c.beta1},
       {"beta2", c.beta2},
       {"adam_eps", c.adam_eps},
       {"weight_decay", c.weight_decay},
       {"ema_decay", c.ema.decay},
       {"ema_switch_step", c.ema.switch_step},
       {"ema_late_decay", c.ema.late},
       {"vlb_weight", c.vlb_weight},
       {"flip", c.flip},
       {"checkpoint_every", c.checkpoint_every},
       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  if (!j.is_object()) throw ConfigError("train: expected an object");
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "model") value.get_to(c.model);
      else if (key == "data") value.get_to(c.data);
      else if (key == "steps") value.get_to(c.steps);
      else if (key == "batch") value.get_to(c.batch);
      else if (key == "lr") value.get_to(c.lr);
      else if (key == "beta1") value.get_to(c.beta1);
      else if (key == "beta2") value.get_to(c.beta2);
      else if (key == "adam_eps") value.get_to(c.adam_eps);
      else if (key == "weight_decay") value.get_to(c.weight_decay);
      else if (key == "ema_decay") value.get_to(c.ema.decay);
      else if (key == "ema_switch_step") value.get_to(c.ema.switch_step);
      else if (key == "ema_late_decay") value.get_to(c.ema.late);
      else if (key == "vlb_weight") value.get_to(c.vlb_weight);
      else if (key == "flip") value.get_to(c.flip);
      else if (key == "checkpoint_every") value.get_to(c.checkpoint_every);
      else if (key == "seed") value.get_to(c.seed);
      else throw ConfigError("train: unknown key '" + key + "'");
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("train." + key + ": " + e.what());
    }
  }
}

TrainConfig load_train_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  TrainConfig c = j.get<TrainConfig>();
  c.validate();
  return c;
}

namespace {

std::mt19937_64 step_rng(std::uint64_t seed, std::size_t step) {
  const std::uint64_t k = step;
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(k), static_cast<std::uint32_t>(k >> 32)};
  return std::mt19937_64(seq);
}

std::string shape_text(const Tensor& t) { return to_string(t.shape()); }

}  // namespace

Trainer::Trainer(TrainConfig config)
    : config_((config.validate(), std::move(config))),
      model_(config_.model, config_.seed),
      data_(gen_sprites(config_.data)),
      schedule_(diffusion::make_schedule(config_.model.timesteps)),
      ema_(diffusion::clone_parameters(model_.parameters())) {
  for (const auto& p : model_.parameters()) {
    adam_m_.emplace_back(p.tensor.numel(), 0.0);
    adam_v_.emplace_back(p.tensor.numel(), 0.0);
  }
}

Batch Trainer::draw_batch(std::size_t step) const {
  auto rng = step_rng(config_.seed, step);
  const auto& d = config_.data;
  const std::size_t B = config_.batch, per = d.frames * d.height * d.width * d.channels;
  const DType dt = config_.model.dtype;
  std::uniform_int_distribution<std::size_t> pick(0, d.num_videos - 1);
  std::uniform_int_distribution<std::size_t> time(0, schedule_.size() - 1);
  std::bernoulli_distribution coin(0.5);
  std::normal_distribution<double> normal;

  Batch b;
  for (std::size_t i = 0; i < B; ++i) {
    b.index.push_back(pick(rng));
    b.flipped.push_back(config_.flip && coin(rng));
    b.t.push_back(time(rng));
    b.labels.push_back(data_.labels[b.index.back()]);
  }
  std::vector<double> z0(B * per), eps(B * per);
  const auto src = data_.videos.data();
  const std::size_t W = d.width, C = d.channels, rows = d.frames * d.height;
  for (std::size_t i = 0; i < B; ++i) {
    const auto video = src.subspan(b.index[i] * per, per);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t w = 0; w < W; ++w) {
        const std::size_t from = b.flipped[i] ? W - 1 - w : w;
        for (std::size_t c = 0; c < C; ++c) z0[i * per + (r * W + w) * C + c] = video[(r * W + from) * C + c];
      }
  }
  for (auto& e : eps) e = normal(rng);
  const Shape shape{B, d.frames, d.height, d.width, d.channels};
  b.z0 = Tensor::from_vector(shape, std::move(z0), dt);
  b.eps = Tensor::from_vector(shape, std::move(eps), dt);
  return b;
}

StepStats Trainer::step() {
  const Batch b = draw_batch(step_);
  const auto params = model_.parameters();
  for (const auto& p : params) const_cast<Tensor&>(p.tensor).zero_grad();
  const std::vector<std::size_t> none;
  const auto& labels = config_.model.num_classes > 0 ? b.labels : none;
  // A forward pass that fails on non-finite values is handled like a
  // non-finite loss.
  std::optional<diffusion::LossTerms> loss;
  std::string failure;
  try {
    loss = diffusion::hybrid_loss(model_, schedule_, b.z0, b.t, b.eps, labels, config_.vlb_weight);
  } catch (const Error& e) {
    failure = e.what();
  }
  StepStats stats{step_ + 1, 0.0, 0.0, 0.0};
  if (loss) {
    stats = {step_ + 1, loss->simple.item(), loss->vlb.item(), loss->total.item()};
    if (!std::isfinite(stats.total)) {
      failure = "non-finite loss (simple " + std::to_string(stats.simple) + ", vlb " + std::to_string(stats.vlb) + ")";
    }
  }
  if (!failure.empty()) {
    std::string where;
    if (!failure_dir_.empty()) {
      std::filesystem::create_directories(failure_dir_);
      const auto path = failure_dir_ / "failed_batch.mttn";
      std::vector<double> t(b.t.begin(), b.t.end()), k(b.labels.begin(), b.labels.end()),
          idx(b.index.begin(), b.index.end()), flip(b.flipped.begin(), b.flipped.end());
      const std::size_t B = b.t.size();
      const std::vector<NamedTensor> dump{{"z0", b.z0},
                                          {"eps", b.eps},
                                          {"t", Tensor::from_vector({B}, t, DType::F64)},
                                          {"labels", Tensor::from_vector({B}, k, DType::F64)},
                                          {"index", Tensor::from_vector({B}, idx, DType::F64)},
                                          {"flipped", Tensor::from_vector({B}, flip, DType::F64)}};
      save_archive(path, dump);
      where = "; batch written to " + path.string();
    }
    throw NumericError("step " + std::to_string(step_ + 1) + ": " + failure + where,
                       static_cast<std::ptrdiff_t>(step_ + 1));
  }
  loss->total.backward();

  const double t = static_cast<double>(step_ + 1);
  const double c1 = 1.0 - std::pow(config_.beta1, t), c2 = 1.0 - std::pow(config_.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor p = params[i].tensor;
    if (!p.has_grad()) continue;
    const auto g = p.grad();
    auto w = p.mutable_data();
    auto& m = adam_m_[i];
    auto& v = adam_v_[i];
    for (std::size_t k = 0; k < w.size(); ++k) {
      m[k] = config_.beta1 * m[k] + (1.0 - config_.beta1) * g[k];
      v[k] = config_.beta2 * v[k] + (1.0 - config_.beta2) * g[k] * g[k];
      const double update = (m[k] / c1) / (std::sqrt(v[k] / c2) + config_.adam_eps) + config_.weight_decay * w[k];
      w[k] = round_to(p.dtype(), w[k] - config_.lr * update);
    }
    p.zero_grad();
  }
  diffusion::ema_update(ema_, params, config_.ema.at(step_ + 1));
  ++step_;
  return stats;
}

void Trainer::run(std::ostream* log, const std::optional<std::filesystem::path>& out,
                  const std::function<void(const StepStats&)>& on_step) {
  while (step_ < config_.steps) {
    const StepStats s = step();
    if (log) {
      *log << s.step << ',' << nlohmann::json(s.simple).dump() << ',' << nlohmann::json(s.vlb).dump() << ','
           << nlohmann::json(s.total).dump() << '\n';
    }
    if (on_step) on_step(s);
    if (out && config_.checkpoint_every != 0 && step_ % config_.checkpoint_every == 0) save(*out);
  }
  if (log) log->flush();
}

void load_parameters(const MattenModel& model, std::span<const NamedTensor> values) {
  const auto params = model.parameters();
  if (params.size() != values.size()) {
    throw StructureError("expected " + std::to_string(params.size()) + " tensors, got " + std::to_string(values.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].name != values[i].name || params[i].tensor.shape() != values[i].tensor.shape()) {
      throw StructureError("tensor " + std::to_string(i) + ": expected '" + params[i].name + "' " +
                           shape_text(params[i].tensor) + ", got '" + values[i].name + "' " +
                           shape_text(values[i].tensor));
    }
    Tensor p = params[i].tensor;
    p.assign(values[i].tensor.data());
  }
}

// Checkpoint directory: checkpoint.json (configuration, step, schedule and
// RNG description) and tensors.mttn holding param/, ema/, adam_m/ and
// adam_v/ entries in parameter order.
void Trainer::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  nlohmann::json j = {{"format", "matten-checkpoint"},
                      {"version", 1},
                      {"step", step_},
                      {"train", config_},
                      {"schedule", {{"kind", "linear"}, {"timesteps", schedule_.size()}, {"beta_start", 1e-4}, {"beta_end", 2e-2}}},
                      {"rng", {{"kind", "mt19937_64 seeded per step from seed_seq(seed, step)"}, {"seed", config_.seed}, {"next_step", step_}}}};
  std::vector<NamedTensor> tensors;
  const auto params = model_.parameters();
  for (const auto& p : params) tensors.push_back({"param/" + p.name, p.tensor});
  for (const auto& e : ema_) tensors.push_back({"ema/" + e.name, e.tensor});
  for (std::size_t i = 0; i < params.size(); ++i) {
    tensors.push_back({"adam_m/" + params[i].name, Tensor::from_vector(params[i].tensor.shape(), adam_m_[i], DType::F64)});
    tensors.push_back({"adam_v/" + params[i].name, Tensor::from_vector(params[i].tensor.shape(), adam_v_[i], DType::F64)});
  }
  const auto tmp_json = dir / "checkpoint.json.tmp", tmp_tensors = dir / "tensors.mttn.tmp";
  {
    std::ofstream out(tmp_json);
    out << j.dump(2) << '\n';
    if (!out) throw Error("cannot write " + tmp_json.string());
  }
  save_archive(tmp_tensors, tensors);
  std::filesystem::rename(tmp_tensors, dir / "tensors.mttn");
  std::filesystem::rename(tmp_json, dir / "checkpoint.json");
}

Trainer Trainer::load(const std::filesystem::path& dir) {
  const auto json_path = dir / "checkpoint.json";
  std::ifstream in(json_path);
  if (!in) throw LoadError("checkpoint.json: cannot open " + json_path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(std::string("checkpoint.json: malformed JSON: ") + e.what());
  }
  const auto field = [&](const char* key) -> const nlohmann::json& {
    if (!j.is_object() || !j.contains(key)) throw LoadError(std::string("checkpoint.json: missing field '") + key + "'");
    return j.at(key);
  };
  if (field("format") != "matten-checkpoint") throw LoadError("checkpoint.json: format: not a matten checkpoint");
  if (field("version") != 1) throw LoadError("checkpoint.json: version: unsupported " + field("version").dump());
  TrainConfig config;
  try {
    field("train").get_to(config);
    config.validate();
  } catch (const LoadError&) {
    throw;
  } catch (const Error& e) {
    throw LoadError(std::string("checkpoint.json: train: ") + e.what());
  }
  std::size_t step = 0;
  try {
    field("step").get_to(step);
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(std::string("checkpoint.json: step: ") + e.what());
  }
  const auto& sched = field("schedule");
  if (!sched.is_object() || sched.value("timesteps", std::size_t{0}) != config.model.timesteps ||
      sched.value("kind", std::string{}) != "linear") {
    throw LoadError("checkpoint.json: schedule: does not match train.model.timesteps with a linear schedule");
  }

  Trainer t(std::move(config));
  std::vector<NamedTensor> tensors;
  try {
    tensors = load_archive(dir / "tensors.mttn");
  } catch (const Error& e) {
    throw LoadError(std::string("tensors.mttn: ") + e.what());
  }
  const auto params = t.model_.parameters();
  const std::size_t P = params.size();
  if (tensors.size() != 4 * P) {
    throw LoadError("tensors.mttn: expected " + std::to_string(4 * P) + " tensors, found " + std::to_string(tensors.size()));
  }
  const auto expect = [&](std::size_t at, const std::string& name, const Tensor& like) -> const Tensor& {
    const NamedTensor& got = tensors[at];
    if (got.name != name) throw LoadError("tensors.mttn: entry " + std::to_string(at) + ": expected '" + name + "', found '" + got.name + "'");
    if (got.tensor.shape() != like.shape()) {
      throw LoadError("tensors.mttn: " + name + ": shape " + shape_text(got.tensor) + ", expected " + shape_text(like));
    }
    return got.tensor;
  };
  for (std::size_t i = 0; i < P; ++i) {
    Tensor p = params[i].tensor;
    p.assign(expect(i, "param/" + params[i].name, p).data());
    Tensor e = t.ema_[i].tensor;
    e.assign(expect(P + i, "ema/" + params[i].name, p).data());
    const auto m = expect(2 * P + 2 * i, "adam_m/" + params[i].name, p).data();
    const auto v = expect(2 * P + 2 * i + 1, "adam_v/" + params[i].name, p).data();
    t.adam_m_[i].assign(m.begin(), m.end());
    t.adam_v_[i].assign(v.begin(), v.end());
  }
  t.step_ = step;
  return t;
}

}  // namespace matten
