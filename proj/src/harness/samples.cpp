#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <memory>
#include <random>

#include <png.h>

#include "matten/archive.hpp"
#include "matten/error.hpp"
#include "matten/trainer.hpp"

namespace matten {

// Chunk k of the request samples with seed mix(seed, k), so a sample set
// depends on `batch` as well as `seed`.
SampleSet sample_ema(const Trainer& trainer, const SampleRequest& request) {
  const auto& cfg = trainer.config();
  const auto& d = cfg.data;
  const std::size_t K = cfg.model.num_classes;
  SampleSet out;
  if (request.count == 0) return out;
  if (request.batch == 0) throw ConfigError("sample batch must be positive");
  if (!request.classes.empty()) {
    if (K == 0) throw ConfigError("classes requested from an unconditional model");
    if (request.classes.size() != request.count) throw DimensionError("need one class per sample");
    for (auto k : request.classes)
      if (k >= K) throw IndexError("class " + std::to_string(k) + " out of range for " + std::to_string(K) + " classes");
    out.classes = request.classes;
  } else if (K > 0) {
    const std::size_t used = std::min<std::size_t>(K, d.kinds.size());
    for (std::size_t i = 0; i < request.count; ++i) out.classes.push_back(i % used);
  }

  const MattenModel model(cfg.model, cfg.seed);
  load_parameters(model, trainer.ema());
  diffusion::SampleOptions opts;
  opts.steps = request.steps;

  const std::size_t per = d.frames * d.height * d.width * d.channels;
  std::vector<double> all;
  all.reserve(request.count * per);
  for (std::size_t start = 0, chunk = 0; start < request.count; start += request.batch, ++chunk) {
    const std::size_t n = std::min(request.batch, request.count - start);
    std::vector<std::size_t> cls;
    if (!out.classes.empty()) cls.assign(out.classes.begin() + start, out.classes.begin() + start + n);
    std::seed_seq seq{static_cast<std::uint32_t>(request.seed), static_cast<std::uint32_t>(request.seed >> 32),
                      static_cast<std::uint32_t>(chunk)};
    std::uint64_t chunk_seed = 0;
    std::array<std::uint32_t, 2> words{};
    seq.generate(words.begin(), words.end());
    chunk_seed = (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
    const Tensor v = diffusion::p_sample_loop(model, trainer.schedule(), {n, d.frames, d.height, d.width, d.channels},
                                              cls, chunk_seed, opts);
    const auto values = v.data();
    all.insert(all.end(), values.begin(), values.end());
  }
  out.videos = Tensor::from_vector({request.count, d.frames, d.height, d.width, d.channels}, std::move(all),
                                   cfg.model.dtype);
  return out;
}

namespace {

// Frames of one video side by side, gray for one channel, RGB for three,
// otherwise the first channel. [-1, 1] maps to 0..255.
void write_strip(const std::filesystem::path& path, std::span<const double> video, std::size_t F, std::size_t H,
                 std::size_t W, std::size_t C) {
  const bool rgb = C == 3;
  const std::size_t out_c = rgb ? 3 : 1, row_len = F * W * out_c;
  std::vector<png_byte> image(H * row_len);
  for (std::size_t f = 0; f < F; ++f)
    for (std::size_t h = 0; h < H; ++h)
      for (std::size_t w = 0; w < W; ++w)
        for (std::size_t c = 0; c < out_c; ++c) {
          const double v = video[((f * H + h) * W + w) * C + c];
          const double u = std::clamp((v + 1.0) * 127.5, 0.0, 255.0);
          image[h * row_len + (f * W + w) * out_c + c] = static_cast<png_byte>(std::lround(std::isfinite(u) ? u : 0.0));
        }

  std::unique_ptr<FILE, int (*)(FILE*)> file(std::fopen(path.c_str(), "wb"), &std::fclose);
  if (!file) throw Error("cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw Error("libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error("libpng failed writing " + path.string());
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(F * W), static_cast<png_uint_32>(H), 8,
               rgb ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t h = 0; h < H; ++h) png_write_row(png, image.data() + h * row_len);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace

void write_samples(const std::filesystem::path& dir, const SampleSet& samples, bool png) {
  std::filesystem::create_directories(dir);
  std::vector<NamedTensor> entries;
  const std::size_t count = samples.videos.defined() && samples.videos.rank() == 5 ? samples.videos.extent(0) : 0;
  if (count > 0) {
    entries.push_back({"samples", samples.videos});
    if (!samples.classes.empty()) {
      std::vector<double> k(samples.classes.begin(), samples.classes.end());
      const std::size_t n = k.size();
      entries.push_back({"classes", Tensor::from_vector({n}, std::move(k), DType::F64)});
    }
  }
  save_archive(dir / "samples.mttn", entries);
  if (!png || count == 0) return;
  const auto& s = samples.videos.shape();
  const std::size_t per = s[1] * s[2] * s[3] * s[4];
  for (std::size_t i = 0; i < count; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "sample_%04zu.png", i);
    write_strip(dir / name, samples.videos.data().subspan(i * per, per), s[1], s[2], s[3], s[4]);
  }
}

}  // namespace matten
