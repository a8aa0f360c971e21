#include "matten/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "matten/error.hpp"

namespace matten {

namespace {

double evaluate(const std::function<Tensor()>& f) {
  const Tensor out = f();
  if (out.numel() != 1) {
    throw DimensionError("grad_check: objective must be scalar, got " +
                         to_string(out.shape()));
  }
  const double v = out.item();
  if (!std::isfinite(v)) throw NumericError("grad_check: objective evaluated to a non-finite value");
  return v;
}

}  // namespace

GradReport grad_check(const std::function<Tensor()>& f,
                      std::span<const NamedTensor> params,
                      const GradCheckOptions& options) {
  if (!(options.step > 0.0)) throw ParameterError("grad_check: step must be positive");
  for (const auto& p : params) {
    if (p.tensor.dtype() != DType::F64) {
      throw ParameterError("grad_check: parameter '" + p.name + "' is not 64-bit");
    }
    if (!p.tensor.requires_grad() || !p.tensor.is_leaf()) {
      throw ParameterError("grad_check: parameter '" + p.name +
                           "' must be a leaf requiring gradients");
    }
  }

  std::vector<Tensor> handles;
  for (const auto& p : params) {
    handles.push_back(p.tensor);
    handles.back().zero_grad();
  }
  {
    const Tensor out = f();
    if (out.numel() != 1 || !std::isfinite(out.item())) {
      throw NumericError("grad_check: objective evaluated to a non-finite value");
    }
    out.backward();
  }

  std::mt19937_64 rng(options.seed);
  GradReport report;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor& t = handles[pi];
    const std::size_t n = t.numel();
    std::vector<double> tape(n, 0.0);
    if (t.has_grad()) std::copy(t.grad().begin(), t.grad().end(), tape.begin());

    std::vector<std::size_t> coords(n);
    std::iota(coords.begin(), coords.end(), 0);
    if (options.max_coords_per_param && n > options.max_coords_per_param) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(options.max_coords_per_param);
    }

    ParamGradError entry{params[pi].name, 0.0, 0.0, coords.size()};
    auto values = t.mutable_data();
    for (auto c : coords) {
      const double saved = values[c];
      const auto central = [&](double h) {
        values[c] = saved + h;
        const double plus = evaluate(f);
        values[c] = saved - h;
        const double minus = evaluate(f);
        values[c] = saved;
        return (plus - minus) / (2.0 * h);
      };
      double fd = central(options.step);
      if (options.richardson) fd = (4.0 * fd - central(2.0 * options.step)) / 3.0;
      const double abs_err = std::abs(fd - tape[c]);
      const double denom =
          std::max({std::abs(fd), std::abs(tape[c]), options.rel_floor});
      entry.max_abs_err = std::max(entry.max_abs_err, abs_err);
      entry.max_rel_err = std::max(entry.max_rel_err, abs_err / denom);
    }
    report.max_abs_err = std::max(report.max_abs_err, entry.max_abs_err);
    report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
    report.per_parameter.push_back(std::move(entry));
    t.zero_grad();
  }
  return report;
}

}  // namespace matten
