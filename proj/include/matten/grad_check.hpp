#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "matten/tensor.hpp"

namespace matten {

struct ParamGradError {
  std::string name;
  double max_abs_err = 0.0;
  double max_rel_err = 0.0;
  std::size_t coords_checked = 0;
};

struct GradReport {
  double max_abs_err = 0.0;
  double max_rel_err = 0.0;
  std::vector<ParamGradError> per_parameter;

  bool passed(double rel_tol) const { return max_rel_err <= rel_tol; }
};

struct GradCheckOptions {
  /// Central-difference half step h in (f(p+h) - f(p-h)) / 2h.
  double step = 1e-5;
  /// Combine the steps h and 2h as (4 D(h) - D(2h)) / 3, cancelling the
  /// h^2 truncation term.
  bool richardson = false;
  /// Relative error is |tape - fd| / max(|tape|, |fd|, rel_floor).
  double rel_floor = 1e-6;
  /// 0 checks every coordinate; otherwise a seeded subset per parameter.
  std::size_t max_coords_per_param = 0;
  std::uint64_t seed = 0;
};

/// Compares tape gradients of the scalar `f` against central finite
/// differences for every listed parameter. Parameters must be 64-bit
/// leaves with requires_grad set.
GradReport grad_check(const std::function<Tensor()>& f,
                      std::span<const NamedTensor> params,
                      const GradCheckOptions& options = {});

}  // namespace matten
