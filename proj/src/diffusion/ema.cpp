#include "matten/diffusion.hpp"
#include "matten/error.hpp"

namespace matten::diffusion {

void ema_update(std::span<const NamedTensor> ema, std::span<const NamedTensor> params, double decay) {
  if (ema.size() != params.size()) {
    throw StructureError("ema has " + std::to_string(ema.size()) + " tensors, model has " +
                         std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < ema.size(); ++i) {
    if (ema[i].name != params[i].name || ema[i].tensor.shape() != params[i].tensor.shape()) {
      throw StructureError("ema entry " + std::to_string(i) + " '" + ema[i].name + "' " +
                           to_string(ema[i].tensor.shape()) + " does not match '" + params[i].name + "' " +
                           to_string(params[i].tensor.shape()));
    }
  }
  for (std::size_t i = 0; i < ema.size(); ++i) {
    Tensor target = ema[i].tensor;
    auto e = target.mutable_data();
    const auto p = params[i].tensor.data();
    const DType dt = target.dtype();
    for (std::size_t k = 0; k < e.size(); ++k) e[k] = round_to(dt, decay * e[k] + (1.0 - decay) * p[k]);
  }
}

std::vector<NamedTensor> clone_parameters(std::span<const NamedTensor> params) {
  std::vector<NamedTensor> out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back({p.name, p.tensor.clone()});
  return out;
}

}  // namespace matten::diffusion
