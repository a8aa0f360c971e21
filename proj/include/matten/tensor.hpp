#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace matten {

/// Storage precision of a tensor. Values are held in double-precision
/// buffers; F32 tensors round every produced value to the nearest float so
/// arithmetic results carry 32-bit precision.
enum class DType : std::uint32_t { F32 = 0, F64 = 1 };

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);
std::string to_string(DType dtype);
DType promote(DType a, DType b);
double round_to(DType dtype, double value);

/// Gradient accumulators handed to a backward function, one per op input.
/// An input that does not require a gradient gets an empty span.
using GradSpans = std::span<const std::span<double>>;
using BackwardFn =
    std::function<void(std::span<const double> grad_out, GradSpans grad_in)>;

/// Dense row-major array participating in a reverse-mode gradient tape.
///
/// A Tensor is a cheap handle; copies alias the same node. Values of
/// non-leaf tensors are immutable. Leaf tensors (parameters, inputs) may be
/// edited in place between evaluations, which is how optimizers and the
/// finite-difference checker work.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, DType dtype = DType::F32);
  static Tensor full(Shape shape, double value, DType dtype = DType::F32);
  static Tensor from_vector(Shape shape, std::vector<double> values,
                            DType dtype = DType::F32);
  static Tensor scalar(double value, DType dtype = DType::F32);
  static Tensor randn(Shape shape, std::mt19937_64& rng, double stddev = 1.0,
                      DType dtype = DType::F32);

  /// Records an operation result. `backward` is kept only when some input
  /// requires a gradient.
  static Tensor make_op(Shape shape, DType dtype, std::vector<double> values,
                        std::vector<Tensor> inputs, BackwardFn backward);

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const;
  std::size_t extent(std::size_t axis) const;
  std::size_t numel() const;
  DType dtype() const;

  std::span<const double> data() const;
  /// In-place access for leaves. Throws for op results.
  std::span<double> mutable_data();
  /// Copies `values` in, rounding to this tensor's dtype.
  void assign(std::span<const double> values);
  double item() const;
  std::vector<double> to_vector() const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool flag = true);
  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad();

  /// Reverse pass from a single-element tensor.
  void backward() const;

  Tensor detach() const;
  /// Detached deep copy.
  Tensor clone() const;
  bool is_leaf() const;
  bool same_node(const Tensor& other) const noexcept {
    return node_ == other.node_;
  }

  struct Node;

 private:
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}
  Node& node() const;

  std::shared_ptr<Node> node_;
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

/// While alive, ops on this thread record no backward tape.
class NoGradGuard {
 public:
  NoGradGuard() noexcept;
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled() noexcept;

/// Multiply-accumulate counter fed by matmul/bmm and the scan kernels.
class MacCounter {
 public:
  void add(std::uint64_t count) noexcept;
  std::uint64_t value() const noexcept;
  void reset() noexcept;

 private:
  std::atomic<std::uint64_t> value_{0};
};

MacCounter& mac_counter();

}  // namespace matten
