#include "matten/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>
#include <utility>

#include "matten/error.hpp"

namespace matten {

struct Tensor::Node {
  Shape shape;
  DType dtype = DType::F32;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  BackwardFn backward;
};

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ", ";
    out << shape[i];
  }
  out << ']';
  return out.str();
}

std::string to_string(DType dtype) {
  return dtype == DType::F32 ? "f32" : "f64";
}

DType promote(DType a, DType b) {
  return (a == DType::F64 || b == DType::F64) ? DType::F64 : DType::F32;
}

double round_to(DType dtype, double value) {
  return dtype == DType::F32 ? static_cast<double>(static_cast<float>(value))
                             : value;
}

namespace {

void round_all(DType dtype, std::vector<double>& values) {
  if (dtype != DType::F32) return;
  for (auto& v : values) v = static_cast<double>(static_cast<float>(v));
}

void check_shape(const Shape& shape) {
  for (auto e : shape) {
    if (e == 0) throw DimensionError("tensor extents must be positive, got " +
                                     to_string(shape));
  }
}

}  // namespace

Tensor Tensor::zeros(Shape shape, DType dtype) {
  return full(std::move(shape), 0.0, dtype);
}

Tensor Tensor::full(Shape shape, double value, DType dtype) {
  check_shape(shape);
  auto node = std::make_shared<Node>();
  node->value.assign(matten::numel(shape), round_to(dtype, value));
  node->shape = std::move(shape);
  node->dtype = dtype;
  return Tensor(std::move(node));
}

Tensor Tensor::from_vector(Shape shape, std::vector<double> values,
                           DType dtype) {
  check_shape(shape);
  if (matten::numel(shape) != values.size()) {
    throw DimensionError("shape " + to_string(shape) + " holds " +
                         std::to_string(matten::numel(shape)) +
                         " values, got " + std::to_string(values.size()));
  }
  round_all(dtype, values);
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->dtype = dtype;
  node->value = std::move(values);
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, DType dtype) {
  return from_vector({}, {value}, dtype);
}

Tensor Tensor::randn(Shape shape, std::mt19937_64& rng, double stddev,
                     DType dtype) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> values(matten::numel(shape));
  for (auto& v : values) v = dist(rng);
  return from_vector(std::move(shape), std::move(values), dtype);
}

namespace {
thread_local bool tape_disabled = false;
}  // namespace

bool grad_enabled() noexcept { return !tape_disabled; }

NoGradGuard::NoGradGuard() noexcept : previous_(tape_disabled) { tape_disabled = true; }
NoGradGuard::~NoGradGuard() { tape_disabled = previous_; }

Tensor Tensor::make_op(Shape shape, DType dtype, std::vector<double> values,
                       std::vector<Tensor> inputs, BackwardFn backward) {
  if (matten::numel(shape) != values.size()) {
    throw DimensionError("op result shape " + to_string(shape) +
                         " does not match " + std::to_string(values.size()) +
                         " values");
  }
  round_all(dtype, values);
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->dtype = dtype;
  node->value = std::move(values);
  bool needs_grad = false;
  if (grad_enabled()) {
    for (const auto& in : inputs) needs_grad |= in.requires_grad();
  }
  if (needs_grad) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (auto& in : inputs) node->inputs.push_back(in.node_);
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

Tensor::Node& Tensor::node() const {
  if (!node_) throw Error("use of an undefined tensor");
  return *node_;
}

const Shape& Tensor::shape() const { return node().shape; }
std::size_t Tensor::rank() const { return node().shape.size(); }

std::size_t Tensor::extent(std::size_t axis) const {
  const auto& s = node().shape;
  if (axis >= s.size()) {
    throw DimensionError("axis " + std::to_string(axis) +
                         " out of range for shape " + to_string(s));
  }
  return s[axis];
}

std::size_t Tensor::numel() const { return node().value.size(); }
DType Tensor::dtype() const { return node().dtype; }
std::span<const double> Tensor::data() const { return node().value; }

std::span<double> Tensor::mutable_data() {
  if (!is_leaf()) throw Error("values of an op result are immutable");
  return node().value;
}

void Tensor::assign(std::span<const double> values) {
  auto dst = mutable_data();
  if (values.size() != dst.size()) {
    throw DimensionError("assign: expected " + std::to_string(dst.size()) +
                         " values, got " + std::to_string(values.size()));
  }
  const auto dt = dtype();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = round_to(dt, values[i]);
}

double Tensor::item() const {
  if (numel() != 1) {
    throw DimensionError("item() needs a single-element tensor, got " +
                         to_string(shape()));
  }
  return node().value[0];
}

std::vector<double> Tensor::to_vector() const { return node().value; }

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool flag) {
  if (!is_leaf()) throw Error("requires_grad can only be set on leaves");
  node().requires_grad = flag;
  return *this;
}

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }
std::span<const double> Tensor::grad() const { return node().grad; }
void Tensor::zero_grad() { node().grad.clear(); }
bool Tensor::is_leaf() const { return node().inputs.empty(); }

Tensor Tensor::detach() const {
  auto copy = std::make_shared<Node>();
  copy->shape = node().shape;
  copy->dtype = node().dtype;
  copy->value = node().value;
  return Tensor(std::move(copy));
}

Tensor Tensor::clone() const { return detach(); }

void Tensor::backward() const {
  auto& root = node();
  if (root.value.size() != 1) {
    throw DimensionError("backward() needs a single-element tensor, got " +
                         to_string(root.shape));
  }
  if (!root.requires_grad) return;

  // Iterative post-order DFS gives a topological order without recursion.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{&root, 0}};
  visited.insert(&root);
  while (!stack.empty()) {
    auto& [current, next_input] = stack.back();
    if (next_input < current->inputs.size()) {
      Node* child = current->inputs[next_input++].get();
      if (child->requires_grad && visited.insert(child).second) {
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(current);
      stack.pop_back();
    }
  }

  if (root.grad.empty()) root.grad.assign(1, 0.0);
  root.grad[0] += 1.0;

  std::vector<std::span<double>> spans;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (!n->backward || n->grad.empty()) continue;
    spans.clear();
    for (auto& in : n->inputs) {
      if (in->requires_grad) {
        if (in->grad.empty()) in->grad.assign(in->value.size(), 0.0);
        spans.emplace_back(in->grad);
      } else {
        spans.emplace_back();
      }
    }
    n->backward(n->grad, spans);
    // Interior gradients are consumed; only leaves keep theirs.
    if (n != &root) std::vector<double>().swap(n->grad);
  }
}

void MacCounter::add(std::uint64_t count) noexcept {
  value_.fetch_add(count, std::memory_order_relaxed);
}

std::uint64_t MacCounter::value() const noexcept {
  return value_.load(std::memory_order_relaxed);
}

void MacCounter::reset() noexcept { value_.store(0, std::memory_order_relaxed); }

MacCounter& mac_counter() {
  static MacCounter counter;
  return counter;
}

}  // namespace matten
