#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace diffaug {

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class TensorError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when operand shapes are incompatible. The message names the op and
/// both shapes.
class ShapeError : public TensorError {
 public:
  ShapeError(const std::string& op, const Shape& a, const Shape& b);
  ShapeError(const std::string& op, const std::string& detail);
};

class Tensor;

namespace detail {
struct TensorImpl;
struct GraphNode;
}  // namespace detail

/// Receives the upstream gradient of an op's output and pushes contributions
/// into the parents via Tensor::accumulate_grad.
using BackwardFn = std::function<void(std::span<const float> grad_out,
                                      std::span<const Tensor> parents)>;

/// Shared handle to a dense float32 tensor that may participate in a
/// define-by-run autodiff graph. Copies alias the same storage.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(const Shape& shape, bool requires_grad = false);
  static Tensor full(const Shape& shape, float value, bool requires_grad = false);
  static Tensor from_data(const Shape& shape, std::vector<float> data,
                          bool requires_grad = false);
  static Tensor scalar(float value, bool requires_grad = false);

  /// Builds the result of a differentiable op. A graph node is recorded only
  /// when grad mode is on and some parent requires grad.
  static Tensor make_result(const Shape& shape, std::vector<float> data,
                            std::vector<Tensor> parents, std::string op,
                            BackwardFn backward);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::int64_t dim(int axis) const;
  int ndim() const;
  std::int64_t numel() const;

  std::span<const float> data() const;
  /// Direct write access; intended for leaves (parameters, inputs).
  std::span<float> mutable_data();
  float item() const;

  bool requires_grad() const;
  void set_requires_grad(bool flag);
  bool is_leaf() const;
  /// Name of the producing op, empty for leaves and detached tensors.
  std::string op_name() const;

  bool has_grad() const;
  std::span<const float> grad() const;
  void zero_grad();
  /// Adds `contribution` to this tensor's grad buffer (allocated on demand).
  /// No-op when the tensor does not require grad.
  void accumulate_grad(std::span<const float> contribution) const;
  /// Grad buffer for in-place accumulation, allocated zeroed on demand.
  std::span<float> grad_buffer() const;

  Tensor detach() const;
  Tensor clone() const;

  /// Reverse-mode sweep from a single-element tensor. Leaf grads accumulate
  /// across calls; the graph is released afterwards.
  void backward() const;

  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
  detail::TensorImpl& impl() const;

  std::shared_ptr<detail::TensorImpl> impl_;

  friend std::vector<std::string> graph_op_names(const Tensor& root);
};

/// Op names of every node reachable from `root`, in reverse topological order.
std::vector<std::string> graph_op_names(const Tensor& root);

bool grad_enabled();

/// Disables graph recording for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// When enabled, every op validates that its inputs are finite.
void set_check_finite(bool enabled);
bool check_finite_enabled();

}  // namespace diffaug
