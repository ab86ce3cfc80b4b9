#include "diffaug/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include <fmt/format.h>
#include <fmt/ranges.h>

namespace diffaug {

namespace detail {

struct GraphNode {
  std::string op;
  std::vector<Tensor> parents;
  BackwardFn backward;
  bool freed = false;
};

struct TensorImpl {
  Shape shape;
  std::vector<float> data;
  std::vector<float> grad;
  bool requires_grad = false;
  std::shared_ptr<GraphNode> node;
};

}  // namespace detail

namespace {

thread_local bool g_grad_enabled = true;
bool g_check_finite = false;

}  // namespace

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) {
    if (d < 0) throw ShapeError("shape", "negative dimension in " + shape_str(shape));
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& shape) { return fmt::format("({})", fmt::join(shape, ", ")); }

ShapeError::ShapeError(const std::string& op, const Shape& a, const Shape& b)
    : TensorError(fmt::format("{}: incompatible shapes {} and {}", op, shape_str(a), shape_str(b))) {}

ShapeError::ShapeError(const std::string& op, const std::string& detail)
    : TensorError(fmt::format("{}: {}", op, detail)) {}

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) {
  return full(shape, 0.0f, requires_grad);
}

Tensor Tensor::full(const Shape& shape, float value, bool requires_grad) {
  return from_data(shape, std::vector<float>(shape_numel(shape), value), requires_grad);
}

Tensor Tensor::from_data(const Shape& shape, std::vector<float> data, bool requires_grad) {
  if (shape_numel(shape) != static_cast<std::int64_t>(data.size())) {
    throw ShapeError("from_data", fmt::format("shape {} needs {} values, got {}", shape_str(shape),
                                              shape_numel(shape), data.size()));
  }
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = shape;
  impl->data = std::move(data);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(float value, bool requires_grad) {
  return from_data({}, {value}, requires_grad);
}

Tensor Tensor::make_result(const Shape& shape, std::vector<float> data, std::vector<Tensor> parents,
                           std::string op, BackwardFn backward) {
  Tensor out = from_data(shape, std::move(data));
  if (!g_grad_enabled) return out;
  bool needs = std::any_of(parents.begin(), parents.end(),
                           [](const Tensor& p) { return p.defined() && p.requires_grad(); });
  if (!needs) return out;
  auto node = std::make_shared<detail::GraphNode>();
  node->op = std::move(op);
  node->parents = std::move(parents);
  node->backward = std::move(backward);
  out.impl_->requires_grad = true;
  out.impl_->node = std::move(node);
  return out;
}

detail::TensorImpl& Tensor::impl() const {
  if (!impl_) throw TensorError("use of undefined tensor");
  return *impl_;
}

const Shape& Tensor::shape() const { return impl().shape; }

std::int64_t Tensor::dim(int axis) const {
  const auto& s = shape();
  int n = static_cast<int>(s.size());
  if (axis < 0) axis += n;
  if (axis < 0 || axis >= n) throw ShapeError("dim", fmt::format("axis {} out of range for {}", axis, shape_str(s)));
  return s[axis];
}

int Tensor::ndim() const { return static_cast<int>(shape().size()); }
std::int64_t Tensor::numel() const { return static_cast<std::int64_t>(impl().data.size()); }
std::span<const float> Tensor::data() const { return impl().data; }
std::span<float> Tensor::mutable_data() { return impl().data; }

float Tensor::item() const {
  if (numel() != 1) throw ShapeError("item", fmt::format("expected one element, got {}", shape_str(shape())));
  return impl().data[0];
}

bool Tensor::requires_grad() const { return impl().requires_grad; }

void Tensor::set_requires_grad(bool flag) {
  if (!is_leaf()) throw TensorError("set_requires_grad: only leaves can change requires_grad");
  impl().requires_grad = flag;
}

bool Tensor::is_leaf() const { return impl().node == nullptr; }
std::string Tensor::op_name() const { return impl().node ? impl().node->op : std::string(); }
bool Tensor::has_grad() const { return !impl().grad.empty(); }
std::span<const float> Tensor::grad() const { return impl().grad; }
void Tensor::zero_grad() { impl().grad.clear(); }

std::span<float> Tensor::grad_buffer() const {
  auto& im = impl();
  if (im.grad.empty()) im.grad.assign(im.data.size(), 0.0f);
  return im.grad;
}

void Tensor::accumulate_grad(std::span<const float> contribution) const {
  auto& im = impl();
  if (!im.requires_grad) return;
  if (contribution.size() != im.data.size()) {
    throw TensorError(fmt::format("accumulate_grad: {} values for tensor of shape {}",
                                  contribution.size(), shape_str(im.shape)));
  }
  auto g = grad_buffer();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += contribution[i];
}

Tensor Tensor::detach() const { return from_data(shape(), impl().data); }

Tensor Tensor::clone() const { return from_data(shape(), impl().data, is_leaf() && requires_grad()); }

namespace {

// Reverse topological order of graph nodes reachable from root (root first).
std::vector<detail::TensorImpl*> topo_order(detail::TensorImpl* root,
                                           const std::function<detail::TensorImpl*(const Tensor&)>& raw) {
  std::vector<detail::TensorImpl*> post;
  std::unordered_set<detail::TensorImpl*> seen;
  struct Frame {
    detail::TensorImpl* t;
    std::size_t next;
  };
  std::vector<Frame> stack{{root, 0}};
  seen.insert(root);
  while (!stack.empty()) {
    auto& top = stack.back();
    auto* node = top.t->node.get();
    if (node && top.next < node->parents.size()) {
      const Tensor& p = node->parents[top.next++];
      auto* pi = p.defined() ? raw(p) : nullptr;
      if (pi && pi->requires_grad && pi->node && !pi->node->freed && !seen.count(pi)) {
        seen.insert(pi);
        stack.push_back({pi, 0});
      }
      continue;
    }
    post.push_back(top.t);
    stack.pop_back();
  }
  std::reverse(post.begin(), post.end());
  return post;
}

}  // namespace

void Tensor::backward() const {
  auto& root = impl();
  if (root.data.size() != 1) {
    throw TensorError(fmt::format("backward: loss must have exactly one element, got shape {}",
                                  shape_str(root.shape)));
  }
  if (!root.requires_grad) throw TensorError("backward: loss does not require grad");
  if (!root.node) {
    grad_buffer()[0] += 1.0f;
    return;
  }
  if (root.node->freed) throw TensorError("backward: graph already freed by a previous backward");

  auto order = topo_order(impl_.get(), [](const Tensor& t) { return t.impl_.get(); });
  // Interior grads start from zero; leaves keep accumulating.
  for (auto* t : order) t->grad.assign(t->data.size(), 0.0f);
  root.grad[0] = 1.0f;

  for (auto* t : order) {
    auto& node = *t->node;
    // A freed interior node reached from a newer graph acts as a leaf.
    if (node.freed) continue;
    node.backward(t->grad, node.parents);
  }
  // Releasing parents can destroy tensors later in `order`; defer it.
  std::vector<std::pair<std::vector<Tensor>, BackwardFn>> released;
  released.reserve(order.size());
  for (auto* t : order) {
    t->node->freed = true;
    released.emplace_back(std::move(t->node->parents), std::move(t->node->backward));
    t->node->parents.clear();
    t->node->backward = nullptr;
  }
}

std::vector<std::string> graph_op_names(const Tensor& root) {
  std::vector<std::string> names;
  if (!root.defined() || !root.impl_->node) return names;
  auto order = topo_order(root.impl_.get(), [](const Tensor& t) { return t.impl_.get(); });
  names.reserve(order.size());
  for (auto* t : order) names.push_back(t->node->op);
  return names;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

void set_check_finite(bool enabled) { g_check_finite = enabled; }
bool check_finite_enabled() { return g_check_finite; }

}  // namespace diffaug
