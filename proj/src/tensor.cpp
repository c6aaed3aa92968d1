#include "flsim/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <sstream>
#include <unordered_set>

#include "flsim/error.hpp"

namespace flsim {
namespace {

std::atomic<std::uint64_t> g_next_id{1};
thread_local bool t_grad_enabled = true;

std::shared_ptr<detail::Node> new_node(Shape shape, std::vector<float> data) {
  if (numel(shape) != data.size()) {
    throw ShapeError("tensor", "shape " + shape_str(shape) + " holds " +
                                   std::to_string(numel(shape)) + " elements, got " +
                                   std::to_string(data.size()));
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
  return node;
}

}  // namespace

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  if (shape.size() == 1) os << ',';
  os << ')';
  return os.str();
}

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0f, requires_grad);
}

Tensor Tensor::full(Shape shape, float value, bool requires_grad) {
  const auto n = flsim::numel(shape);
  return from(std::move(shape), std::vector<float>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<float> values, bool requires_grad) {
  for (auto d : shape) {
    if (d == 0) throw ShapeError("tensor", "zero extent in shape " + shape_str(shape));
  }
  Tensor t(new_node(std::move(shape), std::move(values)));
  t.node_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::scalar(float value, bool requires_grad) {
  return from({}, {value}, requires_grad);
}

const Shape& Tensor::shape() const { return node_->shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= node_->shape.size()) {
    throw ShapeError("tensor", "axis " + std::to_string(axis) + " out of range for " +
                                   shape_str(node_->shape));
  }
  return node_->shape[axis];
}

std::size_t Tensor::numel() const { return node_->data.size(); }

std::span<const float> Tensor::data() const { return node_->data; }
std::span<float> Tensor::mutable_data() { return node_->data; }

float Tensor::item() const {
  if (node_->data.size() != 1) {
    throw ShapeError("item", "expected one element, shape " + shape_str(node_->shape));
  }
  return node_->data[0];
}

bool Tensor::requires_grad() const { return node_->requires_grad; }
void Tensor::set_requires_grad(bool flag) { node_->requires_grad = flag; }

std::span<const float> Tensor::grad() const { return node_->ensure_grad(); }
std::span<float> Tensor::mutable_grad() { return node_->ensure_grad(); }

void Tensor::zero_grad() {
  if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0f);
}

std::uint64_t Tensor::node_id() const { return node_->id; }

Tensor Tensor::detach() const {
  return Tensor(new_node(node_->shape, node_->data));
}

Tensor Tensor::clone() const {
  Tensor t = detach();
  t.node_->requires_grad = node_->requires_grad;
  return t;
}

Tensor Tensor::make_result(Shape shape, std::vector<float> data, std::vector<Tensor> inputs,
                           std::function<void(detail::Node&)> backward_fn) {
  Tensor out(new_node(std::move(shape), std::move(data)));
  if (!t_grad_enabled) return out;
  const bool any = std::any_of(inputs.begin(), inputs.end(),
                               [](const Tensor& t) { return t.requires_grad(); });
  if (!any) return out;
  out.node_->requires_grad = true;
  out.node_->parents.reserve(inputs.size());
  for (auto& in : inputs) out.node_->parents.push_back(in.node_);
  out.node_->backward_fn = std::move(backward_fn);
  return out;
}

void Tensor::backward() {
  if (node_->data.size() != 1 || !node_->shape.empty()) {
    throw InvalidArgument("backward", "loss must be a scalar, got shape " +
                                          shape_str(node_->shape));
  }
  if (node_->consumed) {
    throw InvalidArgument("backward", "graph already consumed; re-run forward first");
  }
  if (!node_->requires_grad) return;

  // Node ids grow monotonically, so descending id is a reverse topological order.
  // Holding shared_ptrs keeps interior nodes alive while edges are released.
  std::vector<std::shared_ptr<detail::Node>> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::shared_ptr<detail::Node>> stack{node_};
  while (!stack.empty()) {
    auto n = std::move(stack.back());
    stack.pop_back();
    if (!seen.insert(n.get()).second) continue;
    for (auto& p : n->parents) {
      if (p->requires_grad) stack.push_back(p);
    }
    order.push_back(std::move(n));
  }
  std::sort(order.begin(), order.end(),
            [](const auto& a, const auto& b) { return a->id > b->id; });

  node_->ensure_grad()[0] += 1.0f;
  for (auto& n : order) {
    if (!n->backward_fn) continue;
    for (auto& p : n->parents) {
      if (p->requires_grad) p->ensure_grad();
    }
    n->backward_fn(*n);
  }
  for (auto& n : order) {
    if (!n->backward_fn) continue;
    n->backward_fn = nullptr;
    n->parents.clear();
    n->grad.clear();
    n->grad.shrink_to_fit();
    n->consumed = true;
  }
  node_->consumed = true;
}

}  // namespace flsim
