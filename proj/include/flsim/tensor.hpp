#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace flsim {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  std::vector<float> data;
  std::vector<float> grad;  // empty until first written
  bool requires_grad = false;
  bool consumed = false;  // backward already ran through this node
  std::uint64_t id = 0;
  std::vector<std::shared_ptr<Node>> parents;
  // Propagates this node's grad into its parents' grads.
  std::function<void(Node&)> backward_fn;

  std::vector<float>& ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), 0.0f);
    return grad;
  }
};

}  // namespace detail

// Dense row-major float32 tensor with reverse-mode autodiff.
//
// A Tensor is a shared handle: copies alias the same storage and graph node.
// Use clone() for an independent copy. Graph edges are recorded only while
// grad mode is enabled and at least one input requires grad.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, float value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<float> values, bool requires_grad = false);
  static Tensor scalar(float value, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const;
  std::size_t dim(std::size_t axis) const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;

  std::span<const float> data() const;
  std::span<float> mutable_data();
  float item() const;
  float at(std::size_t flat_index) const { return data()[flat_index]; }

  bool requires_grad() const;
  void set_requires_grad(bool flag);

  // Zeros when no gradient has been written yet.
  std::span<const float> grad() const;
  std::span<float> mutable_grad();
  void zero_grad();

  std::uint64_t node_id() const;

  // Reverse-mode pass from this scalar. Leaf grads accumulate; interior
  // nodes are released afterwards, so a second call on the same graph throws.
  void backward();

  // Same values, no graph history, requires_grad false.
  Tensor detach() const;
  Tensor clone() const;

  // Used by op implementations.
  static Tensor make_result(Shape shape, std::vector<float> data,
                            std::vector<Tensor> inputs,
                            std::function<void(detail::Node&)> backward_fn);
  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;
};

bool grad_enabled();

// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

}  // namespace flsim
