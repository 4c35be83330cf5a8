#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "mixformer/tensor.hpp"

namespace mixformer {

struct Node;
using NodePtr = std::shared_ptr<Node>;

// One vertex of the reverse-mode graph. backward reads this node's grad and
// accumulates into the inputs' grads.
struct Node {
  Tensor value;
  Tensor grad;  // undefined until the first accumulation
  bool requires_grad = false;
  bool leaf = false;
  std::vector<NodePtr> inputs;
  std::function<void(Node&)> backward;

  void accumulate(Tensor g);
};

// Handle to a graph node. Cheap to copy; holding a Var keeps the subgraph
// that produced it alive.
class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  const Tensor& grad() const;
  bool has_grad() const { return node_ && node_->grad.defined(); }
  void zero_grad();

  Node* node() const { return node_.get(); }
  const NodePtr& node_ptr() const { return node_; }

  static Var from_node(NodePtr node);

 private:
  NodePtr node_;
};

// A named leaf with requires_grad set; gradients accumulate across backward
// calls until zero_grad.
struct Parameter {
  std::string name;
  Var var;

  Parameter() = default;
  Parameter(std::string name, Tensor value);

  const Tensor& value() const { return var.value(); }
  Tensor& value_mut();
  const Tensor& grad() const { return var.grad(); }
  bool has_grad() const { return var.has_grad(); }
  void zero_grad() { var.zero_grad(); }
  int64_t numel() const { return var.value().numel(); }
};

enum class EwOp { Add, Sub, Mul };

// Elementwise core; b may broadcast to a (right-aligned, every trailing dim
// of b equal to a's or 1).
Var tensor_elementwise(EwOp op, const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var neg(const Var& a);
Var scale(const Var& a, double s);

// Batched matrix product (...,M,K) x (...,K,P) -> (...,M,P); batch dims
// broadcast against each other.
Var matmul(const Var& a, const Var& b);

Var reshape(const Var& a, Shape shape, Layout layout = Layout::Flat);
Var permute(const Var& a, std::vector<int> perm);
Var narrow(const Var& a, int axis, int64_t start, int64_t length);
Var concat(std::span<const Var> parts, int axis);

Var softmax(const Var& a, int axis);
Var gelu(const Var& a);
Var sigmoid(const Var& a);

Var sum_all(const Var& a);
Var mean_all(const Var& a);
Var mean_axis(const Var& a, int axis);

// Populates gradients of every reachable Parameter / marked input.
// root must be a scalar (numel == 1).
void backward(const Var& root);

// Plain-tensor helpers shared by forward/backward kernels.
namespace detail {
Shape broadcast_check(const Shape& a, const Shape& b);  // returns a, throws if incompatible
Tensor broadcast_to(const Tensor& t, const Shape& shape);
Tensor reduce_to_shape(const Tensor& g, const Shape& shape);
Tensor permute_tensor(const Tensor& t, const std::vector<int>& perm);
// C (MxP) += or = A (MxK) . B (KxP); trans flags read A as KxM / B as PxK.
void gemm(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t p,
          bool trans_a, bool trans_b, bool accumulate);
}  // namespace detail

}  // namespace mixformer
