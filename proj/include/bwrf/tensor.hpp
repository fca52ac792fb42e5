#ifndef BWRF_TENSOR_HPP
#define BWRF_TENSOR_HPP

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace bwrf {

using Shape = std::vector<std::int64_t>;

std::int64_t numel(const Shape &shape);
std::string to_string(const Shape &shape);

/// Raised when operand extents do not agree. The message names the dimension.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// One vertex of the reverse-mode graph.
///
/// A node with a `backward_fn` is an operation record: it reads its own
/// `grad` and accumulates contributions into the `grad` of each parent that
/// requires gradient. Leaves have no `backward_fn`.
struct Node {
  Shape shape;
  std::vector<float> data;
  std::vector<float> grad;  // empty until the first contribution arrives
  bool requires_grad = false;
  std::uint64_t id = 0;
  std::string op;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node &)> backward_fn;

  bool is_leaf() const { return !backward_fn; }
  /// Allocates a zero gradient buffer if none exists and returns it.
  std::vector<float> &grad_buffer();
};

/// Dense row-major float32 array with value-semantics handle over a shared
/// graph node. Copying a Tensor copies the handle, not the storage.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<float> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, float value, bool requires_grad = false);
  static Tensor scalar(float value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape &shape() const { return node_->shape; }
  std::int64_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t rank() const { return node_->shape.size(); }
  std::int64_t numel() const { return static_cast<std::int64_t>(node_->data.size()); }

  std::span<const float> data() const { return node_->data; }
  /// Direct write access; only meaningful on leaves (parameters, buffers).
  std::span<float> mutable_data() { return node_->data; }
  float item() const;
  float operator[](std::size_t i) const { return node_->data[i]; }

  /// Gradient accumulated by the last backward; all zeros if none arrived.
  std::vector<float> grad() const;
  bool has_grad() const { return !node_->grad.empty(); }
  void zero_grad() { node_->grad.clear(); }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor &set_requires_grad(bool flag);
  bool is_leaf() const { return node_->is_leaf(); }
  std::uint64_t id() const { return node_->id; }
  const std::string &op() const { return node_->op; }

  /// Deep copy into a fresh leaf that does not require grad.
  Tensor clone() const;

  const std::shared_ptr<Node> &node() const { return node_; }
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<Node> node_;
};

/// True unless a NoGradGuard is alive on this thread.
bool grad_enabled();

/// Disables graph recording for its lifetime (evaluation, frozen teachers).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard &) = delete;
  NoGradGuard &operator=(const NoGradGuard &) = delete;

 private:
  bool previous_;
};

/// Creates an operation result. The record is attached only when grad mode
/// is on and at least one parent requires grad; otherwise the result is a
/// plain leaf.
Tensor make_result(std::string op, Shape shape, std::vector<float> values,
                   std::vector<Tensor> parents, std::function<void(Node &)> backward_fn);

/// Reverse-mode sweep from a scalar loss. Every reachable node is visited
/// once in reverse topological order; contributions into shared nodes sum.
/// Throws std::invalid_argument on a non-scalar loss.
void backward(const Tensor &loss);

/// Same values, no history, never receives gradient.
Tensor detach(const Tensor &t);

/// Number of operation records reachable from `root` (including itself).
std::size_t graph_size(const Tensor &root);

}  // namespace bwrf

#endif  // BWRF_TENSOR_HPP
