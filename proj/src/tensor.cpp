#include "bwrf/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace bwrf {

namespace {

std::atomic<std::uint64_t> next_node_id{1};
thread_local bool grad_mode = true;

std::shared_ptr<Node> new_node(Shape shape, std::vector<float> values) {
  if (numel(shape) != static_cast<std::int64_t>(values.size()))
    throw ShapeError("tensor: shape " + to_string(shape) + " holds " +
                     std::to_string(numel(shape)) + " elements but " +
                     std::to_string(values.size()) + " values were given");
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(values);
  node->id = next_node_id.fetch_add(1, std::memory_order_relaxed);
  return node;
}

}  // namespace

std::int64_t numel(const Shape &shape) {
  std::int64_t n = 1;
  for (auto e : shape) {
    if (e < 0) throw ShapeError("negative extent in shape " + to_string(shape));
    n *= e;
  }
  return n;
}

std::string to_string(const Shape &shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

std::vector<float> &Node::grad_buffer() {
  if (grad.empty()) grad.assign(data.size(), 0.0f);
  return grad;
}

Tensor::Tensor(Shape shape, std::vector<float> values, bool requires_grad)
    : node_(new_node(std::move(shape), std::move(values))) {
  node_->requires_grad = requires_grad;
  node_->op = "leaf";
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0f, requires_grad); }

Tensor Tensor::full(Shape shape, float value, bool requires_grad) {
  auto n = static_cast<std::size_t>(bwrf::numel(shape));
  return Tensor(std::move(shape), std::vector<float>(n, value), requires_grad);
}

Tensor Tensor::scalar(float value, bool requires_grad) { return Tensor({1}, {value}, requires_grad); }

float Tensor::item() const {
  if (node_->data.size() != 1)
    throw ShapeError("item() on tensor of shape " + to_string(node_->shape));
  return node_->data[0];
}

std::vector<float> Tensor::grad() const {
  if (node_->grad.empty()) return std::vector<float>(node_->data.size(), 0.0f);
  return node_->grad;
}

Tensor &Tensor::set_requires_grad(bool flag) {
  node_->requires_grad = flag;
  if (!flag) node_->grad.clear();
  return *this;
}

Tensor Tensor::clone() const { return Tensor(node_->shape, node_->data, false); }

bool grad_enabled() { return grad_mode; }

NoGradGuard::NoGradGuard() : previous_(grad_mode) { grad_mode = false; }
NoGradGuard::~NoGradGuard() { grad_mode = previous_; }

Tensor make_result(std::string op, Shape shape, std::vector<float> values,
                   std::vector<Tensor> parents, std::function<void(Node &)> backward_fn) {
  auto node = new_node(std::move(shape), std::move(values));
  node->op = std::move(op);
  bool track = grad_mode && std::any_of(parents.begin(), parents.end(), [](const Tensor &p) {
                 return p.defined() && p.requires_grad();
               });
  if (track) {
    node->requires_grad = true;
    for (auto &p : parents) node->parents.push_back(p.node());
    node->backward_fn = std::move(backward_fn);
  }
  return Tensor(std::move(node));
}

namespace {

// Post-order DFS over nodes that require grad; iterative to survive deep graphs.
std::vector<Node *> topological_order(Node *root) {
  std::vector<Node *> order;
  std::unordered_set<Node *> visited;
  std::vector<std::pair<Node *, std::size_t>> stack;
  stack.emplace_back(root, 0);
  visited.insert(root);
  while (!stack.empty()) {
    auto &[node, next] = stack.back();
    if (next < node->parents.size()) {
      Node *parent = node->parents[next++].get();
      if (parent && parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}

}  // namespace

void backward(const Tensor &loss) {
  if (!loss.defined() || loss.numel() != 1)
    throw std::invalid_argument("backward: loss must be a scalar, got shape " +
                                (loss.defined() ? to_string(loss.shape()) : std::string("<undefined>")));
  Node *root = loss.node().get();
  if (!root->requires_grad) return;
  auto order = topological_order(root);
  for (Node *n : order)
    if (!n->is_leaf()) n->grad.clear();
  root->grad_buffer()[0] += 1.0f;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node *n = *it;
    if (n->is_leaf() || n->grad.empty()) continue;
    n->backward_fn(*n);
  }
}

Tensor detach(const Tensor &t) {
  Tensor out(t.shape(), std::vector<float>(t.data().begin(), t.data().end()), false);
  out.node()->op = "detach";
  return out;
}

std::size_t graph_size(const Tensor &root) {
  if (!root.defined() || !root.requires_grad()) return 0;
  auto order = topological_order(root.node().get());
  return static_cast<std::size_t>(std::count_if(order.begin(), order.end(), [](Node *n) { return !n->is_leaf(); }));
}

}  // namespace bwrf
