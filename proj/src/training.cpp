#include "bwrf/training.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>
#include <string>

#include "bwrf/bwrf.hpp"

namespace bwrf {

Sgd::Sgd(std::vector<StateEntry> params, SgdConfig config) : params_(std::move(params)), config_(config) {
  if (!(config_.lr > 0.0f)) throw std::invalid_argument("sgd: lr must be positive");
  buffers_.reserve(params_.size());
  for (const auto &p : params_) buffers_.emplace_back(p.tensor.data().size(), 0.0f);
}

void Sgd::set_lr(float lr) {
  if (!(lr > 0.0f)) throw std::invalid_argument("sgd: lr must be positive");
  config_.lr = lr;
}

void Sgd::zero_grad() {
  for (auto &p : params_) p.tensor.zero_grad();
}

void Sgd::step() {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto &p = params_[i];
    if (!p.tensor.has_grad()) continue;
    const auto &grad = p.tensor.node()->grad;
    auto values = p.tensor.mutable_data();
    if (grad.size() != values.size()) throw ShapeError("sgd: gradient shape mismatch for '" + p.name + "'");
    const bool decay = p.kind == ParamKind::weight || p.kind == ParamKind::bias;
    const float wd = decay ? config_.weight_decay : 0.0f;
    const float lr = p.kind == ParamKind::scale ? config_.lr * config_.scale_lr_multiplier : config_.lr;
    auto &buf = buffers_[i];
    for (std::size_t j = 0; j < values.size(); ++j) {
      buf[j] = config_.momentum * buf[j] + (grad[j] + wd * values[j]);
      values[j] -= lr * buf[j];
    }
    if (p.kind == ParamKind::scale)
      for (auto &v : values) v = std::max(v, kMinScale);
  }
  ++steps_;
}

void Schedule::validate() const {
  if (epochs < 1) throw std::invalid_argument("schedule: epochs must be >= 1");
  for (std::size_t i = 0; i < milestones.size(); ++i) {
    if (i > 0 && milestones[i] <= milestones[i - 1])
      throw std::invalid_argument("schedule: milestones must be strictly increasing");
    if (milestones[i] < 0) throw std::invalid_argument("schedule: negative milestone");
  }
}

float lr_at(int epoch, const Schedule &schedule, float base_lr) {
  if (epoch < 0) throw std::invalid_argument("lr_at: negative epoch");
  float lr = base_lr;
  for (int m : schedule.milestones)
    if (epoch >= m) lr *= schedule.gamma;
  return lr;
}

void count_topk(const Tensor &logits, std::span<const int> labels, std::size_t &top1, std::size_t &top5) {
  const auto rows = logits.dim(0), cols = logits.dim(1);
  const std::int64_t k = std::min<std::int64_t>(5, cols);
  std::vector<int> order(static_cast<std::size_t>(cols));
  for (std::int64_t r = 0; r < rows; ++r) {
    auto row = logits.data().subspan(static_cast<std::size_t>(r * cols), static_cast<std::size_t>(cols));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return row[a] > row[b]; });
    const int label = labels[static_cast<std::size_t>(r)];
    if (order[0] == label) ++top1;
    if (std::find(order.begin(), order.begin() + k, label) != order.begin() + k) ++top5;
  }
}

Accuracy evaluate(const LogitsFn &predict, const Dataset &data, std::size_t batch_size) {
  if (data.size() == 0) throw std::invalid_argument("evaluate: empty dataset");
  NoGradGuard no_grad;
  std::size_t top1 = 0, top5 = 0;
  std::vector<std::size_t> indices(batch_size);
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    const std::size_t count = std::min(batch_size, data.size() - start);
    indices.resize(count);
    std::iota(indices.begin(), indices.end(), start);
    Batch batch = make_batch(data, indices);
    count_topk(predict(batch.images), batch.labels, top1, top5);
  }
  Accuracy acc;
  acc.samples = data.size();
  acc.top1 = 100.0 * static_cast<double>(top1) / static_cast<double>(data.size());
  acc.top5 = 100.0 * static_cast<double>(top5) / static_cast<double>(data.size());
  return acc;
}

namespace {

struct EvalModeScope {
  BlockModel &model;
  NormMode previous;
  explicit EvalModeScope(BlockModel &m) : model(m), previous(m.mode()) { model.set_mode(NormMode::eval); }
  ~EvalModeScope() { model.set_mode(previous); }
};

}  // namespace

Accuracy evaluate(BlockModel &model, const Dataset &data, std::size_t batch_size) {
  EvalModeScope scope(model);
  return evaluate([&](const Tensor &x) { return forward(model, x); }, data, batch_size);
}

Accuracy evaluate_graft(BlockModel &lp, BlockModel &fp, int k, const Dataset &data, std::size_t batch_size) {
  EvalModeScope lp_scope(lp), fp_scope(fp);
  return evaluate(
      [&](const Tensor &x) {
        auto collected = forward_collect(lp, x);
        return graft_forward(collected.features, fp, k);
      },
      data, batch_size);
}

}  // namespace bwrf
