#include "bwrf/bwrf.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "bwrf/kernels.hpp"
#include "bwrf/ops.hpp"
#include "bwrf/training.hpp"

namespace bwrf {

float LossWeights::alpha_at(int k) const {
  if (alpha.empty()) return 1.0f;
  if (alpha.size() == 1) return alpha.front();
  return alpha.at(static_cast<std::size_t>(k - 1));
}

bool LossWeights::branch_enabled(int k) const {
  return branches.empty() || std::find(branches.begin(), branches.end(), k) != branches.end();
}

bool LossWeights::needs_grafts() const { return use_mp_targets || use_mp_kd || use_avg_labels; }

void LossWeights::validate(int n_blocks) const {
  if (!(temperature > 0.0f)) throw std::invalid_argument("temperature must be positive");
  if (alpha.size() > 1 && static_cast<int>(alpha.size()) != n_blocks - 1)
    throw std::invalid_argument("alpha needs one value or " + std::to_string(n_blocks - 1) + " values, got " +
                                std::to_string(alpha.size()));
  for (float a : alpha)
    if (!(a >= 0.0f)) throw std::invalid_argument("alpha values must be non-negative");
  for (int k : branches)
    if (k < 1 || k >= n_blocks)
      throw std::invalid_argument("graft branch " + std::to_string(k) + " outside [1, " + std::to_string(n_blocks - 1) +
                                  "]");
}

LossWeights LossWeights::baseline(int n_blocks) {
  LossWeights w;
  w.alpha.assign(static_cast<std::size_t>(std::max(n_blocks - 1, 0)), 1.0f);
  w.use_mp_targets = w.use_fp_kd = w.use_mp_kd = w.use_avg_labels = false;
  return w;
}

Tensor graft_forward(std::span<const Tensor> lp_features, BlockModel &fp, int k) {
  const int n = fp.n_blocks();
  if (k < 1 || k > n - 1)
    throw std::out_of_range("graft_forward: k = " + std::to_string(k) + " outside [1, " + std::to_string(n - 1) + "]");
  if (static_cast<int>(lp_features.size()) < k)
    throw std::invalid_argument("graft_forward: only " + std::to_string(lp_features.size()) + " LP features given");
  if (fp.mode() != NormMode::eval) throw std::logic_error("graft_forward: FP model must run BN in eval mode");
  Tensor h = lp_features[static_cast<std::size_t>(k - 1)];
  for (int i = k + 1; i <= n; ++i) h = fp.run_block(i, h);
  return fp.run_head(h);
}

GraftOutput bwrf_forward(BlockModel &lp, BlockModel &fp, const Tensor &x, const LossWeights &w) {
  const int n = lp.n_blocks();
  GraftOutput g;
  {
    NoGradGuard no_grad;
    g.y_f = detach(forward(fp, x));
  }
  auto collected = forward_collect(lp, x);
  g.y_q = collected.logits;
  g.lp_features = std::move(collected.features);
  g.y_m.resize(static_cast<std::size_t>(n - 1));
  g.graft_inputs.assign(static_cast<std::size_t>(n - 1), 0);
  if (!w.needs_grafts()) return g;
  for (int k = 1; k < n; ++k) {
    if (!w.branch_enabled(k)) continue;
    g.graft_inputs[k - 1] = g.lp_features[k - 1].id();
    g.y_m[k - 1] = graft_forward(g.lp_features, fp, k);
  }
  return g;
}

namespace {

void accumulate(Tensor &acc, const Tensor &term) { acc = acc.defined() ? add(acc, term) : term; }

Tensor or_zero(const Tensor &t) { return t.defined() ? t : Tensor::scalar(0.0f); }

}  // namespace

Tensor loss_target(const Tensor &y_q, std::span<const Tensor> y_m, std::span<const int> labels,
                   const LossWeights &w) {
  Tensor loss = cross_entropy(y_q, labels);
  if (!w.use_mp_targets) return loss;
  for (std::size_t i = 0; i < y_m.size(); ++i) {
    const int k = static_cast<int>(i) + 1;
    if (!y_m[i].defined() || !w.branch_enabled(k)) continue;
    if (y_m[i].shape() != y_q.shape())
      throw ShapeError("loss_target: graft " + std::to_string(k) + " logits " + to_string(y_m[i].shape()) +
                       " vs " + to_string(y_q.shape()));
    const float a = w.alpha_at(k);
    if (a == 0.0f) continue;
    accumulate(loss, scale(cross_entropy(y_m[i], labels), a));
  }
  return loss;
}

Tensor avg_soft_label(const Tensor &y_f, std::span<const Tensor> y_m, int k) {
  if (k < 0 || k > static_cast<int>(y_m.size()))
    throw std::out_of_range("avg_soft_label: k = " + std::to_string(k) + " but only " + std::to_string(y_m.size()) +
                            " graft outputs exist");
  std::vector<double> acc(y_f.data().begin(), y_f.data().end());
  int members = 1;
  for (int j = 1; j <= k; ++j) {
    const Tensor &t = y_m[static_cast<std::size_t>(j - 1)];
    if (!t.defined()) continue;
    if (t.shape() != y_f.shape()) throw ShapeError("avg_soft_label: logits shape mismatch");
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += t[i];
    ++members;
  }
  std::vector<float> out(acc.size());
  for (std::size_t i = 0; i < acc.size(); ++i) out[i] = static_cast<float>(acc[i] / members);
  return Tensor(y_f.shape(), std::move(out), false);
}

Tensor kd_loss(const Tensor &student, const Tensor &teacher, float temperature) {
  if (!(temperature > 0.0f)) throw std::invalid_argument("kd_loss: temperature must be positive");
  if (student.shape() != teacher.shape() || student.rank() != 2)
    throw ShapeError("kd_loss: student " + to_string(student.shape()) + " vs teacher " + to_string(teacher.shape()));
  const auto rows = teacher.dim(0), cols = teacher.dim(1);

  std::vector<float> scaled(teacher.data().begin(), teacher.data().end());
  for (auto &v : scaled) v *= 1.0f / temperature;
  std::vector<float> log_p(scaled.size()), p(scaled.size());
  kernels::log_softmax_forward<float>(scaled, rows, cols, log_p);
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = std::exp(log_p[i]);

  // Σ p·log p, accumulated exactly as the graph's sum(mul(p, log q)) below,
  // so identical student and teacher cancel to exactly zero.
  double entropy = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) entropy += static_cast<float>(p[i] * log_p[i]);

  const Tensor probs(teacher.shape(), std::move(p), false);
  const Tensor log_q = log_softmax(scale(student, 1.0f / temperature));
  const Tensor kl_sum = add_scalar(scale(sum(mul(probs, log_q)), -1.0f), static_cast<float>(entropy));
  return scale(kl_sum, temperature * temperature / static_cast<float>(rows));
}

Tensor loss_distill(const GraftOutput &g, const LossWeights &w) {
  const float t = w.temperature;
  const int n_grafts = static_cast<int>(g.y_m.size());
  Tensor loss;
  if (w.use_fp_kd) accumulate(loss, kd_loss(g.y_q, g.y_f, t));
  if (w.use_avg_labels) accumulate(loss, kd_loss(g.y_q, avg_soft_label(g.y_f, g.y_m, n_grafts), t));
  for (int k = 1; k <= n_grafts; ++k) {
    const Tensor &y_mk = g.y_m[static_cast<std::size_t>(k - 1)];
    if (!y_mk.defined() || !w.branch_enabled(k)) continue;
    const float a = w.alpha_at(k);
    if (a == 0.0f) continue;
    Tensor inner;
    if (w.use_mp_kd) accumulate(inner, kd_loss(y_mk, g.y_f, t));
    if (w.use_avg_labels) accumulate(inner, kd_loss(y_mk, avg_soft_label(g.y_f, g.y_m, k - 1), t));
    if (inner.defined()) accumulate(loss, scale(inner, a));
  }
  return or_zero(loss);
}

LossBreakdown total_loss(const GraftOutput &g, std::span<const int> labels, const LossWeights &w) {
  LossBreakdown out;
  out.target = loss_target(g.y_q, g.y_m, labels, w);
  out.distill = loss_distill(g, w);
  out.total = add(out.target, out.distill);
  return out;
}

std::size_t count_correct(const Tensor &logits, std::span<const int> labels) {
  const auto rows = logits.dim(0), cols = logits.dim(1);
  std::size_t correct = 0;
  for (std::int64_t r = 0; r < rows; ++r) {
    auto row = logits.data().subspan(static_cast<std::size_t>(r * cols), static_cast<std::size_t>(cols));
    const auto best = std::max_element(row.begin(), row.end()) - row.begin();
    if (best == labels[static_cast<std::size_t>(r)]) ++correct;
  }
  return correct;
}

StepMetrics train_step(BlockModel &lp, BlockModel &fp, const Tensor &images, std::span<const int> labels,
                       const LossWeights &w, Sgd &optimizer) {
  if (labels.empty()) throw std::invalid_argument("train_step: empty batch");
  lp.zero_grad();
  GraftOutput g = bwrf_forward(lp, fp, images, w);
  LossBreakdown loss = total_loss(g, labels, w);
  backward(loss.total);
  optimizer.step();

  StepMetrics m;
  m.batch = labels.size();
  m.loss_total = loss.total.item();
  m.loss_target = loss.target.item();
  m.loss_distill = loss.distill.item();
  m.correct_q = count_correct(g.y_q, labels);
  m.correct_f = count_correct(g.y_f, labels);
  for (const auto &y : g.y_m) m.correct_m.push_back(y.defined() ? count_correct(y, labels) : 0);
  return m;
}

}  // namespace bwrf
