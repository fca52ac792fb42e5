#ifndef BWRF_BWRF_HPP
#define BWRF_BWRF_HPP

// Block-wise replacement training.
//
// The low-precision backbone Q = {Q_1..Q_n} is trained next to its frozen
// full-precision counterpart F = {F_1..F_n}. For k = 1..n−1 the graft
// M^k = {Q_1..Q_k, F_{k+1}..F_n} is formed implicitly: the LP block output
// x_{Q_k} is fed straight into F_{k+1}, so the LP prefix is computed once and
// shared. Gradients of every graft reach θ_1..θ_k through the frozen FP
// suffix, and the backward sweep sums them with the backbone's own gradient
// at each shared node.

#include <cstdint>
#include <span>
#include <vector>

#include "bwrf/network.hpp"
#include "bwrf/tensor.hpp"

namespace bwrf {

struct GraftOutput {
  Tensor y_q;                         // LP logits
  std::vector<Tensor> y_m;            // y_{M^1}..y_{M^{n−1}}; undefined when a branch is pruned
  Tensor y_f;                         // FP logits, detached
  std::vector<Tensor> lp_features;    // x_{Q_1}..x_{Q_n}
  std::vector<std::uint64_t> graft_inputs;  // node id fed into each graft (0 when pruned)
};

/// Loss balance and ablation switches.
///
/// alpha[k−1] weights graft k in both the target and the distillation sums.
/// The toggles map onto the objective-ablation rows:
///   use_mp_targets  L_ce(y_{M^k}, y)
///   use_fp_kd       L_kd(y_Q, y_F)
///   use_mp_kd       L_kd(y_{M^k}, y_F)
///   use_avg_labels  every term whose teacher is an ensemble soft label
/// `branches` lists the grafts to build (1-based); empty means all of them.
struct LossWeights {
  std::vector<float> alpha;
  float temperature = 1.0f;
  bool use_mp_targets = true;
  bool use_fp_kd = true;
  bool use_mp_kd = true;
  bool use_avg_labels = true;
  std::vector<int> branches;

  float alpha_at(int k) const;
  bool branch_enabled(int k) const;
  /// True when some enabled term reads a graft output.
  bool needs_grafts() const;
  void validate(int n_blocks) const;

  /// Every auxiliary term switched off: plain QAT.
  static LossWeights baseline(int n_blocks);
};

/// Runs FP blocks k+1..n and the FP head on x_{Q_k} (= lp_features[k−1]).
/// The result stays connected to the LP prefix.
Tensor graft_forward(std::span<const Tensor> lp_features, BlockModel &fp, int k);

/// FP forward (detached), LP forward, and every enabled graft.
GraftOutput bwrf_forward(BlockModel &lp, BlockModel &fp, const Tensor &x, const LossWeights &w);

/// CE(y_Q, y) + Σ α_k CE(y_{M^k}, y)
Tensor loss_target(const Tensor &y_q, std::span<const Tensor> y_m, std::span<const int> labels,
                   const LossWeights &w);

/// (y_F + Σ_{j≤k} y_{M^j}) / (k+1) over detached logits; pruned branches are
/// left out of the average.
Tensor avg_soft_label(const Tensor &y_f, std::span<const Tensor> y_m, int k);

/// T² · KL(softmax(teacher/T) ‖ softmax(student/T)), averaged over the batch.
/// The teacher side never receives gradient.
Tensor kd_loss(const Tensor &student, const Tensor &teacher, float temperature);

/// L_kd(y_Q, y_F) + L_kd(y_Q, y^avg_{n−1})
///   + Σ α_k (L_kd(y_{M^k}, y_F) + L_kd(y_{M^k}, y^avg_{k−1}))
Tensor loss_distill(const GraftOutput &g, const LossWeights &w);

struct LossBreakdown {
  Tensor total;
  Tensor target;
  Tensor distill;
};

/// L = L_target + L_distill
LossBreakdown total_loss(const GraftOutput &g, std::span<const int> labels, const LossWeights &w);

class Sgd;

struct StepMetrics {
  double loss_total = 0.0;
  double loss_target = 0.0;
  double loss_distill = 0.0;
  std::size_t batch = 0;
  std::size_t correct_q = 0;
  std::size_t correct_f = 0;
  std::vector<std::size_t> correct_m;  // per graft; zero for pruned ones
};

/// One training iteration: forward all branches, composite loss, backward,
/// optimizer update of the LP parameters.
StepMetrics train_step(BlockModel &lp, BlockModel &fp, const Tensor &images, std::span<const int> labels,
                       const LossWeights &w, Sgd &optimizer);

/// Number of correct top-1 predictions in a batch of logits.
std::size_t count_correct(const Tensor &logits, std::span<const int> labels);

}  // namespace bwrf

#endif  // BWRF_BWRF_HPP
