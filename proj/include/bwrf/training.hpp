#ifndef BWRF_TRAINING_HPP
#define BWRF_TRAINING_HPP

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "bwrf/data.hpp"
#include "bwrf/network.hpp"

namespace bwrf {

struct SgdConfig {
  float lr = 4e-2f;
  float momentum = 0.9f;
  float weight_decay = 1e-4f;
  /// Quantizer scales step with lr · scale_lr_multiplier.
  float scale_lr_multiplier = 1.0f;
};

/// SGD with heavy-ball momentum:
///   buf ← m·buf + (grad + wd·param),  param ← param − lr·buf
/// Weight decay applies to conv/linear weights and biases only; quantizer
/// scales are clamped back to a positive floor after every step.
class Sgd {
 public:
  Sgd(std::vector<StateEntry> params, SgdConfig config);

  void step();
  void zero_grad();

  float lr() const { return config_.lr; }
  void set_lr(float lr);
  const SgdConfig &config() const { return config_; }
  std::uint64_t steps() const { return steps_; }
  std::span<const float> momentum_buffer(std::size_t index) const { return buffers_.at(index); }
  std::size_t size() const { return params_.size(); }

 private:
  std::vector<StateEntry> params_;
  std::vector<std::vector<float>> buffers_;
  SgdConfig config_;
  std::uint64_t steps_ = 0;
};

/// Multistep decay: lr is multiplied by `gamma` at each milestone epoch.
struct Schedule {
  std::vector<int> milestones;
  float gamma = 0.1f;
  int epochs = 1;

  void validate() const;
};

/// base_lr · gamma^(number of milestones m with epoch ≥ m)
float lr_at(int epoch, const Schedule &schedule, float base_lr);

struct Accuracy {
  double top1 = 0.0;  // percent
  double top5 = 0.0;  // percent
  std::size_t samples = 0;
};

/// Maps a batch of images to logits.
using LogitsFn = std::function<Tensor(const Tensor &)>;

/// Deterministic top-1/top-5 over the whole split, no augmentation, no graph.
Accuracy evaluate(const LogitsFn &predict, const Dataset &data, std::size_t batch_size = 200);
/// Evaluates a model with BN in eval mode; the previous mode is restored.
Accuracy evaluate(BlockModel &model, const Dataset &data, std::size_t batch_size = 200);
/// Evaluates graft M^k = {Q_1..Q_k, F_{k+1}..F_n}.
Accuracy evaluate_graft(BlockModel &lp, BlockModel &fp, int k, const Dataset &data, std::size_t batch_size = 200);

/// Top-k hit counts of one batch.
void count_topk(const Tensor &logits, std::span<const int> labels, std::size_t &top1, std::size_t &top5);

}  // namespace bwrf

#endif  // BWRF_TRAINING_HPP
