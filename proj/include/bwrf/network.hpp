#ifndef BWRF_NETWORK_HPP
#define BWRF_NETWORK_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "bwrf/ops.hpp"
#include "bwrf/quantizer.hpp"
#include "bwrf/tensor.hpp"

namespace bwrf {

/// Topology of a CIFAR-style residual network split into resolution-aligned
/// blocks. Block i is the i-th resolution stage; the stem conv runs before
/// block 1 and the classifier head after block n.
struct BlockSpec {
  int depth = 20;        // 6·units_per_stage + 2
  int base_width = 16;   // stage widths are base, 2·base, 4·base
  int in_channels = 3;
  int classes = 10;

  int n_blocks() const { return 3; }
  int units_per_stage() const { return (depth - 2) / 6; }
  int width(int block) const { return base_width << block; }
  int stride(int block) const { return block == 0 ? 1 : 2; }

  /// Canonical text form, e.g. "resnet20-w16-c3-k10".
  std::string name() const;
  /// Accepts the canonical form or a bare "resnetD".
  static BlockSpec parse(const std::string &text);
  void validate() const;

  bool operator==(const BlockSpec &) const = default;
};

enum class Precision { full, low };

enum class ParamKind { weight, bias, bn_affine, scale, buffer };

struct StateEntry {
  std::string name;
  Tensor tensor;
  ParamKind kind;
};

struct ConvLayer {
  Tensor weight;
  std::int64_t stride = 1;
  std::int64_t padding = 0;
  std::optional<Quantizer> wq;
  std::optional<Quantizer> aq;

  Tensor forward(const Tensor &x);
};

struct BatchNormLayer {
  Tensor gamma;
  Tensor beta;
  BatchNormStats stats;

  Tensor forward(const Tensor &x, NormMode mode);
};

struct LinearLayer {
  Tensor weight;
  Tensor bias;
  std::optional<Quantizer> wq;
  std::optional<Quantizer> aq;

  Tensor forward(const Tensor &x);
};

struct ResidualUnit {
  ConvLayer conv1;
  BatchNormLayer bn1;
  ConvLayer conv2;
  BatchNormLayer bn2;
  std::optional<ConvLayer> down_conv;
  std::optional<BatchNormLayer> down_bn;

  Tensor forward(const Tensor &x, NormMode mode);
};

struct Block {
  std::vector<ResidualUnit> units;
};

/// Block-partitioned residual network, either the frozen full-precision
/// counterpart or the trainable low-precision backbone.
///
/// Models own graph leaves; copying would alias them, so only moves and
/// explicit clone() are allowed.
class BlockModel {
 public:
  BlockModel(BlockSpec spec, Precision precision, int bits);
  BlockModel(BlockModel &&) = default;
  BlockModel &operator=(BlockModel &&) = default;
  BlockModel(const BlockModel &) = delete;
  BlockModel &operator=(const BlockModel &) = delete;

  const BlockSpec &spec() const { return spec_; }
  Precision precision() const { return precision_; }
  int bits() const { return bits_; }
  int n_blocks() const { return static_cast<int>(blocks_.size()); }

  NormMode mode() const { return mode_; }
  void set_mode(NormMode mode) { mode_ = mode; }

  bool frozen() const { return frozen_; }
  /// Frozen models expose no trainable parameters and never accumulate grad.
  void set_frozen(bool frozen);

  Tensor run_stem(const Tensor &x);
  /// Runs block `index` (1-based, as in x_i = block_i(x_{i-1})).
  Tensor run_block(int index, const Tensor &x);
  /// Global average pool followed by the classifier.
  Tensor run_head(const Tensor &features);

  /// Number of run_block calls since construction or the last reset.
  std::uint64_t block_calls() const { return block_calls_; }
  void reset_block_calls() { block_calls_ = 0; }

  std::vector<Quantizer *> quantizers();
  void set_quantizers_enabled(bool enabled);

  /// Every persistent tensor under its stable name. Tensors are live
  /// handles except quantizer calibration flags, which are snapshots.
  std::vector<StateEntry> export_state();
  /// Copies values from `entries`; names and shapes must match exactly.
  void import_state(const std::vector<StateEntry> &entries);
  /// Trainable tensors (empty when frozen).
  std::vector<StateEntry> parameters();
  void zero_grad();

  BlockModel clone();

  ConvLayer &stem_conv() { return stem_conv_; }
  BatchNormLayer &stem_bn() { return stem_bn_; }
  Block &block(int index) { return blocks_.at(static_cast<std::size_t>(index - 1)); }
  std::vector<Block> &blocks() { return blocks_; }
  LinearLayer &head() { return head_; }

  struct LayerRefs {
    std::vector<std::pair<std::string, ConvLayer *>> convs;
    std::vector<std::pair<std::string, BatchNormLayer *>> norms;
  };
  LayerRefs layers();
  std::vector<std::pair<std::string, Quantizer *>> named_quantizers();

 private:

  BlockSpec spec_;
  Precision precision_;
  int bits_;
  NormMode mode_ = NormMode::train;
  bool frozen_ = false;
  std::uint64_t block_calls_ = 0;
  ConvLayer stem_conv_;
  BatchNormLayer stem_bn_;
  std::vector<Block> blocks_;
  LinearLayer head_;
};

/// Builds a model with seeded Kaiming-normal conv weights.
///
/// full precision: no quantizers, every parameter frozen, BN in eval mode.
/// low precision:  weight and activation quantizers on every conv/linear;
///                 stem and head at 8 bits, body at `bits`; `bits == 32`
///                 attaches no quantizers.
BlockModel build_model(const BlockSpec &spec, Precision precision, int bits, std::uint64_t seed = 0);

/// Copies FP weights into the LP model and sets weight-quantizer scales from
/// the copied weights; activation quantizers calibrate on their first input.
void init_lp_from_fp(BlockModel &lp, BlockModel &fp);

struct Collected {
  std::vector<Tensor> features;  // x_1 .. x_n
  Tensor logits;
};

/// Runs stem, all blocks and the head, keeping every block output.
Collected forward_collect(BlockModel &model, const Tensor &x);

/// Logits only.
Tensor forward(BlockModel &model, const Tensor &x);

bool supported_bits(int bits);

}  // namespace bwrf

#endif  // BWRF_NETWORK_HPP
