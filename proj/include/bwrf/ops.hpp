#ifndef BWRF_OPS_HPP
#define BWRF_OPS_HPP

#include <cstdint>
#include <span>
#include <vector>

#include "bwrf/tensor.hpp"

namespace bwrf {

/// NCHW cross-correlation with an OIkk kernel. `bias` may be undefined.
Tensor conv2d(const Tensor &input, const Tensor &weight, const Tensor &bias, std::int64_t stride,
              std::int64_t padding);

/// input(N×D) · weight(C×D)ᵀ + bias(C). `bias` may be undefined.
Tensor linear(const Tensor &input, const Tensor &weight, const Tensor &bias);

/// Running statistics owned by a batch-norm layer. Never quantized.
struct BatchNormStats {
  Tensor running_mean;
  Tensor running_var;
};

enum class NormMode { train, eval };

/// Per-channel batch normalization over N, H, W.
///
/// In train mode the batch's biased variance normalizes the input and the
/// running statistics move by `momentum` (running variance uses the
/// unbiased estimate). In eval mode the running statistics are used and
/// left untouched.
Tensor batchnorm2d(const Tensor &input, const Tensor &gamma, const Tensor &beta, BatchNormStats &stats,
                   NormMode mode, float momentum = 0.1f, float eps = 1e-5f);

Tensor relu(const Tensor &input);
/// Elementwise sum of equal shapes (residual connections).
Tensor add(const Tensor &a, const Tensor &b);
/// Elementwise product of equal shapes.
Tensor mul(const Tensor &a, const Tensor &b);
Tensor scale(const Tensor &a, float factor);
Tensor add_scalar(const Tensor &a, float value);
/// Sum of all elements into a {1} tensor.
Tensor sum(const Tensor &a);
Tensor mean(const Tensor &a);
/// NCHW → N×C.
Tensor global_avg_pool(const Tensor &input);
/// Row-wise log-softmax of an N×C tensor.
Tensor log_softmax(const Tensor &input);
/// −mean_n log_probs[n, label[n]]
Tensor nll_loss(const Tensor &log_probs, std::span<const int> labels);
Tensor cross_entropy(const Tensor &logits, std::span<const int> labels);

/// Row-wise softmax of raw values, no graph. Used for teacher distributions.
std::vector<float> softmax_rows(std::span<const float> logits, std::int64_t rows, std::int64_t cols,
                                float temperature = 1.0f);

}  // namespace bwrf

#endif  // BWRF_OPS_HPP
