#ifndef BWRF_QUANTIZER_HPP
#define BWRF_QUANTIZER_HPP

#include <cstdint>
#include <span>

#include "bwrf/kernels.hpp"
#include "bwrf/tensor.hpp"

namespace bwrf {

enum class Signedness { signed_, unsigned_ };

/// Bit-width and sign of a quantizer; yields the integer thresholds N and P.
///
/// signed:   N = −2^(bits−1), P = 2^(bits−1) − 1
/// unsigned: N = 0,           P = 2^bits − 1
struct QuantSpec {
  int bits = 8;
  Signedness sign = Signedness::signed_;

  QuantSpec() = default;
  QuantSpec(int bits, Signedness sign);

  std::int64_t lower() const;
  std::int64_t upper() const;
  kernels::QuantRange range() const { return {lower(), upper()}; }
};

inline constexpr float kMinScale = 1e-8f;

/// Step-size initializer: 2·mean(|v|)/√P, floored at kMinScale.
float init_scale(std::span<const float> values, const QuantSpec &spec);

/// Elementwise v̂ = s·round(clip(v/s, N, P)) with round-half-away-from-zero.
std::vector<float> quantize_forward(std::span<const float> v, float s, const QuantSpec &spec);

/// Straight-through input gradient: upstream where N < v/s < P, else 0.
std::vector<float> quantize_backward_input(std::span<const float> upstream, std::span<const float> v, float s,
                                           const QuantSpec &spec);

/// Scale gradient Σ upstream·∂v̂/∂s, times 1/√(n·P) when `grad_scale` is set.
float quantize_backward_scale(std::span<const float> upstream, std::span<const float> v, float s,
                              const QuantSpec &spec, bool grad_scale);

/// Graph op: fake-quantizes `v` with the learnable {1}-shaped `scale`.
/// Gradients flow to `v` through the STE mask and to `scale` through the
/// learned step-size rule.
Tensor quantize(const Tensor &v, const Tensor &scale, const QuantSpec &spec, bool grad_scale = true);

/// A learned step-size quantizer attached in front of a linear operator.
class Quantizer {
 public:
  Quantizer(QuantSpec spec, bool grad_scale = true);

  const QuantSpec &spec() const { return spec_; }
  int bits() const { return spec_.bits; }
  std::int64_t lower() const { return spec_.lower(); }
  std::int64_t upper() const { return spec_.upper(); }

  Tensor &scale() { return scale_; }
  const Tensor &scale() const { return scale_; }
  float scale_value() const { return scale_[0]; }
  void set_scale(float s);

  /// Whether the scale has been set from data. Activation quantizers are
  /// calibrated on the first tensor they see.
  bool initialized() const { return initialized_; }
  void set_initialized(bool flag) { initialized_ = flag; }
  void init_from(std::span<const float> values);

  /// A bypassed quantizer returns its input unchanged.
  bool enabled() const { return enabled_; }
  void set_enabled(bool flag) { enabled_ = flag; }

  bool grad_scale() const { return grad_scale_; }
  void set_grad_scale(bool flag) { grad_scale_ = flag; }

  /// Clamps the scale back to at least kMinScale.
  void project();

  Tensor operator()(const Tensor &v);

 private:
  QuantSpec spec_;
  Tensor scale_;
  bool grad_scale_ = true;
  bool initialized_ = false;
  bool enabled_ = true;
};

/// conv2d(aq(input), wq(weight)) + bias; bias stays in full precision.
Tensor quantized_conv(const Tensor &input, const Tensor &weight, const Tensor &bias, Quantizer &wq, Quantizer &aq,
                      std::int64_t stride, std::int64_t padding);
Tensor quantized_linear(const Tensor &input, const Tensor &weight, const Tensor &bias, Quantizer &wq,
                        Quantizer &aq);

}  // namespace bwrf

#endif  // BWRF_QUANTIZER_HPP
