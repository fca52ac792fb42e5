#include "bwrf/quantizer.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "bwrf/ops.hpp"

namespace bwrf {

QuantSpec::QuantSpec(int bits_, Signedness sign_) : bits(bits_), sign(sign_) {
  if (bits < 2 || bits > 31) throw std::invalid_argument("quantizer: bit-width must be in [2, 31], got " + std::to_string(bits));
}

std::int64_t QuantSpec::lower() const {
  return sign == Signedness::signed_ ? -(std::int64_t{1} << (bits - 1)) : 0;
}

std::int64_t QuantSpec::upper() const {
  return sign == Signedness::signed_ ? (std::int64_t{1} << (bits - 1)) - 1 : (std::int64_t{1} << bits) - 1;
}

float init_scale(std::span<const float> values, const QuantSpec &spec) {
  if (values.empty()) throw std::invalid_argument("init_scale: empty tensor");
  double acc = 0.0;
  for (float v : values) acc += std::abs(static_cast<double>(v));
  const double mean_abs = acc / static_cast<double>(values.size());
  const double s = 2.0 * mean_abs / std::sqrt(static_cast<double>(spec.upper()));
  return std::max(static_cast<float>(s), kMinScale);
}

namespace {

void require_positive(float s) {
  if (!(s > 0.0f)) throw std::invalid_argument("quantizer: scale must be positive, got " + std::to_string(s));
}

}  // namespace

std::vector<float> quantize_forward(std::span<const float> v, float s, const QuantSpec &spec) {
  require_positive(s);
  const auto r = spec.range();
  std::vector<float> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = kernels::fake_quantize(v[i], s, r);
  return out;
}

std::vector<float> quantize_backward_input(std::span<const float> upstream, std::span<const float> v, float s,
                                           const QuantSpec &spec) {
  if (upstream.size() != v.size()) throw ShapeError("quantize_backward_input: size mismatch");
  const auto r = spec.range();
  std::vector<float> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = kernels::ste_pass(v[i], s, r) ? upstream[i] : 0.0f;
  return out;
}

float quantize_backward_scale(std::span<const float> upstream, std::span<const float> v, float s,
                              const QuantSpec &spec, bool grad_scale) {
  if (upstream.size() != v.size()) throw ShapeError("quantize_backward_scale: size mismatch");
  const auto r = spec.range();
  double acc = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i)
    acc += static_cast<double>(upstream[i]) * kernels::scale_derivative(v[i], s, r);
  if (grad_scale) acc /= std::sqrt(static_cast<double>(v.size()) * static_cast<double>(spec.upper()));
  return static_cast<float>(acc);
}

Tensor quantize(const Tensor &v, const Tensor &scale, const QuantSpec &spec, bool grad_scale) {
  if (scale.numel() != 1) throw ShapeError("quantize: scale must hold one element, got " + to_string(scale.shape()));
  const float s = scale[0];
  return make_result("quantize", v.shape(), quantize_forward(v.data(), s, spec), {v, scale},
                     [spec, s, grad_scale](Node &self) {
                       const auto &x = self.parents[0]->data;
                       if (Node *in = self.parents[0].get(); in->requires_grad) {
                         auto dv = quantize_backward_input(self.grad, x, s, spec);
                         auto &buf = in->grad_buffer();
                         for (std::size_t i = 0; i < buf.size(); ++i) buf[i] += dv[i];
                       }
                       if (Node *sc = self.parents[1].get(); sc->requires_grad)
                         sc->grad_buffer()[0] += quantize_backward_scale(self.grad, x, s, spec, grad_scale);
                     });
}

Quantizer::Quantizer(QuantSpec spec, bool grad_scale)
    : spec_(spec), scale_(Tensor::scalar(1.0f, true)), grad_scale_(grad_scale) {}

void Quantizer::set_scale(float s) {
  require_positive(s);
  scale_.mutable_data()[0] = s;
}

void Quantizer::init_from(std::span<const float> values) {
  set_scale(init_scale(values, spec_));
  initialized_ = true;
}

void Quantizer::project() {
  auto d = scale_.mutable_data();
  if (!(d[0] >= kMinScale)) d[0] = kMinScale;
}

Tensor Quantizer::operator()(const Tensor &v) {
  if (!enabled_) return v;
  if (!initialized_) init_from(v.data());
  return quantize(v, scale_, spec_, grad_scale_);
}

Tensor quantized_conv(const Tensor &input, const Tensor &weight, const Tensor &bias, Quantizer &wq, Quantizer &aq,
                      std::int64_t stride, std::int64_t padding) {
  return conv2d(aq(input), wq(weight), bias, stride, padding);
}

Tensor quantized_linear(const Tensor &input, const Tensor &weight, const Tensor &bias, Quantizer &wq,
                        Quantizer &aq) {
  return linear(aq(input), wq(weight), bias);
}

}  // namespace bwrf
