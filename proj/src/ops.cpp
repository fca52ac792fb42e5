#include "bwrf/ops.hpp"

#include <cmath>
#include <string>

#include "bwrf/kernels.hpp"

namespace bwrf {

namespace kernels {

ConvGeometry ConvGeometry::make(const Shape &input, const Shape &weight, Index stride, Index padding) {
  if (input.size() != 4) throw ShapeError("conv2d: input must be NCHW, got " + to_string(input));
  if (weight.size() != 4) throw ShapeError("conv2d: weight must be OIkk, got " + to_string(weight));
  if (weight[2] != weight[3]) throw ShapeError("conv2d: kernel must be square, got " + to_string(weight));
  if (input[1] != weight[1])
    throw ShapeError("conv2d: input channel dimension (dim 1) is " + std::to_string(input[1]) +
                     " but weight expects " + std::to_string(weight[1]));
  if (stride < 1) throw std::invalid_argument("conv2d: stride must be >= 1");
  if (padding < 0) throw std::invalid_argument("conv2d: padding must be >= 0");
  ConvGeometry g{input[0], input[1], input[2], input[3], weight[0], weight[2], stride, padding, 0, 0};
  if (input[2] + 2 * padding < g.kernel || input[3] + 2 * padding < g.kernel)
    throw ShapeError("conv2d: spatial extent " + to_string(input) + " smaller than kernel");
  g.out_height = (g.height + 2 * padding - g.kernel) / stride + 1;
  g.out_width = (g.width + 2 * padding - g.kernel) / stride + 1;
  return g;
}

}  // namespace kernels

namespace {

// Gradient sink of parent `i`, or an empty span when it takes no gradient.
std::span<float> sink(Node &self, std::size_t i) {
  Node *p = self.parents[i].get();
  if (!p || !p->requires_grad) return {};
  return p->grad_buffer();
}

std::span<const float> values(const Tensor &t) { return t.defined() ? t.data() : std::span<const float>{}; }

void require_same_shape(const char *op, const Tensor &a, const Tensor &b) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
}

}  // namespace

Tensor conv2d(const Tensor &input, const Tensor &weight, const Tensor &bias, std::int64_t stride,
              std::int64_t padding) {
  const auto g = kernels::ConvGeometry::make(input.shape(), weight.shape(), stride, padding);
  if (bias.defined() && bias.numel() != g.out_channels)
    throw ShapeError("conv2d: bias length " + std::to_string(bias.numel()) + " does not match output channels " +
                     std::to_string(g.out_channels));
  std::vector<float> out(static_cast<std::size_t>(g.batch * g.out_channels * g.out_plane()));
  kernels::conv2d_forward<float>(input.data(), weight.data(), values(bias), g, out);
  return make_result("conv2d", {g.batch, g.out_channels, g.out_height, g.out_width}, std::move(out),
                     {input, weight, bias}, [g](Node &self) {
                       kernels::conv2d_backward<float>(self.parents[0]->data, self.parents[1]->data, self.grad, g,
                                                       sink(self, 0), sink(self, 1), sink(self, 2));
                     });
}

Tensor linear(const Tensor &input, const Tensor &weight, const Tensor &bias) {
  if (input.rank() != 2 || weight.rank() != 2)
    throw ShapeError("linear: expected N×D input and C×D weight, got " + to_string(input.shape()) + " and " +
                     to_string(weight.shape()));
  const auto rows = input.dim(0), in = input.dim(1), out_f = weight.dim(0);
  if (weight.dim(1) != in)
    throw ShapeError("linear: inner dimension (dim 1) is " + std::to_string(in) + " for input but " +
                     std::to_string(weight.dim(1)) + " for weight");
  if (bias.defined() && bias.numel() != out_f)
    throw ShapeError("linear: bias length " + std::to_string(bias.numel()) + " does not match " +
                     std::to_string(out_f) + " outputs");
  std::vector<float> out(static_cast<std::size_t>(rows * out_f));
  kernels::linear_forward<float>(input.data(), weight.data(), values(bias), rows, in, out_f, out);
  return make_result("linear", {rows, out_f}, std::move(out), {input, weight, bias}, [rows, in, out_f](Node &self) {
    kernels::linear_backward<float>(self.parents[0]->data, self.parents[1]->data, self.grad, rows, in, out_f,
                                    sink(self, 0), sink(self, 1), sink(self, 2));
  });
}

Tensor batchnorm2d(const Tensor &input, const Tensor &gamma, const Tensor &beta, BatchNormStats &stats,
                   NormMode mode, float momentum, float eps) {
  if (!(eps > 0.0f)) throw std::invalid_argument("batchnorm2d: eps must be positive");
  if (input.rank() != 4) throw ShapeError("batchnorm2d: input must be NCHW, got " + to_string(input.shape()));
  const kernels::BatchNormExtents e{input.dim(0), input.dim(1), input.dim(2) * input.dim(3)};
  if (gamma.numel() != e.channels || beta.numel() != e.channels || stats.running_mean.numel() != e.channels ||
      stats.running_var.numel() != e.channels)
    throw ShapeError("batchnorm2d: channel dimension (dim 1) is " + std::to_string(e.channels) +
                     " but parameters have " + std::to_string(gamma.numel()));

  std::vector<double> mean, invstd(static_cast<std::size_t>(e.channels));
  if (mode == NormMode::train) {
    if (e.batch == 0) throw std::invalid_argument("batchnorm2d: zero batch size in train mode");
    std::vector<double> var;
    kernels::batch_moments<float>(input.data(), e, mean, var);
    const double count = static_cast<double>(e.count());
    const double unbias = count > 1 ? count / (count - 1.0) : 1.0;
    auto rm = stats.running_mean.mutable_data();
    auto rv = stats.running_var.mutable_data();
    for (std::int64_t c = 0; c < e.channels; ++c) {
      invstd[c] = 1.0 / std::sqrt(var[c] + eps);
      rm[c] = static_cast<float>((1.0 - momentum) * rm[c] + momentum * mean[c]);
      rv[c] = static_cast<float>((1.0 - momentum) * rv[c] + momentum * var[c] * unbias);
    }
  } else {
    mean.resize(static_cast<std::size_t>(e.channels));
    auto rm = stats.running_mean.data();
    auto rv = stats.running_var.data();
    for (std::int64_t c = 0; c < e.channels; ++c) {
      mean[c] = rm[c];
      invstd[c] = 1.0 / std::sqrt(static_cast<double>(rv[c]) + eps);
    }
  }

  std::vector<float> out(input.data().size());
  kernels::batchnorm_apply<float>(input.data(), gamma.data(), beta.data(), mean, invstd, e, out);
  const bool train = mode == NormMode::train;
  return make_result(
      train ? "batchnorm2d_train" : "batchnorm2d_eval", input.shape(), std::move(out), {input, gamma, beta},
      [e, mean = std::move(mean), invstd = std::move(invstd), train](Node &self) {
        const auto &x = self.parents[0]->data;
        const auto &gam = self.parents[1]->data;
        const auto &dy = self.grad;
        auto dx = sink(self, 0), dgamma = sink(self, 1), dbeta = sink(self, 2);
        const double count = static_cast<double>(e.count());
        for (std::int64_t c = 0; c < e.channels; ++c) {
          double sum_dy = 0.0, sum_dy_xhat = 0.0;
          for (std::int64_t n = 0; n < e.batch; ++n) {
            const std::int64_t base = (n * e.channels + c) * e.plane;
            for (std::int64_t i = 0; i < e.plane; ++i) {
              const double xhat = (x[base + i] - mean[c]) * invstd[c];
              sum_dy += dy[base + i];
              sum_dy_xhat += dy[base + i] * xhat;
            }
          }
          if (!dgamma.empty()) dgamma[c] += static_cast<float>(sum_dy_xhat);
          if (!dbeta.empty()) dbeta[c] += static_cast<float>(sum_dy);
          if (dx.empty()) continue;
          const double k = gam[c] * invstd[c];
          for (std::int64_t n = 0; n < e.batch; ++n) {
            const std::int64_t base = (n * e.channels + c) * e.plane;
            for (std::int64_t i = 0; i < e.plane; ++i) {
              if (train) {
                const double xhat = (x[base + i] - mean[c]) * invstd[c];
                dx[base + i] += static_cast<float>(k * (dy[base + i] - sum_dy / count - xhat * sum_dy_xhat / count));
              } else {
                dx[base + i] += static_cast<float>(k * dy[base + i]);
              }
            }
          }
        }
      });
}

Tensor relu(const Tensor &input) {
  std::vector<float> out(input.data().size());
  auto x = input.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = kernels::relu(x[i]);
  return make_result("relu", input.shape(), std::move(out), {input}, [](Node &self) {
    const auto &x = self.parents[0]->data;
    auto dx = sink(self, 0);
    for (std::size_t i = 0; i < dx.size(); ++i)
      if (x[i] > 0.0f) dx[i] += self.grad[i];
  });
}

Tensor add(const Tensor &a, const Tensor &b) {
  require_same_shape("add", a, b);
  std::vector<float> out(a.data().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return make_result("add", a.shape(), std::move(out), {a, b}, [](Node &self) {
    for (std::size_t p = 0; p < 2; ++p) {
      auto d = sink(self, p);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += self.grad[i];
    }
  });
}

Tensor mul(const Tensor &a, const Tensor &b) {
  require_same_shape("mul", a, b);
  std::vector<float> out(a.data().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return make_result("mul", a.shape(), std::move(out), {a, b}, [](Node &self) {
    const auto &av = self.parents[0]->data;
    const auto &bv = self.parents[1]->data;
    auto da = sink(self, 0);
    for (std::size_t i = 0; i < da.size(); ++i) da[i] += self.grad[i] * bv[i];
    auto db = sink(self, 1);
    for (std::size_t i = 0; i < db.size(); ++i) db[i] += self.grad[i] * av[i];
  });
}

Tensor scale(const Tensor &a, float factor) {
  std::vector<float> out(a.data().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * factor;
  return make_result("scale", a.shape(), std::move(out), {a}, [factor](Node &self) {
    auto d = sink(self, 0);
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += self.grad[i] * factor;
  });
}

Tensor add_scalar(const Tensor &a, float value) {
  std::vector<float> out(a.data().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + value;
  return make_result("add_scalar", a.shape(), std::move(out), {a}, [](Node &self) {
    auto d = sink(self, 0);
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += self.grad[i];
  });
}

Tensor sum(const Tensor &a) {
  double acc = 0.0;
  for (float v : a.data()) acc += v;
  return make_result("sum", {1}, {static_cast<float>(acc)}, {a}, [](Node &self) {
    auto d = sink(self, 0);
    for (auto &v : d) v += self.grad[0];
  });
}

Tensor mean(const Tensor &a) {
  if (a.numel() == 0) throw ShapeError("mean: empty tensor");
  return scale(sum(a), 1.0f / static_cast<float>(a.numel()));
}

Tensor global_avg_pool(const Tensor &input) {
  if (input.rank() != 4) throw ShapeError("global_avg_pool: input must be NCHW, got " + to_string(input.shape()));
  const auto rows = input.dim(0) * input.dim(1), plane = input.dim(2) * input.dim(3);
  std::vector<float> out(static_cast<std::size_t>(rows));
  kernels::global_avg_pool_forward<float>(input.data(), rows, plane, out);
  return make_result("global_avg_pool", {input.dim(0), input.dim(1)}, std::move(out), {input},
                     [rows, plane](Node &self) {
                       auto d = sink(self, 0);
                       const float inv = 1.0f / static_cast<float>(plane);
                       for (std::int64_t r = 0; r < rows; ++r)
                         for (std::int64_t i = 0; i < plane; ++i) d[r * plane + i] += self.grad[r] * inv;
                     });
}

Tensor log_softmax(const Tensor &input) {
  if (input.rank() != 2) throw ShapeError("log_softmax: input must be N×C, got " + to_string(input.shape()));
  const auto rows = input.dim(0), cols = input.dim(1);
  std::vector<float> out(input.data().size());
  kernels::log_softmax_forward<float>(input.data(), rows, cols, out);
  return make_result("log_softmax", input.shape(), std::move(out), {input}, [rows, cols](Node &self) {
    auto d = sink(self, 0);
    for (std::int64_t r = 0; r < rows; ++r) {
      double total = 0.0;
      for (std::int64_t c = 0; c < cols; ++c) total += self.grad[r * cols + c];
      for (std::int64_t c = 0; c < cols; ++c) {
        const double p = std::exp(static_cast<double>(self.data[r * cols + c]));
        d[r * cols + c] += static_cast<float>(self.grad[r * cols + c] - p * total);
      }
    }
  });
}

Tensor nll_loss(const Tensor &log_probs, std::span<const int> labels) {
  if (log_probs.rank() != 2) throw ShapeError("nll_loss: expected N×C log-probabilities");
  const auto rows = log_probs.dim(0), cols = log_probs.dim(1);
  if (static_cast<std::int64_t>(labels.size()) != rows)
    throw ShapeError("nll_loss: batch dimension (dim 0) is " + std::to_string(rows) + " but " +
                     std::to_string(labels.size()) + " labels were given");
  if (rows == 0) throw ShapeError("nll_loss: empty batch");
  std::vector<int> targets(labels.begin(), labels.end());
  double acc = 0.0;
  for (std::int64_t r = 0; r < rows; ++r) {
    if (targets[r] < 0 || targets[r] >= cols)
      throw std::out_of_range("nll_loss: label " + std::to_string(targets[r]) + " outside [0, " +
                              std::to_string(cols) + ")");
    acc -= log_probs[static_cast<std::size_t>(r * cols + targets[r])];
  }
  return make_result("nll_loss", {1}, {static_cast<float>(acc / static_cast<double>(rows))}, {log_probs},
                     [rows, cols, targets = std::move(targets)](Node &self) {
                       auto d = sink(self, 0);
                       const float g = -self.grad[0] / static_cast<float>(rows);
                       for (std::int64_t r = 0; r < rows; ++r) d[r * cols + targets[r]] += g;
                     });
}

Tensor cross_entropy(const Tensor &logits, std::span<const int> labels) {
  return nll_loss(log_softmax(logits), labels);
}

std::vector<float> softmax_rows(std::span<const float> logits, std::int64_t rows, std::int64_t cols,
                                float temperature) {
  std::vector<float> scaled(logits.size()), out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) scaled[i] = logits[i] / temperature;
  kernels::log_softmax_forward<float>(scaled, rows, cols, out);
  for (auto &v : out) v = std::exp(v);
  return out;
}

}  // namespace bwrf
