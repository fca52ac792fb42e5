#include "bwrf/network.hpp"

#include <cmath>
#include <map>
#include <random>
#include <regex>
#include <stdexcept>

namespace bwrf {

std::string BlockSpec::name() const {
  return "resnet" + std::to_string(depth) + "-w" + std::to_string(base_width) + "-c" + std::to_string(in_channels) +
         "-k" + std::to_string(classes);
}

BlockSpec BlockSpec::parse(const std::string &text) {
  static const std::regex full(R"(resnet(\d+)(?:-w(\d+))?(?:-c(\d+))?(?:-k(\d+))?)");
  std::smatch m;
  if (!std::regex_match(text, m, full)) throw std::invalid_argument("unknown architecture '" + text + "'");
  BlockSpec spec;
  spec.depth = std::stoi(m[1]);
  if (m[2].matched) spec.base_width = std::stoi(m[2]);
  if (m[3].matched) spec.in_channels = std::stoi(m[3]);
  if (m[4].matched) spec.classes = std::stoi(m[4]);
  spec.validate();
  return spec;
}

void BlockSpec::validate() const {
  if (depth < 8 || (depth - 2) % 6 != 0)
    throw std::invalid_argument("architecture depth must be 6·u+2 with u >= 1, got " + std::to_string(depth));
  if (base_width < 1 || in_channels < 1 || classes < 2)
    throw std::invalid_argument("architecture " + name() + " has a non-positive width/channel/class count");
}

bool supported_bits(int bits) { return bits == 2 || bits == 3 || bits == 4 || bits == 8 || bits == 32; }

Tensor ConvLayer::forward(const Tensor &x) {
  if (wq && aq) return quantized_conv(x, weight, Tensor{}, *wq, *aq, stride, padding);
  return conv2d(x, weight, Tensor{}, stride, padding);
}

Tensor BatchNormLayer::forward(const Tensor &x, NormMode mode) { return batchnorm2d(x, gamma, beta, stats, mode); }

Tensor LinearLayer::forward(const Tensor &x) {
  if (wq && aq) return quantized_linear(x, weight, bias, *wq, *aq);
  return linear(x, weight, bias);
}

Tensor ResidualUnit::forward(const Tensor &x, NormMode mode) {
  Tensor out = relu(bn1.forward(conv1.forward(x), mode));
  out = bn2.forward(conv2.forward(out), mode);
  Tensor shortcut = down_conv ? down_bn->forward(down_conv->forward(x), mode) : x;
  return relu(add(out, shortcut));
}

namespace {

ConvLayer make_conv(std::int64_t in, std::int64_t out, std::int64_t k, std::int64_t stride, std::mt19937_64 &rng) {
  std::normal_distribution<float> dist(0.0f, std::sqrt(2.0f / static_cast<float>(out * k * k)));
  std::vector<float> w(static_cast<std::size_t>(out * in * k * k));
  for (auto &v : w) v = dist(rng);
  ConvLayer layer;
  layer.weight = Tensor({out, in, k, k}, std::move(w), true);
  layer.stride = stride;
  layer.padding = k / 2;
  return layer;
}

BatchNormLayer make_bn(std::int64_t channels) {
  BatchNormLayer bn;
  bn.gamma = Tensor::full({channels}, 1.0f, true);
  bn.beta = Tensor::zeros({channels}, true);
  bn.stats.running_mean = Tensor::zeros({channels});
  bn.stats.running_var = Tensor::full({channels}, 1.0f);
  return bn;
}

void attach(ConvLayer &layer, int weight_bits, QuantSpec act) {
  layer.wq.emplace(QuantSpec(weight_bits, Signedness::signed_));
  layer.aq.emplace(act);
}

}  // namespace

BlockModel::BlockModel(BlockSpec spec, Precision precision, int bits)
    : spec_(spec), precision_(precision), bits_(bits) {
  spec_.validate();
  if (!supported_bits(bits)) throw std::invalid_argument("unsupported bit-width " + std::to_string(bits));
}

void BlockModel::set_frozen(bool frozen) {
  frozen_ = frozen;
  for (auto &e : export_state())
    if (e.kind != ParamKind::buffer) e.tensor.set_requires_grad(!frozen);
}

Tensor BlockModel::run_stem(const Tensor &x) { return relu(stem_bn_.forward(stem_conv_.forward(x), mode_)); }

Tensor BlockModel::run_block(int index, const Tensor &x) {
  if (index < 1 || index > n_blocks())
    throw std::out_of_range("block index " + std::to_string(index) + " outside [1, " + std::to_string(n_blocks()) +
                            "]");
  ++block_calls_;
  Tensor h = x;
  for (auto &unit : block(index).units) h = unit.forward(h, mode_);
  return h;
}

Tensor BlockModel::run_head(const Tensor &features) { return head_.forward(global_avg_pool(features)); }

BlockModel::LayerRefs BlockModel::layers() {
  LayerRefs refs;
  refs.convs.emplace_back("stem.conv", &stem_conv_);
  refs.norms.emplace_back("stem.bn", &stem_bn_);
  for (int b = 1; b <= n_blocks(); ++b) {
    auto &units = block(b).units;
    for (std::size_t u = 0; u < units.size(); ++u) {
      const std::string prefix = "block" + std::to_string(b) + ".unit" + std::to_string(u) + ".";
      refs.convs.emplace_back(prefix + "conv1", &units[u].conv1);
      refs.norms.emplace_back(prefix + "bn1", &units[u].bn1);
      refs.convs.emplace_back(prefix + "conv2", &units[u].conv2);
      refs.norms.emplace_back(prefix + "bn2", &units[u].bn2);
      if (units[u].down_conv) {
        refs.convs.emplace_back(prefix + "down_conv", &*units[u].down_conv);
        refs.norms.emplace_back(prefix + "down_bn", &*units[u].down_bn);
      }
    }
  }
  return refs;
}

std::vector<std::pair<std::string, Quantizer *>> BlockModel::named_quantizers() {
  std::vector<std::pair<std::string, Quantizer *>> out;
  for (auto &[name, conv] : layers().convs) {
    if (conv->wq) out.emplace_back(name + ".wq", &*conv->wq);
    if (conv->aq) out.emplace_back(name + ".aq", &*conv->aq);
  }
  if (head_.wq) out.emplace_back("head.wq", &*head_.wq);
  if (head_.aq) out.emplace_back("head.aq", &*head_.aq);
  return out;
}

std::vector<Quantizer *> BlockModel::quantizers() {
  std::vector<Quantizer *> out;
  for (auto &[name, q] : named_quantizers()) out.push_back(q);
  return out;
}

void BlockModel::set_quantizers_enabled(bool enabled) {
  for (auto *q : quantizers()) q->set_enabled(enabled);
}

std::vector<StateEntry> BlockModel::export_state() {
  std::vector<StateEntry> out;
  auto refs = layers();
  for (auto &[name, conv] : refs.convs) out.push_back({name + ".weight", conv->weight, ParamKind::weight});
  for (auto &[name, bn] : refs.norms) {
    out.push_back({name + ".gamma", bn->gamma, ParamKind::bn_affine});
    out.push_back({name + ".beta", bn->beta, ParamKind::bn_affine});
    out.push_back({name + ".running_mean", bn->stats.running_mean, ParamKind::buffer});
    out.push_back({name + ".running_var", bn->stats.running_var, ParamKind::buffer});
  }
  out.push_back({"head.weight", head_.weight, ParamKind::weight});
  out.push_back({"head.bias", head_.bias, ParamKind::bias});
  for (auto &[name, q] : named_quantizers()) {
    out.push_back({name + ".scale", q->scale(), ParamKind::scale});
    out.push_back({name + ".initialized", Tensor::scalar(q->initialized() ? 1.0f : 0.0f), ParamKind::buffer});
  }
  return out;
}

void BlockModel::import_state(const std::vector<StateEntry> &entries) {
  std::map<std::string, const StateEntry *> incoming;
  for (const auto &e : entries) incoming[e.name] = &e;
  auto own = export_state();
  if (incoming.size() != own.size() || incoming.size() != entries.size())
    throw std::invalid_argument("import_state: expected " + std::to_string(own.size()) + " tensors, got " +
                                std::to_string(entries.size()));
  std::map<std::string, Quantizer *> quant;
  for (auto &[name, q] : named_quantizers()) quant[name] = q;
  for (auto &dst : own) {
    auto it = incoming.find(dst.name);
    if (it == incoming.end()) throw std::invalid_argument("import_state: missing tensor '" + dst.name + "'");
    const Tensor &src = it->second->tensor;
    if (src.shape() != dst.tensor.shape())
      throw ShapeError("import_state: '" + dst.name + "' has shape " + to_string(src.shape()) + ", expected " +
                       to_string(dst.tensor.shape()));
    auto out = dst.tensor.mutable_data();
    std::copy(src.data().begin(), src.data().end(), out.begin());
    static constexpr std::string_view suffix = ".initialized";
    if (dst.name.ends_with(suffix))
      quant.at(dst.name.substr(0, dst.name.size() - suffix.size()))->set_initialized(src[0] != 0.0f);
  }
}

std::vector<StateEntry> BlockModel::parameters() {
  std::vector<StateEntry> out;
  if (frozen_) return out;
  for (auto &e : export_state())
    if (e.kind != ParamKind::buffer) out.push_back(std::move(e));
  return out;
}

void BlockModel::zero_grad() {
  for (auto &e : export_state()) e.tensor.zero_grad();
}

BlockModel BlockModel::clone() {
  BlockModel copy = build_model(spec_, precision_, bits_);
  copy.import_state(export_state());
  auto src = quantizers();
  auto dst = copy.quantizers();
  for (std::size_t i = 0; i < src.size(); ++i) {
    dst[i]->set_enabled(src[i]->enabled());
    dst[i]->set_grad_scale(src[i]->grad_scale());
  }
  copy.set_mode(mode_);
  copy.set_frozen(frozen_);
  return copy;
}

BlockModel build_model(const BlockSpec &spec, Precision precision, int bits, std::uint64_t seed) {
  BlockModel model(spec, precision, bits);
  std::mt19937_64 rng(seed);
  const bool quantized = precision == Precision::low && bits != 32;

  model.stem_conv() = make_conv(spec.in_channels, spec.base_width, 3, 1, rng);
  model.stem_bn() = make_bn(spec.base_width);
  if (quantized) attach(model.stem_conv(), 8, QuantSpec(8, Signedness::signed_));

  std::int64_t in = spec.base_width;
  auto &blocks = model.blocks();
  blocks.resize(static_cast<std::size_t>(spec.n_blocks()));
  for (int b = 0; b < spec.n_blocks(); ++b) {
    const std::int64_t width = spec.width(b);
    for (int u = 0; u < spec.units_per_stage(); ++u) {
      const std::int64_t stride = u == 0 ? spec.stride(b) : 1;
      ResidualUnit unit;
      unit.conv1 = make_conv(in, width, 3, stride, rng);
      unit.bn1 = make_bn(width);
      unit.conv2 = make_conv(width, width, 3, 1, rng);
      unit.bn2 = make_bn(width);
      if (stride != 1 || in != width) {
        unit.down_conv = make_conv(in, width, 1, stride, rng);
        unit.down_bn = make_bn(width);
      }
      if (quantized) {
        const QuantSpec act(bits, Signedness::unsigned_);
        attach(unit.conv1, bits, act);
        attach(unit.conv2, bits, act);
        if (unit.down_conv) attach(*unit.down_conv, bits, act);
      }
      blocks[b].units.push_back(std::move(unit));
      in = width;
    }
  }

  const std::int64_t features = spec.width(spec.n_blocks() - 1);
  std::uniform_real_distribution<float> dist(-1.0f / std::sqrt(static_cast<float>(features)),
                                             1.0f / std::sqrt(static_cast<float>(features)));
  std::vector<float> w(static_cast<std::size_t>(spec.classes * features)), b(static_cast<std::size_t>(spec.classes));
  for (auto &v : w) v = dist(rng);
  for (auto &v : b) v = dist(rng);
  model.head().weight = Tensor({spec.classes, features}, std::move(w), true);
  model.head().bias = Tensor({spec.classes}, std::move(b), true);
  if (quantized) {
    model.head().wq.emplace(QuantSpec(8, Signedness::signed_));
    model.head().aq.emplace(QuantSpec(8, Signedness::unsigned_));
  }

  if (precision == Precision::full) {
    model.set_frozen(true);
    model.set_mode(NormMode::eval);
  }
  return model;
}

void init_lp_from_fp(BlockModel &lp, BlockModel &fp) {
  if (!(lp.spec() == fp.spec()))
    throw ShapeError("init_lp_from_fp: architectures differ (" + lp.spec().name() + " vs " + fp.spec().name() + ")");
  std::map<std::string, Tensor> source;
  for (auto &e : fp.export_state())
    if (e.kind != ParamKind::scale && !e.name.ends_with(".initialized")) source[e.name] = e.tensor;
  for (auto &e : lp.export_state()) {
    if (e.kind == ParamKind::scale || e.name.ends_with(".initialized")) continue;
    auto it = source.find(e.name);
    if (it == source.end()) throw ShapeError("init_lp_from_fp: FP model has no tensor '" + e.name + "'");
    if (it->second.shape() != e.tensor.shape())
      throw ShapeError("init_lp_from_fp: '" + e.name + "' shape " + to_string(it->second.shape()) + " vs " +
                       to_string(e.tensor.shape()));
    auto dst = e.tensor.mutable_data();
    std::copy(it->second.data().begin(), it->second.data().end(), dst.begin());
  }
  auto calibrate = [](ConvLayer &conv) {
    if (conv.wq) conv.wq->init_from(conv.weight.data());
    if (conv.aq) conv.aq->set_initialized(false);
  };
  for (auto &[name, conv] : lp.layers().convs) calibrate(*conv);
  if (lp.head().wq) lp.head().wq->init_from(lp.head().weight.data());
  if (lp.head().aq) lp.head().aq->set_initialized(false);
}

Collected forward_collect(BlockModel &model, const Tensor &x) {
  if (x.rank() != 4 || x.dim(1) != model.spec().in_channels)
    throw ShapeError("forward: expected N×" + std::to_string(model.spec().in_channels) + "×H×W input, got " +
                     to_string(x.shape()));
  Collected out;
  Tensor h = model.run_stem(x);
  for (int i = 1; i <= model.n_blocks(); ++i) {
    h = model.run_block(i, h);
    out.features.push_back(h);
  }
  out.logits = model.run_head(h);
  return out;
}

Tensor forward(BlockModel &model, const Tensor &x) { return forward_collect(model, x).logits; }

}  // namespace bwrf
