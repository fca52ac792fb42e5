#ifndef BWRF_TESTS_FIXTURES_HPP
#define BWRF_TESTS_FIXTURES_HPP

#include <random>
#include <algorithm>
#include <vector>

#include "bwrf/bwrf.hpp"
#include "bwrf/network.hpp"
#include "bwrf/ops.hpp"
#include "gradcheck.hpp"

namespace bwrf::testing {

/// 3-block residual net, one unit per block, widths 4/8/16.
inline BlockSpec tiny_spec() {
  BlockSpec s;
  s.depth = 8;
  s.base_width = 4;
  return s;
}

inline Tensor random_images(std::mt19937_64 &rng, int n = 4, int hw = 8, int channels = 3) {
  std::normal_distribution<float> d;
  std::vector<float> v(static_cast<std::size_t>(n * channels * hw * hw));
  for (auto &x : v) x = d(rng);
  return Tensor({n, channels, hw, hw}, v);
}

inline std::vector<int> random_labels(std::mt19937_64 &rng, int n = 4, int classes = 10) {
  std::vector<int> y(static_cast<std::size_t>(n));
  for (auto &l : y) l = std::uniform_int_distribution<int>(0, classes - 1)(rng);
  return y;
}

inline std::vector<float> values(const Tensor &t) { return {t.data().begin(), t.data().end()}; }

struct Pair {
  BlockModel lp;
  BlockModel fp;
};

/// FP model with random weights and non-trivial BN statistics, plus an LP
/// model initialized from it whose activation quantizers are calibrated.
inline Pair make_pair(std::uint64_t seed, int bits = 4, const BlockSpec &spec = tiny_spec()) {
  Pair p{build_model(spec, Precision::low, bits, seed + 1), build_model(spec, Precision::full, 32, seed)};
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> d(-0.2f, 0.2f), pos(0.5f, 1.5f);
  for (auto &e : p.fp.export_state()) {
    auto data = e.tensor.mutable_data();
    if (e.name.ends_with("running_var") || e.name.ends_with("gamma"))
      for (auto &v : data) v = pos(rng);
    else if (e.name.ends_with("running_mean") || e.name.ends_with("beta"))
      for (auto &v : data) v = d(rng);
  }
  init_lp_from_fp(p.lp, p.fp);
  NoGradGuard no_grad;
  forward(p.lp, random_images(rng));
  return p;
}

/// Standalone {Q_1..Q_k, F_{k+1}..F_n}: a copy of the LP model whose later
/// blocks and head are replaced by the FP ones.
inline BlockModel compose(BlockModel &lp, BlockModel &fp, int k) {
  BlockModel m = lp.clone();
  for (int i = k + 1; i <= fp.n_blocks(); ++i) m.block(i) = fp.block(i);
  m.head() = fp.head();
  return m;
}

/// Gradients of every trainable LP tensor, in parameter order.
inline std::vector<std::vector<float>> lp_grads(BlockModel &lp) {
  std::vector<std::vector<float>> out;
  for (auto &e : lp.parameters()) out.push_back(e.tensor.grad());
  return out;
}

}  // namespace bwrf::testing

#endif  // BWRF_TESTS_FIXTURES_HPP
