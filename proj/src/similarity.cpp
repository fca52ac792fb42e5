#include "bwrf/similarity.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace bwrf {

double cosine_similarity(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size())
    throw std::invalid_argument("cosine_similarity: lengths " + std::to_string(a.size()) + " and " +
                                std::to_string(b.size()) + " differ");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<double>(a[i]) * b[i];
    na += static_cast<double>(a[i]) * a[i];
    nb += static_cast<double>(b[i]) * b[i];
  }
  if (na == 0.0 && nb == 0.0) return 1.0;
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

double cosine_sum(const Tensor &a, const Tensor &b) {
  if (a.shape() != b.shape())
    throw std::invalid_argument("feature shapes " + to_string(a.shape()) + " and " + to_string(b.shape()) +
                                " differ");
  if (a.rank() < 1 || a.shape()[0] == 0) throw std::invalid_argument("cosine: empty batch");
  const auto n = static_cast<std::size_t>(a.shape()[0]);
  const std::size_t per = a.data().size() / n;
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    total += cosine_similarity(a.data().subspan(i * per, per), b.data().subspan(i * per, per));
  return total;
}

double batch_cosine(const Tensor &a, const Tensor &b) {
  return cosine_sum(a, b) / static_cast<double>(a.shape().at(0));
}

SimilarityReport analyze_similarity(BlockModel &lp, BlockModel &fp, const Dataset &data, std::size_t samples,
                                    std::size_t batch_size) {
  if (!(lp.spec() == fp.spec()))
    throw std::invalid_argument("LP " + lp.spec().name() + " and FP " + fp.spec().name() + " differ in shape");
  const std::size_t count = std::min(samples, data.size());
  if (count == 0) throw std::invalid_argument("analyze_similarity: no samples");
  const int n = lp.n_blocks();
  const NormMode lp_mode = lp.mode(), fp_mode = fp.mode();
  lp.set_mode(NormMode::eval);
  fp.set_mode(NormMode::eval);
  NoGradGuard no_grad;

  SimilarityReport report;
  report.lp_vs_fp.assign(static_cast<std::size_t>(n), 0.0);
  report.graft.assign(static_cast<std::size_t>(n - 1), 0.0);
  std::vector<std::size_t> indices;
  for (std::size_t start = 0; start < count; start += batch_size) {
    indices.resize(std::min(batch_size, count - start));
    std::iota(indices.begin(), indices.end(), start);
    const Batch batch = make_batch(data, indices);
    const Collected q = forward_collect(lp, batch.images);
    const Collected f = forward_collect(fp, batch.images);
    for (int i = 0; i < n; ++i) report.lp_vs_fp[i] += cosine_sum(q.features[i], f.features[i]);
    for (int i = 1; i < n; ++i) {
      const Tensor grafted = fp.run_block(i + 1, q.features[i - 1]);
      report.graft[i - 1] += cosine_sum(q.features[i], grafted);
    }
  }
  for (auto &v : report.lp_vs_fp) v /= static_cast<double>(count);
  for (auto &v : report.graft) v /= static_cast<double>(count);
  report.samples = count;
  lp.set_mode(lp_mode);
  fp.set_mode(fp_mode);
  return report;
}

}  // namespace bwrf
