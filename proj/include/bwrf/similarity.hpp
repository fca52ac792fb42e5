#ifndef BWRF_SIMILARITY_HPP
#define BWRF_SIMILARITY_HPP

#include <cstddef>
#include <span>
#include <vector>

#include "bwrf/data.hpp"
#include "bwrf/network.hpp"

namespace bwrf {

/// a·b / (‖a‖‖b‖). Two zero vectors count as aligned (1); one zero vector
/// against a non-zero one gives 0.
double cosine_similarity(std::span<const float> a, std::span<const float> b);

/// Sum over samples of the cosine similarity between flattened per-sample
/// features of equally shaped N×… tensors.
double cosine_sum(const Tensor &a, const Tensor &b);

/// Batch mean of cosine_sum.
double batch_cosine(const Tensor &a, const Tensor &b);

struct SimilarityReport {
  /// cos(x_{Q_i}, x_{F_i}) for i = 1..n
  std::vector<double> lp_vs_fp;
  /// cos(Q_{i+1}(x_{Q_i}), F_{i+1}(x_{Q_i})) for i = 1..n−1
  std::vector<double> graft;
  std::size_t samples = 0;
};

/// Feature similarity of LP and FP over the first `samples` records of
/// `data`, with both models in eval mode and no graph recorded.
SimilarityReport analyze_similarity(BlockModel &lp, BlockModel &fp, const Dataset &data, std::size_t samples,
                                    std::size_t batch_size = 128);

}  // namespace bwrf

#endif  // BWRF_SIMILARITY_HPP
