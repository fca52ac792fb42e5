#include <gtest/gtest.h>

#include <random>

#include "bwrf/ops.hpp"
#include "gradcheck.hpp"

namespace bwrf {
namespace {

TEST(Conv2d, KnownValues) {
  // 1×1×3×3 image, 2×2 kernel of ones, stride 1, no padding
  Tensor x({1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  Tensor w({1, 1, 2, 2}, {1, 1, 1, 1});
  const Tensor y = conv2d(x, w, Tensor(), 1, 0);
  EXPECT_EQ(y.shape(), (Shape{1, 1, 2, 2}));
  EXPECT_EQ(std::vector<float>(y.data().begin(), y.data().end()), (std::vector<float>{12, 16, 24, 28}));
}

TEST(Conv2d, PaddingAndStrideShape) {
  const Tensor y = conv2d(Tensor::zeros({2, 3, 8, 8}), Tensor::zeros({4, 3, 3, 3}), Tensor(), 2, 1);
  EXPECT_EQ(y.shape(), (Shape{2, 4, 4, 4}));
}

TEST(Conv2d, ChannelMismatchNamesDimension) {
  try {
    conv2d(Tensor::zeros({1, 3, 4, 4}), Tensor::zeros({2, 2, 3, 3}), Tensor(), 1, 1);
    FAIL();
  } catch (const ShapeError &e) {
    EXPECT_NE(std::string(e.what()).find("channel"), std::string::npos) << e.what();
  }
}

TEST(Linear, KnownValues) {
  Tensor x({1, 2}, {1, 2});
  Tensor w({2, 2}, {1, 0, 1, 1});
  Tensor b({2}, {0.5f, -1});
  const Tensor y = linear(x, w, b);
  EXPECT_FLOAT_EQ(y[0], 1.5f);
  EXPECT_FLOAT_EQ(y[1], 2.0f);
  EXPECT_THROW(linear(x, Tensor::zeros({2, 3}), Tensor()), ShapeError);
}

TEST(BatchNorm, TrainModeNormalizesAndUpdatesRunningStats) {
  Tensor x({2, 1, 1, 2}, {1, 2, 3, 4});
  BatchNormStats stats{Tensor::zeros({1}), Tensor::full({1}, 1.0f)};
  const Tensor y = batchnorm2d(x, Tensor::full({1}, 1.0f), Tensor::zeros({1}), stats, NormMode::train);
  double m = 0, v = 0;
  for (float f : y.data()) m += f;
  for (float f : y.data()) v += f * f;
  EXPECT_NEAR(m / 4, 0.0, 1e-6);
  EXPECT_NEAR(v / 4, 1.0, 1e-4);
  EXPECT_FLOAT_EQ(stats.running_mean[0], 0.25f);                  // 0.9·0 + 0.1·2.5
  EXPECT_NEAR(stats.running_var[0], 0.9 + 0.1 * (5.0 / 3.0), 1e-6);  // unbiased 1.6667
}

TEST(BatchNorm, EvalModeLeavesStatsAlone) {
  BatchNormStats stats{Tensor({1}, {1.0f}), Tensor({1}, {4.0f})};
  const Tensor y = batchnorm2d(Tensor({1, 1, 1, 1}, {3.0f}), Tensor({1}, {2.0f}), Tensor({1}, {0.5f}), stats,
                               NormMode::eval);
  EXPECT_NEAR(y[0], 2.5f, 1e-5);
  EXPECT_FLOAT_EQ(stats.running_mean[0], 1.0f);
  EXPECT_FLOAT_EQ(stats.running_var[0], 4.0f);
}

TEST(BatchNorm, EmptyBatchRejected) {
  BatchNormStats stats{Tensor::zeros({1}), Tensor::full({1}, 1.0f)};
  EXPECT_THROW(batchnorm2d(Tensor::zeros({0, 1, 2, 2}), Tensor::full({1}, 1.0f), Tensor::zeros({1}), stats,
                           NormMode::train),
               std::invalid_argument);
}

TEST(CrossEntropy, UniformLogits) {
  const std::vector<int> labels{0, 3};
  const Tensor loss = cross_entropy(Tensor::zeros({2, 4}), labels);
  EXPECT_NEAR(loss.item(), std::log(4.0), 1e-6);
}

TEST(CrossEntropy, LabelOutOfRange) {
  const std::vector<int> labels{4};
  EXPECT_THROW(cross_entropy(Tensor::zeros({1, 4}), labels), std::out_of_range);
}

TEST(Softmax, RowsSumToOne) {
  const std::vector<float> logits{1, 2, 3, -1, 0, 1};
  const auto p = softmax_rows(logits, 2, 3, 2.0f);
  EXPECT_NEAR(p[0] + p[1] + p[2], 1.0, 1e-6);
  EXPECT_NEAR(p[3] + p[4] + p[5], 1.0, 1e-6);
  EXPECT_NEAR(p[0], p[3], 1e-7);
}

TEST(GlobalAvgPool, Means) {
  const Tensor y = global_avg_pool(Tensor({1, 2, 1, 2}, {1, 3, 2, 6}));
  EXPECT_EQ(y.shape(), (Shape{1, 2}));
  EXPECT_FLOAT_EQ(y[0], 2.0f);
  EXPECT_FLOAT_EQ(y[1], 4.0f);
}

class GradCheck : public ::testing::TestWithParam<std::string> {};

TEST_P(GradCheck, MatchesCentralDifferences) {
  std::mt19937_64 rng(1234);
  for (int trial = 0; trial < 10; ++trial) {
    const auto problem = testing::make_problem(GetParam(), rng);
    const auto result = testing::check_gradients(problem);
    EXPECT_GT(result.evaluations, 0u);
    EXPECT_LT(result.rel_error, 1e-3) << GetParam() << " trial " << trial;
  }
}

INSTANTIATE_TEST_SUITE_P(AllOps, GradCheck, ::testing::ValuesIn(testing::gradcheck_ops()),
                         [](const auto &info) { return info.param; });

}  // namespace
}  // namespace bwrf
