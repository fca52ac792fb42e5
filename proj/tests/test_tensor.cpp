#include <gtest/gtest.h>

#include "bwrf/ops.hpp"
#include "bwrf/tensor.hpp"

namespace bwrf {
namespace {

TEST(Tensor, ShapeMustMatchValueCount) {
  EXPECT_THROW(Tensor({2, 3}, std::vector<float>(5)), ShapeError);
  Tensor t({2, 3}, std::vector<float>(6, 1.0f));
  EXPECT_EQ(t.numel(), 6);
  EXPECT_EQ(t.rank(), 2u);
}

TEST(Tensor, ItemRequiresSingleElement) {
  EXPECT_FLOAT_EQ(Tensor::scalar(2.5f).item(), 2.5f);
  EXPECT_THROW(Tensor::zeros({2}).item(), ShapeError);
}

TEST(Autodiff, SharedNodeAccumulatesBothPaths) {
  Tensor x({3}, {1.0f, -2.0f, 3.0f}, true);
  // f = sum(x*x + 3x) → df/dx = 2x + 3
  const Tensor f = sum(add(mul(x, x), scale(x, 3.0f)));
  backward(f);
  const auto g = x.grad();
  EXPECT_FLOAT_EQ(g[0], 5.0f);
  EXPECT_FLOAT_EQ(g[1], -1.0f);
  EXPECT_FLOAT_EQ(g[2], 9.0f);
}

TEST(Autodiff, LeafGradientsAccumulateAcrossBackwardCalls) {
  Tensor x({2}, {1.0f, 2.0f}, true);
  backward(sum(x));
  backward(sum(scale(x, 2.0f)));
  EXPECT_EQ(x.grad(), (std::vector<float>{3.0f, 3.0f}));
  x.zero_grad();
  EXPECT_FALSE(x.has_grad());
  EXPECT_EQ(x.grad(), (std::vector<float>{0.0f, 0.0f}));
}

TEST(Autodiff, NoGradGuardRecordsNothing) {
  Tensor x({2}, {1.0f, 2.0f}, true);
  Tensor y;
  {
    NoGradGuard guard;
    EXPECT_FALSE(grad_enabled());
    y = sum(mul(x, x));
  }
  EXPECT_TRUE(grad_enabled());
  EXPECT_TRUE(y.is_leaf());
  EXPECT_FALSE(y.requires_grad());
}

TEST(Autodiff, DetachBlocksGradient) {
  Tensor x({2}, {1.0f, 2.0f}, true);
  const Tensor d = detach(scale(x, 2.0f));
  EXPECT_TRUE(d.is_leaf());
  const Tensor f = sum(add(mul(d, x), x));
  backward(f);
  // only the direct paths: d + 1
  EXPECT_EQ(x.grad(), (std::vector<float>{3.0f, 5.0f}));
}

TEST(Autodiff, BackwardRejectsNonScalar) {
  Tensor x({2}, {1.0f, 2.0f}, true);
  EXPECT_THROW(backward(scale(x, 2.0f)), std::invalid_argument);
}

TEST(Autodiff, GraphSizeCountsOperationRecords) {
  Tensor x({2}, {1.0f, 2.0f}, true);
  const Tensor f = sum(mul(x, x));
  EXPECT_EQ(graph_size(f), 2u);
  const Tensor c = Tensor({2}, {1.0f, 1.0f});
  EXPECT_TRUE(sum(c).is_leaf());
}

TEST(Autodiff, DeepChainDoesNotRecurse) {
  Tensor x({1}, {1.0f}, true);
  Tensor h = x;
  for (int i = 0; i < 100000; ++i) h = add_scalar(h, 0.0f);
  backward(sum(h));
  EXPECT_FLOAT_EQ(x.grad()[0], 1.0f);
}

}  // namespace
}  // namespace bwrf
