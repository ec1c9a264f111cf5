#include <gtest/gtest.h>

#include <cmath>

#include "rockres/errors.hpp"
#include "rockres/ops.hpp"
#include "test_util.hpp"

namespace rockres {
namespace {

using testing::random_tensor;
using testing::tensor;

// Direct sliding-window sum; the reference for conv2d.
NDArray<double> naive_conv(const NDArray<double>& x, const NDArray<double>& w, int stride, int pad) {
  const auto n = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const auto cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const auto oh = (h + 2 * pad - kh) / stride + 1, ow = (wd + 2 * pad - kw) / stride + 1;
  NDArray<double> out({n, cout, oh, ow});
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t o = 0; o < cout; ++o)
      for (std::int64_t i = 0; i < oh; ++i)
        for (std::int64_t j = 0; j < ow; ++j) {
          double s = 0;
          for (std::int64_t c = 0; c < cin; ++c)
            for (std::int64_t u = 0; u < kh; ++u)
              for (std::int64_t v = 0; v < kw; ++v) {
                const auto y = i * stride - pad + u, xx = j * stride - pad + v;
                if (y < 0 || y >= h || xx < 0 || xx >= wd) continue;
                s += x[((b * cin + c) * h + y) * wd + xx] * w[((o * cin + c) * kh + u) * kw + v];
              }
          out[((b * cout + o) * oh + i) * ow + j] = s;
        }
  return out;
}

TEST(Conv2d, AllOnesPaddedGivesNeighbourCounts) {
  auto x = Tensor<float>(NDArray<float>({1, 1, 4, 4}, 1.f));
  auto w = Tensor<float>(NDArray<float>({1, 1, 3, 3}, 1.f));
  const auto y = conv2d(x, w, Tensor<float>(), 1, 1);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 4, 4}));
  const std::vector<float> expected{4, 6, 6, 4, 6, 9, 9, 6, 6, 9, 9, 6, 4, 6, 6, 4};
  EXPECT_EQ(y.value().vec(), expected);
}

TEST(Conv2d, UnitPointwiseKernelIsIdentity) {
  auto x = random_tensor<float>({2, 1, 3, 5}, 1);
  auto w = Tensor<float>(NDArray<float>({1, 1, 1, 1}, 1.f));
  EXPECT_EQ(conv2d(x, w, Tensor<float>(), 1, 0).value(), x.value());
}

TEST(Conv2d, StrideTwoShape) {
  auto x = random_tensor<float>({1, 1, 4, 4}, 2);
  auto w = random_tensor<float>({1, 1, 3, 3}, 3);
  EXPECT_EQ(conv2d(x, w, Tensor<float>(), 2, 1).shape(), (Shape{1, 1, 2, 2}));
}

TEST(Conv2d, MatchesNaiveLoop) {
  for (int stride : {1, 2}) {
    auto x = random_tensor<double>({1, 2, 5, 5}, 10 + stride);
    auto w = random_tensor<double>({3, 2, 3, 3}, 20 + stride);
    const auto ref = naive_conv(x.value(), w.value(), stride, 1);
    const auto got = conv2d(x, w, Tensor<double>(), stride, 1).value();
    ASSERT_EQ(got.shape(), ref.shape());
    for (std::int64_t i = 0; i < ref.numel(); ++i) EXPECT_NEAR(got[i], ref[i], 1e-5);
    // The float path against the same oracle.
    const auto gotf = conv2d(Tensor<float>(x.value().cast<float>()), Tensor<float>(w.value().cast<float>()),
                             Tensor<float>(), stride, 1)
                          .value();
    for (std::int64_t i = 0; i < ref.numel(); ++i) EXPECT_NEAR(gotf[i], ref[i], 1e-5);
  }
}

TEST(Conv2d, BiasIsAddedPerChannel) {
  auto x = random_tensor<double>({1, 2, 4, 4}, 4);
  auto w = random_tensor<double>({3, 2, 3, 3}, 5);
  auto b = tensor<double>({3}, {1.0, -2.0, 0.5});
  const auto with = conv2d(x, w, b, 1, 1).value();
  const auto without = conv2d(x, w, Tensor<double>(), 1, 1).value();
  for (std::int64_t i = 0; i < with.numel(); ++i) EXPECT_NEAR(with[i] - without[i], b.value()[i / 16], 1e-12);
}

TEST(Conv2d, ChannelMismatchIsShapeError) {
  auto x = random_tensor<float>({1, 2, 4, 4}, 1);
  auto w = random_tensor<float>({1, 3, 3, 3}, 2);
  EXPECT_THROW(conv2d(x, w, Tensor<float>(), 1, 1), ShapeError);
}

TEST(Linear, Examples) {
  auto x = tensor<float>({1, 2}, {1, 2});
  auto w = tensor<float>({2, 2}, {1, 1, 0, 1});
  auto b = tensor<float>({2}, {0, 0});
  EXPECT_EQ(linear(x, w, b).value().vec(), (std::vector<float>{3, 2}));

  auto eye = tensor<float>({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  auto in = random_tensor<float>({4, 3}, 7);
  EXPECT_EQ(linear(in, eye, Tensor<float>(NDArray<float>({3}))).value(), in.value());
}

TEST(Linear, DimensionMismatchIsShapeError) {
  EXPECT_THROW(linear(random_tensor<float>({2, 3}, 1), random_tensor<float>({4, 2}, 2), random_tensor<float>({4}, 3)),
               ShapeError);
}

TEST(Activations, Relu) {
  auto x = tensor<double>({3}, {-1.0, 2.5, -3.0}, true);
  const auto y = relu(x);
  EXPECT_EQ(y.value().vec(), (std::vector<double>{0.0, 2.5, 0.0}));
  backward(sum(y));
  EXPECT_EQ(x.grad().vec(), (std::vector<double>{0.0, 1.0, 0.0}));
}

TEST(Activations, GeluFormula) {
  auto x = tensor<double>({3}, {0.0, 1.0, 20.0});
  const auto y = gelu(x).value();
  EXPECT_EQ(y[0], 0.0);
  const double k = std::sqrt(2.0 / M_PI);
  EXPECT_NEAR(y[1], 0.5 * (1.0 + std::tanh(k * (1.0 + 0.044715))), 1e-12);
  EXPECT_NEAR(y[1], 0.8412, 1e-3);
  EXPECT_NEAR(y[2] / 20.0, 1.0, 1e-6);
}

TEST(BatchNorm, TrainModeStandardizes) {
  auto x = random_tensor<double>({4, 3, 5, 5}, 11, -3.0, 5.0);
  BatchNormState<double> st(3);
  const auto y = batch_norm2d(x, Tensor<double>(NDArray<double>({3}, 1.0)), Tensor<double>(NDArray<double>({3}, 0.0)),
                              st, Mode::train)
                     .value();
  for (int c = 0; c < 3; ++c) {
    double m = 0, v = 0;
    for (int n = 0; n < 4; ++n)
      for (int i = 0; i < 25; ++i) m += y[(n * 3 + c) * 25 + i];
    m /= 100;
    for (int n = 0; n < 4; ++n)
      for (int i = 0; i < 25; ++i) v += std::pow(y[(n * 3 + c) * 25 + i] - m, 2);
    v /= 100;
    EXPECT_LE(std::fabs(m), 1e-5);
    EXPECT_NEAR(v, 1.0, 1e-3);
  }
}

TEST(BatchNorm, AffineAndRunningStats) {
  auto x = random_tensor<double>({2, 1, 3, 3}, 12);
  BatchNormState<double> st(1);
  const auto y = batch_norm2d(x, tensor<double>({1}, {2.0}), tensor<double>({1}, {3.0}), st, Mode::train).value();
  double m = 0, v = 0;
  for (double e : y.data()) m += e;
  m /= 18;
  for (double e : y.data()) v += (e - m) * (e - m);
  EXPECT_NEAR(m, 3.0, 1e-5);
  EXPECT_NEAR(std::sqrt(v / 18), 2.0, 1e-3);

  // Running stats: momentum 0.1 toward the batch mean and unbiased variance.
  double bm = 0, bv = 0;
  for (double e : x.value().data()) bm += e;
  bm /= 18;
  for (double e : x.value().data()) bv += (e - bm) * (e - bm);
  bv /= 17;
  EXPECT_NEAR(st.running_mean[0], 0.1 * bm, 1e-12);
  EXPECT_NEAR(st.running_var[0], 0.9 + 0.1 * bv, 1e-12);
}

TEST(BatchNorm, EvalWithInitialStatsIsNearIdentity) {
  auto x = random_tensor<double>({2, 2, 3, 3}, 13);
  BatchNormState<double> st(2);
  const auto y = batch_norm2d(x, Tensor<double>(NDArray<double>({2}, 1.0)), Tensor<double>(NDArray<double>({2}, 0.0)),
                              st, Mode::eval)
                     .value();
  for (std::int64_t i = 0; i < y.numel(); ++i) EXPECT_NEAR(y[i], x.value()[i] / std::sqrt(1.0 + 1e-5), 1e-12);
}

TEST(BatchNorm, SingleValuePerChannelInTrainModeIsAnError) {
  BatchNormState<float> st(2);
  EXPECT_THROW(batch_norm2d(random_tensor<float>({1, 2, 1, 1}, 1), Tensor<float>(NDArray<float>({2}, 1.f)),
                            Tensor<float>(NDArray<float>({2}, 0.f)), st, Mode::train),
               ShapeError);
}

TEST(LayerNorm, Examples) {
  auto g = Tensor<double>(NDArray<double>({2}, 1.0));
  auto b = Tensor<double>(NDArray<double>({2}, 0.0));
  const auto y = layer_norm(tensor<double>({1, 2}, {1.0, 3.0}), 1, g, b).value();
  EXPECT_NEAR(y[0], -1.0, 1e-4);
  EXPECT_NEAR(y[1], 1.0, 1e-4);
  const auto z = layer_norm(tensor<double>({1, 2}, {5.0, 5.0}), 1, g, b).value();
  EXPECT_EQ(z.vec(), (std::vector<double>{0.0, 0.0}));
}

TEST(LayerNorm, ChannelVariantNormalizesEachPosition) {
  auto x = random_tensor<double>({2, 4, 3, 3}, 14, -2.0, 3.0);
  const auto y = channel_layer_norm(x, Tensor<double>(NDArray<double>({4}, 1.0)),
                                    Tensor<double>(NDArray<double>({4}, 0.0)))
                     .value();
  for (int n = 0; n < 2; ++n)
    for (int p = 0; p < 9; ++p) {
      double m = 0;
      for (int c = 0; c < 4; ++c) m += y[(n * 4 + c) * 9 + p];
      EXPECT_NEAR(m / 4, 0.0, 1e-9);
    }
}

TEST(Softmax, Examples) {
  EXPECT_EQ(softmax(tensor<double>({1, 2}, {0.0, 0.0}), -1).value().vec(), (std::vector<double>{0.5, 0.5}));
  EXPECT_EQ(softmax(tensor<double>({1, 2}, {1000.0, 1000.0}), -1).value().vec(), (std::vector<double>{0.5, 0.5}));
  const auto y = softmax(tensor<double>({1, 2}, {0.0, std::log(3.0)}), -1).value();
  EXPECT_NEAR(y[0], 0.25, 1e-12);
  EXPECT_NEAR(y[1], 0.75, 1e-12);
}

TEST(Softmax, RowsSumToOneAndShiftInvariant) {
  auto x = random_tensor<float>({3, 7}, 15, -4.0, 4.0);
  NDArray<float> shifted = x.value();
  for (std::int64_t r = 0; r < 3; ++r)
    for (std::int64_t c = 0; c < 7; ++c) shifted[r * 7 + c] += static_cast<float>(r + 1) * 2.5f;
  const auto a = softmax(x, 1).value();
  const auto b = softmax(Tensor<float>(shifted), 1).value();
  for (int r = 0; r < 3; ++r) {
    double s = 0;
    for (int c = 0; c < 7; ++c) {
      s += a[r * 7 + c];
      EXPECT_NEAR(a[r * 7 + c], b[r * 7 + c], 1e-6);
    }
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
}

TEST(Pool, Examples) {
  auto q = tensor<float>({1, 1, 2, 2}, {1, 2, 3, 4});
  EXPECT_EQ(pool2d(q, PoolKind::max, 2, 2, 0).value().vec(), (std::vector<float>{4}));
  EXPECT_EQ(pool2d(q, PoolKind::avg, 2, 2, 0).value().vec(), (std::vector<float>{2.5f}));
  const auto g = global_avg_pool(Tensor<float>(NDArray<float>({2, 3, 4, 5}, 5.f)));
  EXPECT_EQ(g.shape(), (Shape{2, 3, 1, 1}));
  for (float v : g.value().data()) EXPECT_EQ(v, 5.f);
}

TEST(Pool, StemMaxPoolShape) {
  EXPECT_EQ(pool2d(random_tensor<float>({1, 2, 112, 112}, 1), PoolKind::max, 3, 2, 1).shape(),
            (Shape{1, 2, 56, 56}));
}

TEST(Add, ExamplesAndGradient) {
  auto a = tensor<double>({2}, {1, 2}, true);
  auto b = tensor<double>({2}, {3, 4}, true);
  const auto y = add(a, b);
  EXPECT_EQ(y.value().vec(), (std::vector<double>{4, 6}));
  EXPECT_EQ(add(a, Tensor<double>(NDArray<double>({2}))).value(), a.value());
  backward(y, NDArray<double>({2}, {0.25, -1.5}));
  EXPECT_EQ(a.grad().vec(), (std::vector<double>{0.25, -1.5}));
  EXPECT_EQ(b.grad().vec(), (std::vector<double>{0.25, -1.5}));
}

TEST(Add, NoBroadcasting) {
  EXPECT_THROW(add(random_tensor<float>({2, 3}, 1), random_tensor<float>({1, 3}, 2)), ShapeError);
}

TEST(Backward, SquareAtThree) {
  auto x = tensor<double>({1}, {3.0}, true);
  backward(sum(mul(x, x)));
  EXPECT_EQ(x.grad()[0], 6.0);
}

TEST(Backward, RepeatedCallsAccumulate) {
  auto x = tensor<double>({1}, {3.0}, true);
  const auto loss = sum(mul(x, x));
  backward(loss);
  backward(loss);
  EXPECT_EQ(x.grad()[0], 12.0);
  x.zero_grad();
  EXPECT_EQ(x.grad()[0], 0.0);
}

TEST(Backward, DetachedAndUnusedTensorsGetZero) {
  auto x = tensor<double>({2}, {1.0, 2.0}, true);
  auto unused = tensor<double>({2}, {5.0, 6.0}, true);
  const auto d = x.detach();
  backward(sum(mul(d, d)));
  EXPECT_EQ(x.grad().vec(), (std::vector<double>{0.0, 0.0}));
  EXPECT_EQ(unused.grad().vec(), (std::vector<double>{0.0, 0.0}));
}

TEST(Backward, NonScalarIsAnError) {
  auto x = tensor<double>({2}, {1.0, 2.0}, true);
  EXPECT_THROW(backward(scale(x, 2.0)), ShapeError);
}

TEST(Backward, NoGradGuardRecordsNothing) {
  auto x = tensor<double>({2}, {1.0, 2.0}, true);
  NoGradGuard guard;
  const auto y = scale(x, 3.0);
  EXPECT_FALSE(y.requires_grad());
}

TEST(GradTape, VisitsSharedNodesOnce) {
  auto x = tensor<double>({2}, {1.0, -2.0}, true);
  const auto a = scale(x, 2.0);
  const auto b = add(a, a);   // a reached twice
  const auto c = mul(b, a);   // and a third time
  const auto loss = sum(c);
  const auto tape = GradTape<double>::record(loss);
  std::vector<Node<double>*> nodes = tape.nodes();
  std::sort(nodes.begin(), nodes.end());
  EXPECT_EQ(std::adjacent_find(nodes.begin(), nodes.end()), nodes.end());
  EXPECT_EQ(nodes.size(), 5u);  // x, a, b, c, loss
  backward(loss);
  // loss = sum(2a * a) = sum(8 x^2), d/dx = 16 x.
  EXPECT_EQ(x.grad().vec(), (std::vector<double>{16.0, -32.0}));
}

TEST(Numerics, DebugModeFailsFast) {
  set_check_numerics(true);
  EXPECT_THROW(scale(tensor<float>({1}, {1e30f}), 1e30), NumericError);
  set_check_numerics(false);
  EXPECT_NO_THROW(scale(tensor<float>({1}, {1e30f}), 1e30));
}

TEST(Determinism, ForwardBackwardIsBitReproducible) {
  auto run = [] {
    auto x = random_tensor<float>({2, 3, 6, 6}, 30, -1.0, 1.0, true);
    auto w = random_tensor<float>({4, 3, 3, 3}, 31, -1.0, 1.0, true);
    BatchNormState<float> st(4);
    const auto y = relu(batch_norm2d(conv2d(x, w, Tensor<float>(), 1, 1), Tensor<float>(NDArray<float>({4}, 1.f)),
                                     Tensor<float>(NDArray<float>({4}, 0.f)), st, Mode::train));
    backward(sum(y));
    return std::make_pair(y.value(), w.grad());
  };
  EXPECT_EQ(run(), run());
}

TEST(Matmul, BatchBroadcastAndTranspose) {
  auto a = tensor<double>({2, 1, 2}, {1, 2, 3, 4});
  auto b = tensor<double>({1, 3, 2}, {1, 0, 0, 1, 1, 1});
  const auto y = matmul(a, b, false, true).value();
  EXPECT_EQ(y.shape(), (Shape{2, 1, 3}));
  EXPECT_EQ(y.vec(), (std::vector<double>{1, 2, 3, 3, 4, 7}));
}

TEST(CrossEntropy, UniformLogits) {
  NDArray<double> z({2, 53}, 0.0);
  const std::int32_t labels[] = {0, 52};
  EXPECT_NEAR(cross_entropy(Tensor<double>(z), labels).item(), std::log(53.0), 1e-4);
}

TEST(CrossEntropy, ConfidentCorrectAndOutOfRange) {
  const std::int32_t labels[] = {1};
  EXPECT_LE(cross_entropy(tensor<double>({1, 3}, {0.0, 20.0, 0.0}), labels).item(), 1e-6);
  const std::int32_t bad[] = {3};
  EXPECT_THROW(cross_entropy(tensor<double>({1, 3}, {0.0, 0.0, 0.0}), bad), ConfigError);
}

}  // namespace
}  // namespace rockres
