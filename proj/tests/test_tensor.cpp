#include <gtest/gtest.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <limits>

#include "mscount/checkpoint.hpp"
#include "mscount/gradcheck.hpp"
#include "mscount/ops.hpp"
#include "mscount/optim.hpp"
#include "test_util.hpp"

using namespace mscount;
using mscount::testing::random_tensor;
using mscount::testing::TempDir;

namespace {

Tape no_grad() { return Tape::inference(); }

Tensor ramp(Shape s) {
  std::vector<double> v(s.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>(i);
  return Tensor(s, std::move(v));
}

// Direct summation over the zero-padded window.
Tensor reference_conv(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  const int oh = (xs.h + 2 * pad - ws.h) / stride + 1;
  const int ow = (xs.w + 2 * pad - ws.w) / stride + 1;
  Tensor out(Shape{xs.n, ws.n, oh, ow});
  for (int n = 0; n < xs.n; ++n)
    for (int o = 0; o < ws.n; ++o)
      for (int y = 0; y < oh; ++y)
        for (int xx = 0; xx < ow; ++xx) {
          double acc = b.at(0, o, 0, 0);
          for (int c = 0; c < xs.c; ++c)
            for (int ky = 0; ky < ws.h; ++ky)
              for (int kx = 0; kx < ws.w; ++kx) {
                const int iy = y * stride - pad + ky;
                const int ix = xx * stride - pad + kx;
                if (iy < 0 || iy >= xs.h || ix < 0 || ix >= xs.w) continue;
                acc += w.at(o, c, ky, kx) * x.at(n, c, iy, ix);
              }
          out.at(n, o, y, xx) = acc;
        }
  return out;
}

}  // namespace

TEST(Tensor, RejectsBadConstruction) {
  EXPECT_THROW(Tensor(Shape{1, 1, 2, 2}, std::vector<double>(3)), std::invalid_argument);
  EXPECT_THROW(Tensor(Shape{1, 1, 1, 1}, std::vector<double>{std::nan("")}),
               std::invalid_argument);
  EXPECT_THROW(Tensor(Shape{1, -1, 1, 1}), std::invalid_argument);
}

TEST(Tensor, HandlesShareStorageAndCloneDoesNot) {
  Tensor a(Shape{1, 1, 1, 2}, 1.0);
  Tensor b = a;
  b.data()[0] = 5.0;
  EXPECT_EQ(a.data()[0], 5.0);
  Tensor c = a.clone();
  c.data()[0] = 7.0;
  EXPECT_EQ(a.data()[0], 5.0);
  EXPECT_FALSE(c.same_storage(a));
}

TEST(Tape, ReplaysInReverseOrder) {
  Tape tape;
  std::vector<int> order;
  for (int i = 0; i < 4; ++i) tape.record([&order, i] { order.push_back(i); });
  Tensor loss = Tensor::scalar(0.0, true);
  tape.backward(loss);
  EXPECT_EQ(order, (std::vector<int>{3, 2, 1, 0}));
  EXPECT_EQ(tape.size(), 0u);
}

TEST(Tape, BackwardRejectsNonScalarLoss) {
  Tape tape;
  Tensor t(Shape{1, 1, 1, 2}, 0.0, true);
  EXPECT_THROW(tape.backward(t), std::invalid_argument);
}

TEST(Tape, InferenceTapeRecordsNothing) {
  Tape tape = Tape::inference();
  Rng rng(3);
  Tensor x = random_tensor(Shape{1, 1, 2, 2}, rng, -1, 1, true);
  Tensor y = ops::relu(tape, x);
  EXPECT_EQ(tape.size(), 0u);
  EXPECT_FALSE(y.requires_grad());
}

TEST(Tape, EveryReachableLeafGetsGradient) {
  Rng rng(5);
  Tensor a = random_tensor(Shape{1, 2, 3, 3}, rng, -1, 1, true);
  Tensor b = random_tensor(Shape{1, 1, 3, 3}, rng, -1, 1, true);
  Tape tape;
  Tensor loss = ops::sum(tape, ops::concat_channels(tape, {ops::relu(tape, a), b}));
  tape.backward(loss);
  EXPECT_TRUE(a.has_grad());
  EXPECT_TRUE(b.has_grad());
}

TEST(Conv2d, IdentityKernel) {
  Rng rng(1);
  Tensor x = random_tensor(Shape{2, 1, 4, 5}, rng);
  Tensor w(Shape{1, 1, 1, 1}, 1.0);
  Tensor b(Shape{1, 1, 1, 1}, 0.0);
  Tape t = no_grad();
  Tensor y = ops::conv2d(t, x, w, b);
  ASSERT_EQ(y.shape(), x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(y.data()[i], x.data()[i]);
}

TEST(Conv2d, ZeroInputGivesBias) {
  Rng rng(2);
  Tensor x(Shape{1, 3, 5, 5}, 0.0);
  Tensor w = random_tensor(Shape{2, 3, 3, 3}, rng);
  Tensor b(Shape{1, 2, 1, 1}, std::vector<double>{0.25, -1.5});
  Tape t = no_grad();
  Tensor y = ops::conv2d(t, x, w, b, 1, 1);
  for (int o = 0; o < 2; ++o)
    for (int i = 0; i < 5; ++i)
      for (int j = 0; j < 5; ++j) EXPECT_EQ(y.at(0, o, i, j), b.at(0, o, 0, 0));
}

TEST(Conv2d, HandWorkedPaddedWindow) {
  Tensor x(Shape{1, 1, 2, 2}, std::vector<double>{1, 2, 3, 4});
  Tensor w(Shape{1, 1, 3, 3}, 1.0);
  Tensor b(Shape{1, 1, 1, 1}, 0.0);
  Tape t = no_grad();
  Tensor y = ops::conv2d(t, x, w, b, 1, 1);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 2, 2}));
  for (double v : y.data()) EXPECT_EQ(v, 10.0);
}

TEST(Conv2d, MatchesDirectSummation) {
  Rng rng(11);
  struct Case { Shape x; int out_c, k, stride, pad; };
  const std::vector<Case> cases = {
      {{2, 3, 7, 6}, 4, 3, 1, 1}, {{1, 2, 9, 9}, 3, 5, 2, 2}, {{1, 4, 8, 8}, 2, 7, 1, 3},
      {{2, 2, 6, 5}, 3, 1, 1, 0}, {{1, 1, 5, 7}, 2, 3, 2, 0}, {{1, 3, 4, 4}, 1, 3, 3, 1},
  };
  for (const auto& c : cases) {
    Tensor x = random_tensor(c.x, rng);
    Tensor w = random_tensor(Shape{c.out_c, c.x.c, c.k, c.k}, rng);
    Tensor b = random_tensor(Shape{1, c.out_c, 1, 1}, rng);
    Tape t = no_grad();
    Tensor y = ops::conv2d(t, x, w, b, c.stride, c.pad);
    Tensor ref = reference_conv(x, w, b, c.stride, c.pad);
    ASSERT_EQ(y.shape(), ref.shape());
    for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y.data()[i], ref.data()[i], 1e-12);
  }
}

TEST(Conv2d, SamePaddingPreservesSizeForOddKernels) {
  Rng rng(4);
  for (int k : {1, 3, 5, 7}) {
    Tensor x = random_tensor(Shape{1, 2, 9, 6}, rng);
    Tensor w = random_tensor(Shape{3, 2, k, k}, rng);
    Tensor b(Shape{1, 3, 1, 1});
    Tape t = no_grad();
    EXPECT_EQ(ops::conv2d(t, x, w, b, 1, (k - 1) / 2).shape(), (Shape{1, 3, 9, 6}));
  }
}

TEST(Conv2d, ShapeMismatchNamesBothShapes) {
  Tensor x(Shape{1, 3, 4, 4});
  Tensor w(Shape{2, 2, 3, 3});
  Tensor b(Shape{1, 2, 1, 1});
  Tape t = no_grad();
  try {
    ops::conv2d(t, x, w, b, 1, 1);
    FAIL() << "expected throw";
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("(1,3,4,4)"), std::string::npos) << msg;
    EXPECT_NE(msg.find("(2,2,3,3)"), std::string::npos) << msg;
  }
}

TEST(MaxPool, WindowMaxima) {
  Tape t = no_grad();
  Tensor single(Shape{1, 1, 2, 2}, std::vector<double>{1, 2, 3, 4});
  EXPECT_EQ(ops::max_pool_2x2(t, single).item(), 4.0);

  Tensor y = ops::max_pool_2x2(t, ramp(Shape{1, 1, 4, 4}));
  EXPECT_EQ(std::vector<double>(y.data().begin(), y.data().end()),
            (std::vector<double>{5, 7, 13, 15}));

  Tensor flat(Shape{1, 2, 4, 6}, 0.5);
  Tensor fy = ops::max_pool_2x2(t, flat);
  EXPECT_EQ(fy.shape(), (Shape{1, 2, 2, 3}));
  for (double v : fy.data()) EXPECT_EQ(v, 0.5);
}

TEST(MaxPool, TieGradientGoesToFirstInScanOrder) {
  Tensor x(Shape{1, 1, 2, 2}, 1.0, true);
  Tape tape;
  Tensor loss = ops::sum(tape, ops::max_pool_2x2(tape, x));
  tape.backward(loss);
  EXPECT_EQ(std::vector<double>(x.grad().begin(), x.grad().end()),
            (std::vector<double>{1, 0, 0, 0}));
}

TEST(MaxPool, RejectsOddSize) {
  Tape t = no_grad();
  EXPECT_THROW(ops::max_pool_2x2(t, Tensor(Shape{1, 1, 3, 4})), std::invalid_argument);
}

TEST(AdaptiveMaxPool, GlobalAndIdentity) {
  Rng rng(8);
  Tensor x = random_tensor(Shape{2, 3, 5, 5}, rng);
  Tape t = no_grad();
  Tensor g = ops::adaptive_max_pool(t, x, 1);
  for (int n = 0; n < 2; ++n)
    for (int c = 0; c < 3; ++c) {
      double m = -1e300;
      for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 5; ++j) m = std::max(m, x.at(n, c, i, j));
      EXPECT_EQ(g.at(n, c, 0, 0), m);
    }
  Tensor id = ops::adaptive_max_pool(t, x, 5);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(id.data()[i], x.data()[i]);
}

TEST(AdaptiveMaxPool, MatchesExhaustiveBinScan) {
  Rng rng(9);
  for (int trial = 0; trial < 30; ++trial) {
    const int h = static_cast<int>(rng.uniform_int(1, 9));
    const int w = static_cast<int>(rng.uniform_int(1, 9));
    const int k = static_cast<int>(rng.uniform_int(1, std::min(h, w)));
    Tensor x = trial == 0 ? ramp(Shape{1, 1, 4, 4}) : random_tensor(Shape{1, 2, h, w}, rng);
    const int kk = trial == 0 ? 3 : k;
    const Shape& s = x.shape();
    Tape t = no_grad();
    Tensor y = ops::adaptive_max_pool(t, x, kk);
    // Every cell must fall in exactly one bin.
    std::vector<int> hits(s.plane(), 0);
    for (int c = 0; c < s.c; ++c)
      for (int bi = 0; bi < kk; ++bi)
        for (int bj = 0; bj < kk; ++bj) {
          double m = -1e300;
          for (int i = bi * s.h / kk; i < (bi + 1) * s.h / kk; ++i)
            for (int j = bj * s.w / kk; j < (bj + 1) * s.w / kk; ++j) {
              m = std::max(m, x.at(0, c, i, j));
              if (c == 0) ++hits[static_cast<std::size_t>(i) * s.w + j];
            }
          EXPECT_EQ(y.at(0, c, bi, bj), m);
        }
    for (int h1 : hits) EXPECT_EQ(h1, 1);
  }
}

TEST(AdaptiveMaxPool, RampWithThreeBins) {
  Tape t = no_grad();
  Tensor y = ops::adaptive_max_pool(t, ramp(Shape{1, 1, 4, 4}), 3);
  // Rows and columns split as {0}, {1}, {2, 3}.
  EXPECT_EQ(std::vector<double>(y.data().begin(), y.data().end()),
            (std::vector<double>{0, 1, 3, 4, 5, 7, 12, 13, 15}));
}

TEST(AdaptiveMaxPool, RejectsTooManyBins) {
  Tape t = no_grad();
  EXPECT_THROW(ops::adaptive_max_pool(t, Tensor(Shape{1, 1, 4, 5}), 5), std::invalid_argument);
}

TEST(BilinearUpsample, ConstantAndIdentity) {
  Tape t = no_grad();
  Tensor one(Shape{1, 2, 1, 1}, std::vector<double>{0.3, -2.0});
  Tensor y = ops::bilinear_upsample(t, one, 4, 3);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 3; ++j) {
      EXPECT_EQ(y.at(0, 0, i, j), 0.3);
      EXPECT_EQ(y.at(0, 1, i, j), -2.0);
    }
  Rng rng(2);
  Tensor x = random_tensor(Shape{1, 1, 3, 4}, rng);
  Tensor same = ops::bilinear_upsample(t, x, 3, 4);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_DOUBLE_EQ(same.data()[i], x.data()[i]);
}

TEST(BilinearUpsample, MatchesScalarFormula) {
  auto sample = [](const Tensor& x, int i, int j, int oh, int ow) {
    const Shape& s = x.shape();
    const double sy = std::clamp((i + 0.5) * s.h / oh - 0.5, 0.0, s.h - 1.0);
    const double sx = std::clamp((j + 0.5) * s.w / ow - 0.5, 0.0, s.w - 1.0);
    const int y0 = static_cast<int>(std::floor(sy));
    const int x0 = static_cast<int>(std::floor(sx));
    const int y1 = std::min(y0 + 1, s.h - 1);
    const int x1 = std::min(x0 + 1, s.w - 1);
    const double fy = sy - y0, fx = sx - x0;
    return (1 - fy) * ((1 - fx) * x.at(0, 0, y0, x0) + fx * x.at(0, 0, y0, x1)) +
           fy * ((1 - fx) * x.at(0, 0, y1, x0) + fx * x.at(0, 0, y1, x1));
  };
  Tape t = no_grad();
  Tensor x(Shape{1, 1, 2, 2}, std::vector<double>{0, 1, 0, 1});
  Tensor y = ops::bilinear_upsample(t, x, 4, 4);
  for (int i = 0; i < 4; ++i) {
    EXPECT_NEAR(y.at(0, 0, i, 0), 0.0, 1e-15);
    EXPECT_NEAR(y.at(0, 0, i, 1), 0.25, 1e-15);
    EXPECT_NEAR(y.at(0, 0, i, 2), 0.75, 1e-15);
    EXPECT_NEAR(y.at(0, 0, i, 3), 1.0, 1e-15);
  }
  Rng rng(6);
  for (auto [h, w, oh, ow] : {std::array{3, 2, 7, 5}, std::array{2, 3, 6, 6}, std::array{1, 3, 4, 8}}) {
    Tensor r = random_tensor(Shape{1, 1, h, w}, rng);
    Tensor ry = ops::bilinear_upsample(t, r, oh, ow);
    for (int i = 0; i < oh; ++i)
      for (int j = 0; j < ow; ++j) EXPECT_NEAR(ry.at(0, 0, i, j), sample(r, i, j, oh, ow), 1e-14);
  }
}

TEST(BilinearUpsample, RejectsDownscale) {
  Tape t = no_grad();
  EXPECT_THROW(ops::bilinear_upsample(t, Tensor(Shape{1, 1, 4, 4}), 3, 4), std::invalid_argument);
}

TEST(Concat, SingleInputIsIdentityAndSlicesRecoverParts) {
  Rng rng(3);
  Tensor a = random_tensor(Shape{2, 3, 4, 4}, rng);
  Tensor b = random_tensor(Shape{2, 1, 4, 4}, rng);
  Tensor c = random_tensor(Shape{2, 2, 4, 4}, rng);
  Tape t = no_grad();
  Tensor only = ops::concat_channels(t, {a});
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(only.data()[i], a.data()[i]);

  Tensor abc = ops::concat_channels(t, {a, b, c});
  EXPECT_EQ(abc.shape(), (Shape{2, 6, 4, 4}));
  int offset = 0;
  for (const Tensor& part : {a, b, c}) {
    Tensor back = ops::slice_channels(t, abc, offset, part.shape().c);
    ASSERT_EQ(back.shape(), part.shape());
    for (std::size_t i = 0; i < part.size(); ++i) EXPECT_EQ(back.data()[i], part.data()[i]);
    offset += part.shape().c;
  }
}

TEST(Concat, PyramidChannelArithmetic) {
  Tape t = no_grad();
  std::vector<Tensor> parts = {Tensor(Shape{1, 256, 1, 1})};
  for (int i = 0; i < 4; ++i) parts.emplace_back(Shape{1, 512, 1, 1});
  EXPECT_EQ(ops::concat_channels(t, parts).shape().c, 2304);
}

TEST(Concat, RejectsSpatialMismatch) {
  Tape t = no_grad();
  EXPECT_THROW(ops::concat_channels(t, {Tensor(Shape{1, 1, 4, 4}), Tensor(Shape{1, 1, 4, 3})}),
               std::invalid_argument);
}

TEST(Concat, GradientOfSumSplitsByChannel) {
  Rng rng(7);
  Tensor a = random_tensor(Shape{1, 2, 3, 3}, rng, -1, 1, true);
  Tensor b = random_tensor(Shape{1, 3, 3, 3}, rng, -1, 1, true);
  Tape tape;
  Tensor loss = ops::sum(tape, ops::concat_channels(tape, {a, b}));
  tape.backward(loss);
  for (double g : a.grad()) EXPECT_EQ(g, 1.0);
  for (double g : b.grad()) EXPECT_EQ(g, 1.0);
}

TEST(Activations, ReluAndSigmoidValues) {
  Tape t = no_grad();
  Tensor r = ops::relu(t, Tensor(Shape{1, 1, 1, 2}, std::vector<double>{-1, 2}));
  EXPECT_EQ(r.data()[0], 0.0);
  EXPECT_EQ(r.data()[1], 2.0);

  Tensor s = ops::sigmoid(t, Tensor(Shape{1, 1, 1, 3}, std::vector<double>{0, 20, -20}));
  EXPECT_EQ(s.data()[0], 0.5);
  EXPECT_NEAR(s.data()[1], 1.0, 1e-8);
  EXPECT_NEAR(s.data()[2], 0.0, 1e-8);
  EXPECT_NEAR(s.data()[1], 1.0 / (1.0 + std::exp(-20.0)), 1e-15);
}

TEST(Activations, RangesHoldForExtremeInputs) {
  Tape t = no_grad();
  Rng rng(12);
  Tensor x = random_tensor(Shape{1, 1, 8, 8}, rng, -1000, 1000);
  x.data()[0] = 800.0;
  x.data()[1] = -800.0;
  const Tensor s = ops::sigmoid(t, x);
  const Tensor r = ops::relu(t, x);
  for (double v : s.data()) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
  for (double v : r.data()) EXPECT_GE(v, 0.0);
}

TEST(SumSquaredError, Fixtures) {
  Tape t = no_grad();
  Rng rng(13);
  Tensor a = random_tensor(Shape{1, 1, 3, 3}, rng);
  EXPECT_EQ(ops::sum_squared_error(t, a, a).item(), 0.0);
  EXPECT_EQ(ops::sum_squared_error(t, Tensor(Shape{1, 1, 1, 1}, 1.0),
                                   Tensor(Shape{1, 1, 1, 1}, 0.0)).item(), 1.0);
  Tensor b = random_tensor(Shape{1, 1, 3, 3}, rng);
  double expect = 0.0;
  for (std::size_t i = 0; i < 9; ++i) {
    const double d = a.data()[i] - b.data()[i];
    expect += d * d;
  }
  EXPECT_NEAR(ops::sum_squared_error(t, a, b).item(), expect, 1e-15);
  EXPECT_THROW(ops::sum_squared_error(t, a, Tensor(Shape{1, 1, 3, 2})), std::invalid_argument);
}

TEST(SumSquaredError, GradientIsTwiceResidual) {
  Rng rng(14);
  Tensor p = random_tensor(Shape{1, 1, 3, 3}, rng, -1, 1, true);
  Tensor q = random_tensor(Shape{1, 1, 3, 3}, rng);
  Tape tape;
  Tensor loss = ops::sum_squared_error(tape, p, q);
  tape.backward(loss);
  for (std::size_t i = 0; i < 9; ++i) {
    EXPECT_NEAR(p.grad()[i], 2.0 * (p.data()[i] - q.data()[i]), 1e-15);
  }
}

TEST(GradientCheck, LinearFunctionIsExact) {
  Rng rng(15);
  Tensor x = random_tensor(Shape{1, 2, 3, 3}, rng, -1, 1, true);
  auto r = gradient_check([](Tape& t, const Tensor& in) { return ops::scale(t, ops::sum(t, in), 3.5); },
                          x, 1e-5);
  EXPECT_LT(r.max_relative_error, 1e-9);
  EXPECT_EQ(r.checked, x.size());
}

TEST(GradientCheck, ConvReluSumChain) {
  Rng rng(16);
  Tensor x = random_tensor(Shape{2, 3, 6, 6}, rng, -1, 1, true);
  Tensor w = random_tensor(Shape{2, 3, 3, 3}, rng, -0.5, 0.5, true);
  Tensor b = random_tensor(Shape{1, 2, 1, 1}, rng, -0.1, 0.1, true);
  auto f = [&](Tape& t) { return ops::sum(t, ops::relu(t, ops::conv2d(t, x, w, b, 1, 1))); };
  GradCheckOptions opts;
  opts.skip_kinks = true;
  for (const Tensor& p : {x, w, b}) EXPECT_LT(gradient_check(f, p, opts).max_relative_error, 1e-4);
}

TEST(GradientCheck, RejectsNonScalarAndBadEpsilon) {
  Tensor x(Shape{1, 1, 2, 2}, 0.5, true);
  auto id = [](Tape& t, const Tensor& in) { return ops::relu(t, in); };
  EXPECT_THROW(gradient_check(id, x, 1e-5), std::invalid_argument);
  auto s = [](Tape& t, const Tensor& in) { return ops::sum(t, in); };
  EXPECT_THROW(gradient_check(s, x, 1e-2), std::invalid_argument);
  EXPECT_THROW(gradient_check(s, x, 1e-9), std::invalid_argument);
}

TEST(Sgd, PlainDescentAndZeroGrad) {
  Tensor p(Shape{1, 1, 1, 3}, std::vector<double>{1, 2, 3}, true);
  auto g = p.grad();
  g[0] = 0.5, g[1] = -1, g[2] = 0;
  SgdMomentum opt(1.0, 0.0);
  std::vector<Tensor> params{p};
  opt.step(params);
  EXPECT_EQ(std::vector<double>(p.data().begin(), p.data().end()),
            (std::vector<double>{0.5, 3, 3}));
  EXPECT_FALSE(p.has_grad());

  Tensor q(Shape{1, 1, 1, 2}, std::vector<double>{4, -4}, true);
  q.grad();
  std::vector<Tensor> qs{q};
  SgdMomentum(0.1, 0.9).step(qs);
  EXPECT_EQ(q.data()[0], 4.0);
  EXPECT_EQ(q.data()[1], -4.0);
}

TEST(Sgd, MomentumRecurrenceOnQuadratic) {
  // f(x) = x^2 / 2, grad = x.
  const double lr = 0.1, m = 0.9;
  Tensor x = Tensor::scalar(1.0, true);
  SgdMomentum opt(lr, m);
  std::vector<Tensor> params{x};
  double xr = 1.0, vr = 0.0;
  for (int step = 0; step < 2; ++step) {
    Tape tape;
    Tensor loss = ops::scale(tape, ops::sum_squared_error(tape, x, Tensor::scalar(0.0)), 0.5);
    tape.backward(loss);
    opt.step(params);
    vr = m * vr + xr;
    xr -= lr * vr;
    EXPECT_DOUBLE_EQ(x.item(), xr);
  }
  EXPECT_DOUBLE_EQ(xr, 0.9 - 0.1 * (0.9 * 1.0 + 0.9));
}

TEST(Sgd, StepBeforeBackwardIsRejected) {
  Tensor p(Shape{1, 1, 1, 1}, 1.0, true);
  std::vector<Tensor> params{p};
  SgdMomentum opt(0.1, 0.9);
  EXPECT_THROW(opt.step(params), std::logic_error);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  TempDir dir("ckpt");
  Rng rng(17);
  NamedTensors saved = {
      {"a.weight", random_tensor(Shape{2, 3, 3, 3}, rng, -1e3, 1e3)},
      {"b.bias", Tensor(Shape{1, 4, 1, 1},
                        std::vector<double>{-0.0, std::numeric_limits<double>::denorm_min(),
                                            std::numeric_limits<double>::max(), 1.0 / 3.0})},
      {"empty", Tensor(Shape{0, 1, 1, 1})},
  };
  save_checkpoint(dir / "m.pkc", saved);
  NamedTensors loaded = load_checkpoint(dir / "m.pkc");
  ASSERT_EQ(loaded.size(), saved.size());
  for (std::size_t i = 0; i < saved.size(); ++i) {
    EXPECT_EQ(loaded[i].first, saved[i].first);
    ASSERT_EQ(loaded[i].second.shape(), saved[i].second.shape());
    for (std::size_t j = 0; j < saved[i].second.size(); ++j) {
      EXPECT_EQ(std::bit_cast<std::uint64_t>(loaded[i].second.data()[j]),
                std::bit_cast<std::uint64_t>(saved[i].second.data()[j]));
    }
  }
}

TEST(Checkpoint, LayoutIsLittleEndian) {
  TempDir dir("ckpt_layout");
  save_checkpoint(dir / "x.pkc", {{"w", Tensor(Shape{1, 1, 1, 1}, 1.0)}});
  std::ifstream in(dir / "x.pkc", std::ios::binary);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), {});
  const std::vector<unsigned char> expect = {
      'P', 'K', 'C', '1', 1, 0, 0, 0, 'w', 4, 0, 0, 0,  // magic, name, rank
      1, 0, 0, 0, 0, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0, 0,   // n, c
      1, 0, 0, 0, 0, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0, 0,   // h, w
      0, 0, 0, 0, 0, 0, 0xF0, 0x3F,                      // 1.0
  };
  EXPECT_EQ(bytes, expect);
}

TEST(Checkpoint, RejectsCorruptFiles) {
  TempDir dir("ckpt_bad");
  {
    std::ofstream out(dir / "bad.pkc", std::ios::binary);
    out << "NOPE";
  }
  EXPECT_THROW(load_checkpoint(dir / "bad.pkc"), std::runtime_error);
  save_checkpoint(dir / "ok.pkc", {{"w", Tensor(Shape{1, 1, 2, 2}, 1.0)}});
  std::filesystem::resize_file(dir / "ok.pkc", std::filesystem::file_size(dir / "ok.pkc") - 3);
  EXPECT_THROW(load_checkpoint(dir / "ok.pkc"), std::runtime_error);
  EXPECT_THROW(load_checkpoint(dir / "missing.pkc"), std::runtime_error);
}

TEST(Checkpoint, AssignReportsShapeMismatch) {
  NamedTensors loaded = {{"w", Tensor(Shape{1, 1, 3, 3}, 2.0)}};
  NamedTensors dest = {{"w", Tensor(Shape{1, 1, 2, 2})}};
  try {
    assign_checkpoint(loaded, dest);
    FAIL() << "expected throw";
  } catch (const std::runtime_error& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("(1,1,3,3)"), std::string::npos) << msg;
    EXPECT_NE(msg.find("(1,1,2,2)"), std::string::npos) << msg;
  }
  NamedTensors other = {{"v", Tensor(Shape{1, 1, 3, 3})}};
  EXPECT_THROW(assign_checkpoint(loaded, other), std::runtime_error);

  NamedTensors ok = {{"w", Tensor(Shape{1, 1, 3, 3})}};
  assign_checkpoint(loaded, ok);
  for (double v : ok[0].second.data()) EXPECT_EQ(v, 2.0);
}
