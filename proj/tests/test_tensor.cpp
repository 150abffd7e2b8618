#include <litefew/rng.hpp>
#include <litefew/tensor.hpp>

#include <cmath>
#include <cstring>
#include <vector>

#include <gtest/gtest.h>

#include "test_util.hpp"

using litefew::Rng;
using litefew::Tape;
using litefew::Tensor;
namespace ops = litefew::ops;

namespace {

// reference conv by direct sliding window, independent of the im2col path
Tensor naive_conv(const Tensor& x, const Tensor& w, int64_t stride,
                  int64_t dilation, bool causal) {
  const int64_t c_in = x.dim(0), t_in = x.dim(1);
  const int64_t c_out = w.dim(0), k = w.dim(2);
  const int64_t pad = causal ? dilation * (k - 1) : 0;
  const int64_t t_out =
      causal ? t_in : (t_in - (dilation * (k - 1) + 1)) / stride + 1;
  Tensor out = Tensor::zeros({c_out, t_out});
  for (int64_t co = 0; co < c_out; ++co)
    for (int64_t t = 0; t < t_out; ++t) {
      double acc = 0.0;
      for (int64_t ci = 0; ci < c_in; ++ci)
        for (int64_t kk = 0; kk < k; ++kk) {
          const int64_t src = t * stride + kk * dilation - pad;
          if (src >= 0 && src < t_in)
            acc += w.data()[(co * c_in + ci) * k + kk] * x.data()[ci * t_in + src];
        }
      out.data()[co * t_out + t] = acc;
    }
  return out;
}

}  // namespace

TEST(Conv1d, LengthArithmetic) {
  Tape tape;
  Rng rng(1);
  Tensor x = testutil::random_tensor({1, 10}, rng, false);
  Tensor w = testutil::random_tensor({1, 1, 3}, rng, false);
  Tensor y = ops::conv1d(tape, x, w, 2, 1, false);
  EXPECT_EQ(y.dim(1), 4);
}

TEST(Conv1d, IdentityChannelMap) {
  Tape tape;
  Rng rng(2);
  Tensor x = testutil::random_tensor({3, 7}, rng, false);
  Tensor w = Tensor::zeros({3, 3, 1});
  for (int64_t i = 0; i < 3; ++i) w.data()[i * 3 + i] = 1.0;
  Tensor y = ops::conv1d(tape, x, w, 1, 1, false);
  ASSERT_EQ(y.shape(), x.shape());
  for (int64_t i = 0; i < x.numel(); ++i) EXPECT_DOUBLE_EQ(y.data()[i], x.data()[i]);
}

TEST(Conv1d, SevenLayerStackLength) {
  const int64_t strides[7] = {5, 2, 2, 2, 2, 2, 2};
  const int64_t kernels[7] = {10, 3, 3, 3, 3, 2, 2};
  int64_t t = 16000;
  for (int i = 0; i < 7; ++i) t = ops::conv1d_out_len(t, kernels[i], strides[i], 1);
  EXPECT_EQ(t, 49);
  // and by actually running the convs
  Rng rng(3);
  Tape tape;
  Tensor x = testutil::random_tensor({1, 16000}, rng, false);
  int64_t c_in = 1;
  for (int i = 0; i < 7; ++i) {
    Tensor w = testutil::random_tensor({2, c_in, kernels[i]}, rng, false, -0.1, 0.1);
    x = ops::conv1d(tape, x, w, strides[i], 1, false);
    c_in = 2;
  }
  EXPECT_EQ(x.dim(1), 49);
}

TEST(Conv1d, MatchesNaiveOracleAndLengthFormula) {
  Rng rng(4);
  for (int trial = 0; trial < 60; ++trial) {
    const int64_t k = 1 + static_cast<int64_t>(rng.below(5));
    const int64_t dil = 1 + static_cast<int64_t>(rng.below(3));
    const int64_t stride = 1 + static_cast<int64_t>(rng.below(4));
    const int64_t span = dil * (k - 1) + 1;
    const int64_t t_in = span + static_cast<int64_t>(rng.below(10000));
    Tensor x = testutil::random_tensor({2, t_in}, rng, false);
    Tensor w = testutil::random_tensor({3, 2, k}, rng, false);
    Tape tape;
    Tensor y = ops::conv1d(tape, x, w, stride, dil, false);
    // naive count of valid window positions
    int64_t count = 0;
    for (int64_t t = 0; t + span <= t_in; t += stride) ++count;
    EXPECT_EQ(y.dim(1), count);
    EXPECT_EQ(y.dim(1), ops::conv1d_out_len(t_in, k, stride, dil));
    Tensor ref = naive_conv(x, w, stride, dil, false);
    for (int64_t i = 0; i < y.numel(); ++i)
      EXPECT_NEAR(y.data()[i], ref.data()[i], 1e-12);
  }
}

TEST(Conv1d, CausalMatchesNaiveAndPreservesLength) {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const int64_t k = 2 + static_cast<int64_t>(rng.below(3));
    const int64_t dil = 1 + static_cast<int64_t>(rng.below(8));
    const int64_t t_in = 20 + static_cast<int64_t>(rng.below(100));
    Tensor x = testutil::random_tensor({2, t_in}, rng, false);
    Tensor w = testutil::random_tensor({2, 2, k}, rng, false);
    Tape tape;
    Tensor y = ops::conv1d(tape, x, w, 1, dil, true);
    EXPECT_EQ(y.dim(1), t_in);
    Tensor ref = naive_conv(x, w, 1, dil, true);
    for (int64_t i = 0; i < y.numel(); ++i)
      EXPECT_NEAR(y.data()[i], ref.data()[i], 1e-12);
  }
}

TEST(Conv1d, CausalFutureFramesDoNotLeak) {
  Rng rng(6);
  Tensor x = testutil::random_tensor({2, 50}, rng, false);
  Tensor w = testutil::random_tensor({2, 2, 3}, rng, false);
  Tape tape;
  Tensor y0 = ops::conv1d(tape, x, w, 1, 4, true);
  const int64_t t = 23;
  Tensor x2 = x.detached_copy();
  x2.data()[0 * 50 + t + 1] += 0.5;
  x2.data()[1 * 50 + t + 5] -= 1.5;
  Tensor y1 = ops::conv1d(tape, x2, w, 1, 4, true);
  for (int64_t c = 0; c < 2; ++c)
    for (int64_t j = 0; j <= t; ++j) {
      const double a = y0.data()[c * 50 + j], b = y1.data()[c * 50 + j];
      EXPECT_EQ(std::memcmp(&a, &b, sizeof(double)), 0);
    }
}

TEST(Conv1d, RejectsBadShapes) {
  Tape tape;
  Rng rng(7);
  Tensor x = testutil::random_tensor({2, 10}, rng, false);
  Tensor w = testutil::random_tensor({3, 4, 3}, rng, false);  // C_in mismatch
  EXPECT_THROW(ops::conv1d(tape, x, w, 1, 1, false), litefew::ValidationError);
  Tensor w2 = testutil::random_tensor({3, 2, 11}, rng, false);  // span > T
  EXPECT_THROW(ops::conv1d(tape, x, w2, 1, 1, false), litefew::ValidationError);
  Tensor w3 = testutil::random_tensor({3, 2, 3}, rng, false);
  EXPECT_THROW(ops::conv1d(tape, x, w3, 2, 1, true), litefew::ValidationError);
}

TEST(Gelu, PointValuesAndIdentity) {
  Tape tape;
  Tensor x = Tensor::from({3}, {0.0, 1.0, -1.0});
  Tensor y = ops::gelu(tape, x);
  EXPECT_DOUBLE_EQ(y.data()[0], 0.0);
  EXPECT_NEAR(y.data()[1], 0.841345, 1e-6);
  // gelu(x) - gelu(-x) = x for the erf form
  Rng rng(8);
  for (int i = 0; i < 100; ++i) {
    const double v = rng.uniform(-4.0, 4.0);
    Tensor a = Tensor::from({1}, {v});
    Tensor b = Tensor::from({1}, {-v});
    const double ga = ops::gelu(tape, a).item();
    const double gb = ops::gelu(tape, b).item();
    EXPECT_NEAR(ga - gb, v, 1e-12);
  }
}

TEST(InstanceNorm, SpecExamples) {
  Tape tape;
  Tensor scale = Tensor::from({1}, {1.0});
  Tensor shift = Tensor::from({1}, {0.0});
  // constant channel maps to zero through the eps-guarded division
  Tensor c = Tensor::from({1, 4}, {2.5, 2.5, 2.5, 2.5});
  Tensor y = ops::instance_norm(tape, c, scale, shift, 1e-5);
  for (int64_t i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(y.data()[i], 0.0);
  // [1,3] with eps 0 -> [-1, 1]
  Tensor x = Tensor::from({1, 2}, {1.0, 3.0});
  Tensor z = ops::instance_norm(tape, x, scale, shift, 0.0);
  EXPECT_DOUBLE_EQ(z.data()[0], -1.0);
  EXPECT_DOUBLE_EQ(z.data()[1], 1.0);
  EXPECT_THROW(ops::instance_norm(tape, Tensor::from({1, 1}, {1.0}), scale, shift, 0.0),
               litefew::ValidationError);
}

TEST(InstanceNorm, NormalizedMoments) {
  Tape tape;
  Rng rng(9);
  Tensor x = testutil::random_tensor({4, 32}, rng, false);
  Tensor scale = Tensor::from({4}, {1.0, 1.0, 1.0, 1.0});
  Tensor shift = Tensor::from({4}, {0.0, 0.0, 0.0, 0.0});
  Tensor y = ops::instance_norm(tape, x, scale, shift, 0.0);
  for (int64_t c = 0; c < 4; ++c) {
    double mu = 0.0, var = 0.0;
    for (int64_t t = 0; t < 32; ++t) mu += y.data()[c * 32 + t];
    mu /= 32.0;
    for (int64_t t = 0; t < 32; ++t) {
      const double d = y.data()[c * 32 + t] - mu;
      var += d * d;
    }
    var /= 32.0;
    EXPECT_LT(std::fabs(mu), 1e-10);
    EXPECT_LT(std::fabs(var - 1.0), 1e-8);
  }
}

TEST(Mse, ValuesAndGradient) {
  Tape tape;
  Tensor a = Tensor::from({2}, {0.0, 0.0});
  Tensor b = Tensor::from({2}, {1.0, 3.0});
  EXPECT_DOUBLE_EQ(ops::mse(tape, a, b).item(), 5.0);
  EXPECT_DOUBLE_EQ(ops::mse(tape, b, b).item(), 0.0);
  EXPECT_THROW(ops::mse(tape, a, Tensor::from({3}, {0, 0, 0})), litefew::ValidationError);

  Rng rng(10);
  Tensor x = testutil::random_tensor({3, 4}, rng, true);
  Tensor y = testutil::random_tensor({3, 4}, rng, false);
  const double err = testutil::max_grad_rel_error(
      [&](Tape& t) { return ops::mse(t, x, y); }, {x});
  EXPECT_LT(err, 1e-4);
}

TEST(Backward, SumGivesOnes) {
  Tape tape;
  Rng rng(11);
  Tensor x = testutil::random_tensor({2, 3}, rng, true);
  Tensor loss = ops::sum(tape, x);
  tape.backward(loss);
  ASSERT_TRUE(x.has_grad());
  for (double g : x.grad()) EXPECT_DOUBLE_EQ(g, 1.0);
}

TEST(Backward, RejectsNonScalarLoss) {
  Tape tape;
  Rng rng(12);
  Tensor x = testutil::random_tensor({2, 3}, rng, true);
  EXPECT_THROW(tape.backward(x), litefew::ValidationError);
}

TEST(Backward, NoGradTensorStaysAbsent) {
  Tape tape;
  Rng rng(13);
  Tensor x = testutil::random_tensor({2, 3}, rng, true);
  Tensor y = testutil::random_tensor({2, 3}, rng, false);
  Tensor loss = ops::mse(tape, x, y);
  tape.backward(loss);
  EXPECT_TRUE(x.has_grad());
  EXPECT_FALSE(y.has_grad());
}

TEST(Backward, RepeatedCallsAccumulate) {
  Rng rng(14);
  Tensor x = testutil::random_tensor({4}, rng, true);
  Tape tape;
  Tensor loss = ops::sum(tape, x);
  tape.backward(loss);
  tape.backward(loss);
  for (double g : x.grad()) EXPECT_DOUBLE_EQ(g, 2.0);
}

TEST(Backward, ConvLossMatchesFiniteDifferences) {
  Rng rng(15);
  Tensor x = testutil::random_tensor({2, 12}, rng, true);
  Tensor w = testutil::random_tensor({3, 2, 3}, rng, true);
  Tensor target = testutil::random_tensor({3, 5}, rng, false);
  const double err = testutil::max_grad_rel_error(
      [&](Tape& t) {
        Tensor y = ops::conv1d(t, x, w, 2, 1, false);
        return ops::mse(t, y, target);
      },
      {x, w});
  EXPECT_LT(err, 1e-4);
}

TEST(Backward, Deterministic) {
  auto run = [](std::vector<double>* gx, std::vector<double>* gw) {
    Rng rng(77);
    Tensor x = testutil::random_tensor({2, 20}, rng, true);
    Tensor w = testutil::random_tensor({2, 2, 3}, rng, true);
    Tensor target = testutil::random_tensor({2, 20}, rng, false);
    Tape tape;
    Tensor h = ops::conv1d(tape, x, w, 1, 2, true);
    Tensor a = ops::gelu(tape, h);
    Tensor loss = ops::mse(tape, a, target);
    tape.backward(loss);
    *gx = x.grad();
    *gw = w.grad();
  };
  std::vector<double> gx1, gw1, gx2, gw2;
  run(&gx1, &gw1);
  run(&gx2, &gw2);
  EXPECT_EQ(std::memcmp(gx1.data(), gx2.data(), gx1.size() * sizeof(double)), 0);
  EXPECT_EQ(std::memcmp(gw1.data(), gw2.data(), gw1.size() * sizeof(double)), 0);
}

TEST(Ops, FiniteOutputsOnFiniteInputs) {
  Rng rng(16);
  Tape tape;
  Tensor x = testutil::random_tensor({4, 40}, rng, true);
  Tensor w = testutil::random_tensor({4, 4, 3}, rng, true);
  Tensor scale = testutil::random_tensor({4}, rng, true, 0.5, 1.5);
  Tensor shift = testutil::random_tensor({4}, rng, true);
  Tensor y = ops::conv1d(tape, x, w, 1, 2, true);
  y = ops::instance_norm(tape, y, scale, shift, 1e-5);
  y = ops::gelu(tape, y);
  Tensor loss = ops::mse(tape, y, Tensor::zeros({4, 40}));
  tape.backward(loss);
  for (int64_t i = 0; i < y.numel(); ++i) EXPECT_TRUE(std::isfinite(y.data()[i]));
  for (double g : x.grad()) EXPECT_TRUE(std::isfinite(g));
}
