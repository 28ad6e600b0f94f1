#include <gtest/gtest.h>

#include "gradcheck.hpp"
#include "tsap/nn.hpp"

namespace tsap {
namespace {

using testing::gradcheck;
using testing::random_tensor;
using testing::weighted_sum;

Var c(Tensor t) { return Var::constant(std::move(t)); }

// Straightforward triple loop, independent of the im2col/GEMM path.
Tensor naive_conv1d(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t stride,
                    std::size_t dilation) {
  const std::size_t B = x.dim(0), C = x.dim(1), L = x.dim(2), O = w.dim(0), K = w.dim(2);
  const std::size_t T = (L - dilation * (K - 1) - 1) / stride + 1;
  Tensor y({B, O, T});
  for (std::size_t bi = 0; bi < B; ++bi)
    for (std::size_t o = 0; o < O; ++o)
      for (std::size_t t = 0; t < T; ++t) {
        double acc = b[o];
        for (std::size_t ci = 0; ci < C; ++ci)
          for (std::size_t k = 0; k < K; ++k)
            acc += w[(o * C + ci) * K + k] * x[(bi * C + ci) * L + t * stride + k * dilation];
        y[(bi * O + o) * T + t] = acc;
      }
  return y;
}

double inner(const Tensor& a, const Tensor& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

TEST(Conv1d, IdentityKernel) {
  Var y = conv1d(c(Tensor({1, 1, 3}, {1, 2, 3})), c(Tensor({1, 1, 1}, {1})),
                 c(Tensor::from({0})));
  EXPECT_EQ(y.value().vec(), (std::vector<double>{1, 2, 3}));
}

TEST(Conv1d, StrideTwoPairSums) {
  Var y = conv1d(c(Tensor({1, 1, 4}, {1, 2, 3, 4})), c(Tensor({1, 1, 2}, {1, 1})),
                 c(Tensor::from({0})), 2);
  EXPECT_EQ(y.value().vec(), (std::vector<double>{3, 7}));
}

TEST(Conv1d, MatchesNaiveOracle) {
  Rng rng(7);
  Tensor x = random_tensor({2, 3, 17}, rng);
  Tensor w = random_tensor({4, 3, 5}, rng);
  Tensor b = random_tensor({4}, rng);
  Var y = conv1d(c(x), c(w), c(b), 2, 2);
  Tensor ref = naive_conv1d(x, w, b, 2, 2);
  ASSERT_EQ(y.shape(), ref.shape());
  for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(y.value()[i], ref[i], 1e-12);
}

TEST(Conv1d, InvalidShapes) {
  Var x = c(Tensor({1, 2, 4}));
  EXPECT_THROW(conv1d(x, c(Tensor({1, 3, 2})), Var()), ShapeError);  // channel mismatch
  EXPECT_THROW(conv1d(x, c(Tensor({1, 2, 5})), Var()), ShapeError);  // Lout < 1
  EXPECT_THROW(conv1d(x, c(Tensor({1, 2, 3})), Var(), 1, 2), ShapeError);
}

TEST(Conv1dTransposed, SingleTapSpread) {
  Var y = conv1d_transposed(c(Tensor({1, 1, 1}, {1})), c(Tensor({1, 1, 2}, {1, 1})), Var());
  EXPECT_EQ(y.value().vec(), (std::vector<double>{1, 1}));
}

TEST(Conv1dTransposed, ZeroInputGivesBias) {
  Var y = conv1d_transposed(c(Tensor({1, 2, 3})), c(Tensor({2, 3, 4}, 0.5)),
                            c(Tensor::from({1, 2, 3})), 2);
  ASSERT_EQ(y.shape(), (Shape{1, 3, 8}));
  for (std::size_t o = 0; o < 3; ++o)
    for (std::size_t t = 0; t < 8; ++t) EXPECT_EQ(y.value()[o * 8 + t], o + 1.0);
}

TEST(Conv1dTransposed, IsAdjointOfConv1d) {
  Rng rng(11);
  for (auto [stride, kernel] : {std::pair{1, 3}, {2, 4}, {4, 16}, {3, 5}}) {
    const std::size_t len = 40;
    Tensor x = random_tensor({2, 3, len}, rng);
    Tensor w = random_tensor({5, 3, std::size_t(kernel)}, rng);
    Var cx = conv1d(c(x), c(w), Var(), stride);
    Tensor y = random_tensor(cx.shape(), rng);
    const std::size_t pad = len - conv_transposed_out_len(cx.shape()[2], kernel, stride);
    Var ty = conv1d_transposed(c(y), c(w), Var(), stride, pad);
    ASSERT_EQ(ty.shape(), x.shape());
    EXPECT_NEAR(inner(cx.value(), y), inner(x, ty.value()), 1e-10);
  }
}

TEST(Conv1dTransposed, OutputLengthFormula) {
  Var y = conv1d_transposed(c(Tensor({1, 2, 12})), c(Tensor({2, 1, 16})), Var(), 4);
  EXPECT_EQ(y.shape()[2], (12u - 1) * 4 + 16);
  EXPECT_THROW(conv1d_transposed(c(Tensor({1, 2, 12})), c(Tensor({2, 1, 16})), Var(), 4, 4),
               ShapeError);
}

TEST(Layers, Relu) {
  EXPECT_EQ(relu(c(Tensor::from({-1, 0, 2}))).value().vec(), (std::vector<double>{0, 0, 2}));
}

TEST(Layers, BatchNormTwoPointStandardization) {
  BatchNormState st{c(Tensor({1})), c(Tensor({1}, 1.0))};
  Var y = batchnorm1d(c(Tensor({2, 1}, {1, 3})), c(Tensor::from({1})), c(Tensor::from({0})),
                      st, true);
  const double s = 1.0 / std::sqrt(1.0 + st.eps);
  EXPECT_NEAR(y.value()[0], -s, 1e-15);
  EXPECT_NEAR(y.value()[1], s, 1e-15);
  // running statistics move by the momentum towards batch mean 2, unbiased var 2
  EXPECT_NEAR(st.running_mean.value()[0], 0.2, 1e-15);
  EXPECT_NEAR(st.running_var.value()[0], 0.9 + 0.1 * 2.0, 1e-15);
}

TEST(Layers, BatchNormEvalUsesRunningStats) {
  BatchNormState st{c(Tensor::from({1.0})), c(Tensor::from({4.0}))};
  st.eps = 0.0;
  Var y = batchnorm1d(c(Tensor({2, 1, 1}, {3, 5})), c(Tensor::from({2})), c(Tensor::from({1})),
                      st, false);
  EXPECT_EQ(y.value().vec(), (std::vector<double>{3, 5}));
  EXPECT_EQ(st.running_mean.value()[0], 1.0);
}

TEST(Layers, AvgPool) {
  Var y = avgpool1d(c(Tensor({1, 1, 4}, {1, 2, 3, 4})), 2, 2);
  EXPECT_EQ(y.value().vec(), (std::vector<double>{1.5, 3.5}));
}

TEST(Layers, DropoutDeterministicPerSeed) {
  Var x = c(Tensor({4, 8}, 1.0));
  Rng a = Rng::stream(5, {1, 2}), b = Rng::stream(5, {1, 2}), d = Rng::stream(5, {1, 3});
  auto ya = dropout(x, 0.8, a).value().vec();
  auto yb = dropout(x, 0.8, b).value().vec();
  auto yd = dropout(x, 0.8, d).value().vec();
  EXPECT_EQ(ya, yb);
  EXPECT_NE(ya, yd);
  for (double v : ya) EXPECT_TRUE(v == 0.0 || v == 1.0 / 0.8);
}

// Every layer against central differences (64-bit, h = 1e-5).
TEST(LayerGradcheck, AllLayers) {
  Rng rng(21);
  const double tol = 1e-5;
  Tensor x = random_tensor({2, 3, 20}, rng);
  Tensor w = random_tensor({4, 3, 5}, rng, 0.5);
  Tensor b = random_tensor({4}, rng);
  EXPECT_LT(gradcheck([](const auto& v) { return weighted_sum(conv1d(v[0], v[1], v[2], 2, 2)); },
                      {x, w, b}),
            tol);

  Tensor xt = random_tensor({2, 4, 6}, rng);
  Tensor wt = random_tensor({4, 2, 5}, rng, 0.5);
  Tensor bt = random_tensor({2}, rng);
  EXPECT_LT(
      gradcheck([](const auto& v) { return weighted_sum(conv1d_transposed(v[0], v[1], v[2], 3, 1)); },
                {xt, wt, bt}),
      tol);

  Tensor g = random_tensor({3}, rng);
  Tensor be = random_tensor({3}, rng);
  EXPECT_LT(gradcheck(
                [](const auto& v) {
                  BatchNormState st{Var::constant(Tensor({3})), Var::constant(Tensor({3}, 1.0))};
                  return weighted_sum(batchnorm1d(v[0], v[1], v[2], st, true));
                },
                {x, g, be}),
            tol);

  Tensor xl = random_tensor({5, 7}, rng);
  Tensor wl = random_tensor({3, 7}, rng);
  Tensor bl = random_tensor({3}, rng);
  EXPECT_LT(gradcheck([](const auto& v) { return weighted_sum(linear(v[0], v[1], v[2])); },
                      {xl, wl, bl}),
            tol);

  EXPECT_LT(gradcheck([](const auto& v) { return weighted_sum(avgpool1d(v[0], 4, 3)); }, {x}), tol);
  EXPECT_LT(gradcheck([](const auto& v) { return weighted_sum(sigmoid(v[0])); }, {x}), tol);

  Tensor xr = x;
  for (double& v : xr.vec()) v += (v >= 0 ? 0.1 : -0.1);  // keep away from the kink
  EXPECT_LT(gradcheck([](const auto& v) { return weighted_sum(relu(v[0])); }, {xr}), tol);
  EXPECT_LT(gradcheck(
                [](const auto& v) {
                  Rng r(3);
                  return weighted_sum(dropout(v[0], 0.8, r));
                },
                {x}),
            tol);
}

// Second derivatives through the conv family: Hessian-vector products of a
// conv-transposed-conv composite against finite differences of its gradient.
TEST(LayerGradcheck, ConvFamilySecondOrder) {
  Rng rng(5);
  Tensor x0 = random_tensor({1, 2, 15}, rng);
  Tensor w0 = random_tensor({3, 2, 4}, rng, 0.5);
  Tensor dir = random_tensor(w0.shape(), rng);
  auto gv = [&](const Var& x, const Var& w) {
    Var y = conv1d(x, w, Var(), 2);
    Var z = conv1d_transposed(sigmoid(y), w, Var(), 2, 1);
    Var loss = weighted_sum(mul(z, z));
    Var gw = grad(loss, {w}, true)[0];
    return sum(mul(gw, Var::constant(dir)));
  };
  Var x = Var::param(x0), w = Var::param(w0);
  auto hv = grad(gv(x, w), {x, w});
  const double h = 1e-5;
  Tensor fdx(x0.shape()), fdw(w0.shape());
  for (std::size_t i = 0; i < x0.size(); ++i) {
    Tensor p = x0, m = x0;
    p[i] += h;
    m[i] -= h;
    fdx[i] = (gv(Var::param(p), Var::param(w0)).item() - gv(Var::param(m), Var::param(w0)).item()) /
             (2 * h);
  }
  for (std::size_t i = 0; i < w0.size(); ++i) {
    Tensor p = w0, m = w0;
    p[i] += h;
    m[i] -= h;
    fdw[i] = (gv(Var::param(x0), Var::param(p)).item() - gv(Var::param(x0), Var::param(m)).item()) /
             (2 * h);
  }
  EXPECT_LT(testing::relative_error(hv[0].value(), fdx), 1e-6);
  EXPECT_LT(testing::relative_error(hv[1].value(), fdw), 1e-6);
}

TEST(ParamSetTest, DeterministicInitAndViews) {
  auto build = [](std::uint64_t seed) {
    Rng rng(seed);
    ParamSet p(seed);
    p.add("w", init_uniform_fan_in({4, 3}, 3, rng));
    p.add("stat", Tensor({4}), false);
    return p;
  };
  ParamSet a = build(3), b = build(3), d = build(4);
  EXPECT_EQ(a["w"].value().vec(), b["w"].value().vec());
  EXPECT_NE(a["w"].value().vec(), d["w"].value().vec());
  EXPECT_EQ(a.trainable_names(), (std::vector<std::string>{"w"}));
  ParamSet view = a.detached();
  view["stat"].assign(Tensor({4}, 1.0));  // statistics are shared with the source
  EXPECT_EQ(a["stat"].value()[0], 1.0);
  EXPECT_THROW(a.add("w", Tensor({1})), ContractError);
}

}  // namespace
}  // namespace tsap
