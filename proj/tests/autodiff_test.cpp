#include <gtest/gtest.h>

#include "test_util.hpp"

using namespace hsci;
using hsci::testing::grad_check;
using hsci::testing::random_tensor;

TEST(Autodiff, ProductRuleByHand) {
  // f = sum(a * b) + 3 * sum(a): df/da = b + 3, df/db = a
  Param<double> a("a", Tensor<double>({3}, {1, 2, 3})), b("b", Tensor<double>({3}, {4, 5, 6}));
  Tape<double> t;
  Var<double> va = t.param(a), vb = t.param(b);
  Var<double> f = ad::add(ad::sum(ad::mul(va, vb)), ad::scale(ad::sum(va), 3.0));
  t.backward(f);
  EXPECT_DOUBLE_EQ(f.value()[0], 32.0 + 18.0);
  EXPECT_EQ(hsci::testing::to_vec(a.grad), (std::vector<double>{7, 8, 9}));
  EXPECT_EQ(hsci::testing::to_vec(b.grad), (std::vector<double>{1, 2, 3}));
}

TEST(Autodiff, SharedParameterAccumulates) {
  Param<double> w("w", Tensor<double>({1}, {2.0}));
  Tape<double> t;
  // f = w*w via two tape.param calls on the same parameter: df/dw = 2w
  Var<double> f = ad::sum(ad::mul(t.param(w), t.param(w)));
  t.backward(f);
  EXPECT_DOUBLE_EQ(w.grad[0], 4.0);
}

TEST(Autodiff, BackwardRejectsNonScalar) {
  Tape<double> t;
  Param<double> a("a", Tensor<double>({2}, {1, 2}));
  EXPECT_THROW(t.backward(t.param(a)), ValueError);
}

TEST(Autodiff, SoftmaxRowsSumToOneAndMatchClosedForm) {
  Tensor<double> x({2, 3}, {1, 2, 3, 0, 0, 0});
  auto s = ad::softmax_value(x, 1);
  const double z = std::exp(1) + std::exp(2) + std::exp(3);
  EXPECT_NEAR(s.at(0, 0), std::exp(1) / z, 1e-15);
  EXPECT_NEAR(s.at(0, 2), std::exp(3) / z, 1e-15);
  EXPECT_NEAR(s.at(1, 1), 1.0 / 3.0, 1e-15);
  auto c = ad::softmax_value(x, 0);  // columns
  EXPECT_NEAR(c.at(0, 0) + c.at(1, 0), 1.0, 1e-15);
  EXPECT_NEAR(c.at(0, 2), std::exp(3) / (std::exp(3) + 1), 1e-15);
}

TEST(Autodiff, SoftmaxIsShiftInvariantAndStable) {
  Tensor<double> x({1, 3}, {1000, 1001, 1002});
  auto s = ad::softmax_value(x, 1);
  EXPECT_TRUE(s.all_finite());
  Tensor<double> y({1, 3}, {0, 1, 2});
  EXPECT_LT(max_abs_diff(s, ad::softmax_value(y, 1)), 1e-15);
}

TEST(Autodiff, GeluTanhApproximation) {
  // gelu(x) = 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))
  for (double x : {-3.0, -1.0, 0.0, 0.5, 2.0}) {
    const double ref = 0.5 * x * (1 + std::tanh(std::sqrt(2 / M_PI) * (x + 0.044715 * x * x * x)));
    EXPECT_NEAR(ad::gelu_value(x), ref, 1e-15);
  }
  EXPECT_NEAR(ad::gelu_value(1.0), 0.8411919906082768, 1e-12);
}

TEST(Autodiff, SigmoidSoftplusValues) {
  EXPECT_DOUBLE_EQ(ad::sigmoid_value(0.0), 0.5);
  Tape<double> t;
  Var<double> sp = ad::softplus(t.constant(Tensor<double>({2}, {0.0, 50.0})));
  EXPECT_NEAR(sp.value()[0], std::log(2.0), 1e-15);
  EXPECT_NEAR(sp.value()[1], 50.0, 1e-12);
}

TEST(Autodiff, L2NormGradientIsUnitDirection) {
  Param<double> a("a", Tensor<double>({2}, {3, 4}));
  Tape<double> t;
  Var<double> n = ad::l2_norm(t.param(a));
  t.backward(n);
  EXPECT_DOUBLE_EQ(n.value()[0], 5.0);
  EXPECT_NEAR(a.grad[0], 0.6, 1e-15);
  EXPECT_NEAR(a.grad[1], 0.8, 1e-15);
}

TEST(GradCheck, Matmul) {
  auto r = grad_check({random_tensor({3, 4}, 1), random_tensor({4, 5}, 2)},
                      [](Tape<double>&, std::vector<Var<double>>& v) { return ad::matmul(v[0], v[1]); });
  EXPECT_LT(r.max_rel, 1e-4);
}

TEST(GradCheck, BatchedMatmulAllTransposes) {
  for (int ta = 0; ta < 2; ++ta)
    for (int tb = 0; tb < 2; ++tb) {
      Shape sa = ta ? Shape{2, 4, 3} : Shape{2, 3, 4};
      Shape sb = tb ? Shape{2, 5, 4} : Shape{2, 4, 5};
      auto r = grad_check({random_tensor(sa, 3), random_tensor(sb, 4)}, [&](Tape<double>&, std::vector<Var<double>>& v) {
        return ad::bmm(v[0], v[1], bool(ta), bool(tb));
      });
      EXPECT_LT(r.max_rel, 1e-4) << ta << tb;
    }
}

TEST(GradCheck, SoftmaxBothAxes) {
  for (std::size_t axis : {0u, 1u, 2u}) {
    auto r = grad_check({random_tensor({3, 4, 5}, 7, -2, 2)},
                        [&](Tape<double>&, std::vector<Var<double>>& v) { return ad::softmax(v[0], axis); });
    EXPECT_LT(r.max_rel, 1e-4) << axis;
  }
}

TEST(GradCheck, Gelu) {
  auto r = grad_check({random_tensor({4, 6}, 8, -3, 3)},
                      [](Tape<double>&, std::vector<Var<double>>& v) { return ad::gelu(v[0]); });
  EXPECT_LT(r.max_rel, 1e-4);
}

TEST(GradCheck, SigmoidSoftplusNorm) {
  auto r = grad_check({random_tensor({5}, 9, -3, 3)}, [](Tape<double>&, std::vector<Var<double>>& v) {
    return ad::add(ad::sum(ad::mul(ad::sigmoid(v[0]), ad::softplus(v[0]))), ad::l2_norm(v[0]));
  });
  EXPECT_LT(r.max_rel, 1e-4);
}
