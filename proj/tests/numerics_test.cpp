#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <functional>
#include <random>

#include "bmi/error.hpp"
#include "bmi/numerics/gradient_check.hpp"
#include "bmi/numerics/graph.hpp"

namespace bmi::numerics {
namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Tensor t(std::move(shape));
  for (auto& v : t.storage()) v = n(rng);
  return t;
}

TEST(Softplus, ReferenceValues) {
  EXPECT_NEAR(softplus(0.0), std::log(2.0), 1e-15);
  EXPECT_NEAR(softplus(50.0), 50.0, 1e-12);
  // log1p(e^-20) = e^-20 - e^-40 / 2 + ...
  EXPECT_NEAR(softplus(-20.0), 2.0611536203143807e-09, 1e-22);
  EXPECT_THROW(softplus(std::nan("")), InvalidValueError);
  EXPECT_THROW(softplus(INFINITY), InvalidValueError);
}

TEST(Softplus, DominatesReluAndIsIncreasing) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-40.0, 40.0);
  for (int i = 0; i < 1000; ++i) {
    const double x = u(rng);
    EXPECT_GE(softplus(x), std::max(x, 0.0));
    EXPECT_GT(softplus(x), 0.0);
    EXPECT_LT(softplus(x), softplus(x + 1e-3));
  }
}

TEST(Forward, IdentityAndMatmul) {
  std::mt19937_64 rng(1);
  Graph g;
  auto t = g.input({3, 4}, "t");
  auto i3 = g.constant(Tensor::identity(3));
  auto prod = g.matmul(i3, t);
  Tensor x = random_tensor({3, 4}, rng);
  g.forward({{"t", x}});
  EXPECT_EQ(g.value(t), x);
  EXPECT_EQ(g.value(prod), x);
}

TEST(Forward, UniformCrossEntropy) {
  Graph g;
  auto logits = g.constant(Tensor({1, 4}, 0.7));
  for (std::size_t target = 0; target < 4; ++target) {
    auto loss = g.softmax_cross_entropy(logits, {target});
    EXPECT_NEAR(g.value(loss).item(), std::log(4.0), 1e-15);
  }
}

TEST(Forward, ShapeErrors) {
  Graph g;
  auto a = g.input({2, 3}, "a");
  auto b = g.input({2, 3}, "b");
  EXPECT_THROW(g.matmul(a, b), ShapeError);
  EXPECT_THROW(g.concat({a, g.input({3, 2}, "c")}, 1), ShapeError);
  EXPECT_THROW(g.forward({{"a", Tensor({3, 2})}, {"b", Tensor({2, 3})}}), ShapeError);
}

TEST(Forward, UnboundInputIsUsageError) {
  Graph g;
  auto a = g.input({2}, "a");
  g.tanh(a);
  EXPECT_THROW(g.forward(), UsageError);
}

TEST(Forward, NonFiniteResultIsReported) {
  Graph g;
  auto a = g.constant(Tensor::vector({-1.0, 2.0}));
  auto l = g.log(a);
  EXPECT_THROW(g.value(l), InvalidValueError);
}

TEST(Forward, Deterministic) {
  std::mt19937_64 rng(7);
  Graph g;
  auto x = g.input({5, 6}, "x");
  auto w = g.constant(random_tensor({6, 3}, rng));
  auto y = g.sum(g.softplus(g.matmul(g.tanh(x), w)));
  const Bindings b{{"x", random_tensor({5, 6}, rng)}};
  g.forward(b);
  const double v1 = g.value(y).item();
  g.forward(b);
  const double v2 = g.value(y).item();
  EXPECT_EQ(std::memcmp(&v1, &v2, sizeof(double)), 0);
}

TEST(Backward, SimpleDerivatives) {
  ParameterSet ps;
  auto& x = ps.add("x", Tensor::scalar(3.0));
  Graph g;
  auto xv = g.parameter(x);
  auto sq = g.mul(xv, xv);
  g.forward();
  g.backward(sq);
  EXPECT_DOUBLE_EQ(x.grad.item(), 6.0);

  auto& z = ps.add("z", Tensor::scalar(0.0));
  Graph h;
  auto sp = h.softplus(h.parameter(z));
  h.forward();
  h.backward(sp);
  EXPECT_DOUBLE_EQ(z.grad.item(), 0.5);
}

TEST(Backward, BeforeForwardIsUsageError) {
  Graph g;
  auto a = g.constant(Tensor::scalar(1.0));
  auto b = g.exp(a);
  EXPECT_THROW(g.backward(b), UsageError);
}

TEST(Backward, AccumulatesUntilReset) {
  ParameterSet ps;
  auto& w = ps.add("w", Tensor::vector({0.3, -0.2}));
  Graph g;
  auto f1 = g.sum(g.tanh(g.parameter(w)));
  auto f2 = g.sum(g.exp(g.parameter(w)));
  auto both = g.add(f1, f2);
  g.forward();
  g.backward(both);
  const Tensor joint = w.grad;
  w.zero_grad();
  g.backward(f1);
  g.backward(f2);
  for (std::size_t i = 0; i < 2; ++i) EXPECT_NEAR(w.grad[i], joint[i], 1e-15);
  w.zero_grad();
  for (double v : w.grad.storage()) EXPECT_EQ(v, 0.0);
}

TEST(Backward, MaxTiesRouteToFirstIndex) {
  ParameterSet ps;
  auto& a = ps.add("a", Tensor::matrix(3, 2, {1, 5, 4, 5, 4, 2}));
  Graph g;
  auto m = g.max_over_axis(g.parameter(a), 0);
  g.forward();
  g.backward(m, Tensor({1, 2}, 1.0));
  EXPECT_EQ(a.grad.storage(), (std::vector<double>{0, 1, 1, 0, 0, 0}));
}

TEST(GradientCheck, TwoLayerTanhNetwork) {
  std::mt19937_64 rng(11);
  ParameterSet ps;
  auto& w1 = ps.add("w1", random_tensor({4, 6}, rng, 0.5));
  auto& b1 = ps.add("b1", random_tensor({1, 6}, rng, 0.1));
  auto& w2 = ps.add("w2", random_tensor({6, 1}, rng, 0.5));
  Graph g;
  auto x = g.input({3, 4}, "x");
  auto h = g.tanh(g.add_row(g.matmul(x, g.parameter(w1)), g.parameter(b1)));
  auto out = g.mean(g.tanh(g.matmul(h, g.parameter(w2))));
  auto r = gradient_check(g, out, {{"x", random_tensor({3, 4}, rng)}}, 1e-5);
  EXPECT_LT(r.max_relative_error, 1e-6) << r.worst;
  EXPECT_EQ(r.coordinates, 12u + 24u + 6u + 6u);
}

TEST(GradientCheck, QuadraticFormIsNearExact) {
  std::mt19937_64 rng(5);
  Graph g;
  auto x = g.input({1, 5}, "x");
  auto a = g.constant(random_tensor({5, 5}, rng));
  auto q = g.sum(g.mul(g.matmul(x, a), x));
  auto r = gradient_check(g, q, {{"x", random_tensor({1, 5}, rng)}}, 1e-5);
  EXPECT_LT(r.max_relative_error, 1e-8);
}

TEST(GradientCheck, RejectsBadArguments) {
  Graph g;
  auto x = g.input({2}, "x");
  auto y = g.tanh(x);
  const Bindings b{{"x", Tensor::vector({0.1, 0.2})}};
  EXPECT_THROW(gradient_check(g, y, b, 1e-5), UsageError);
  auto s = g.sum(y);
  EXPECT_THROW(gradient_check(g, s, b, 0.0), UsageError);
  EXPECT_THROW(gradient_check(g, s, b, 0.1), UsageError);
}

// Every primitive, composed with a random linear read-out, against central
// differences at 100 random points.
TEST(GradientCheck, EveryPrimitiveAtRandomPoints) {
  using Builder = std::function<Var(Graph&, Var, Var)>;
  const std::vector<std::pair<std::string, Builder>> cases = {
      {"matmul", [](Graph& g, Var a, Var b) { return g.matmul(a, g.transpose(b)); }},
      {"add", [](Graph& g, Var a, Var b) { return g.add(a, b); }},
      {"sub", [](Graph& g, Var a, Var b) { return g.sub(a, b); }},
      {"mul", [](Graph& g, Var a, Var b) { return g.mul(a, b); }},
      {"scalar_mul", [](Graph& g, Var a, Var b) { return g.mul(g.slice(g.reshape(b, {6}), 0, 2, 3), a); }},
      {"add_row", [](Graph& g, Var a, Var b) { return g.add_row(a, g.slice(b, 0, 1, 2)); }},
      {"tanh", [](Graph& g, Var a, Var) { return g.tanh(a); }},
      {"sigmoid", [](Graph& g, Var a, Var) { return g.sigmoid(a); }},
      {"softplus", [](Graph& g, Var a, Var) { return g.softplus(a); }},
      {"exp", [](Graph& g, Var a, Var) { return g.exp(a); }},
      {"log", [](Graph& g, Var a, Var) { return g.log(g.add_scalar(g.mul(a, a), 0.5)); }},
      {"abs", [](Graph& g, Var a, Var) { return g.abs(a); }},
      {"scale", [](Graph& g, Var a, Var) { return g.scale(a, -1.7); }},
      {"max_axis0", [](Graph& g, Var a, Var) { return g.max_over_axis(a, 0); }},
      {"max_axis1", [](Graph& g, Var a, Var) { return g.max_over_axis(a, 1); }},
      {"max_of", [](Graph& g, Var a, Var b) { return g.max_of({a, b}); }},
      {"concat0", [](Graph& g, Var a, Var b) { return g.concat({a, b}, 0); }},
      {"concat1", [](Graph& g, Var a, Var b) { return g.concat({a, b}, 1); }},
      {"slice", [](Graph& g, Var a, Var) { return g.slice(a, 1, 1, 3); }},
      {"gather", [](Graph& g, Var a, Var) { return g.gather_rows(a, {1, 0, 1}); }},
      {"log_softmax", [](Graph& g, Var a, Var) { return g.log_softmax(a); }},
      {"xent", [](Graph& g, Var a, Var) { return g.softmax_cross_entropy(a, {2, 0}); }},
      {"mean", [](Graph& g, Var a, Var) { return g.mean(a); }},
  };
  std::mt19937_64 rng(2024);
  for (const auto& [name, build] : cases) {
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
      Graph g;
      auto a = g.input({2, 3}, "a");
      auto b = g.input({2, 3}, "b");
      auto y = build(g, a, b);
      auto read = g.constant(random_tensor(g.shape(y), rng));
      auto out = g.sum(g.mul(y, read));
      auto r = gradient_check(
          g, out, {{"a", random_tensor({2, 3}, rng)}, {"b", random_tensor({2, 3}, rng)}},
          1e-6);
      worst = std::max(worst, r.max_relative_error);
    }
    EXPECT_LT(worst, 1e-4) << name;
  }
}

}  // namespace
}  // namespace bmi::numerics
