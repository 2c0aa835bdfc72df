#include <gtest/gtest.h>

#include <cmath>

#include "bmi/discriminator/discriminator.hpp"
#include "bmi/error.hpp"
#include "bmi/lm/lm.hpp"
#include "bmi/numerics/gradient_check.hpp"
#include "bmi/util/random.hpp"

namespace bmi::discriminator {
namespace {

using numerics::Tensor;

std::vector<double> random_vector(Rng& rng, std::size_t d) {
  std::vector<double> v(d);
  for (auto& x : v) x = 2 * uniform01(rng) - 1;
  return v;
}

TEST(FeatureMap, WorkedExample) {
  EXPECT_EQ(feature_map({1, 2}, {3, -1}), (std::vector<double>{1, 2, 3, -1, -2, 3, 2, 3, 3, -2}));
}

TEST(FeatureMap, EqualInputsZeroDifferenceBlocks) {
  Rng rng(1);
  const auto a = random_vector(rng, 4);
  const auto f = feature_map(a, a);
  for (std::size_t j = 8; j < 16; ++j) EXPECT_EQ(f[j], 0.0);
  EXPECT_EQ(feature_map(std::vector<double>(64, 1.0), std::vector<double>(64, 0.5)).size(), 320u);
  EXPECT_THROW(feature_map({1, 2}, {1}), ShapeError);
}

TEST(Discriminator, ZeroParametersScoreZero) {
  Discriminator d({3, 5, 1});
  d.zero_parameters();
  Rng rng(2);
  for (int i = 0; i < 10; ++i) EXPECT_EQ(d.score(random_vector(rng, 3), random_vector(rng, 3)), 0.0);
}

TEST(Discriminator, NotSymmetric) {
  Discriminator d({1, 1, 1});
  d.zero_parameters();
  // Hidden unit reads only the a coordinate.
  d.params().get("disc.w1").value.at(0, 0) = 1.0;
  d.params().get("disc.w2").value.at(0, 0) = 1.0;
  EXPECT_NEAR(d.score({1.0}, {0.0}), std::tanh(1.0), 1e-15);
  EXPECT_EQ(d.score({0.0}, {1.0}), 0.0);
}

TEST(Discriminator, GraphMatchesPlainScore) {
  Discriminator d({4, 6, 3});
  Rng rng(3);
  std::vector<double> A, B;
  std::vector<std::vector<double>> as, bs;
  for (int i = 0; i < 5; ++i) {
    as.push_back(random_vector(rng, 4));
    bs.push_back(random_vector(rng, 4));
    A.insert(A.end(), as.back().begin(), as.back().end());
    B.insert(B.end(), bs.back().begin(), bs.back().end());
  }
  Graph g;
  const auto n = d.bind(g);
  Var s = d.score(g, n, g.constant(Tensor::matrix(5, 4, A)), g.constant(Tensor::matrix(5, 4, B)));
  g.forward();
  for (int i = 0; i < 5; ++i) EXPECT_NEAR(g.value(s)[i], d.score(as[i], bs[i]), 1e-14);
}

TEST(Discriminator, GradientsWrtParametersAndEncodings) {
  Discriminator d({3, 4, 4});
  Graph g;
  const auto n = d.bind(g);
  Var a = g.input({2, 3}, "a");
  Var b = g.input({2, 3}, "b");
  Var out = g.sum(d.score(g, n, a, b));
  Rng rng(4);
  const numerics::Bindings point{{"a", Tensor::matrix(2, 3, random_vector(rng, 6))},
                                 {"b", Tensor::matrix(2, 3, random_vector(rng, 6))}};
  const auto r = numerics::gradient_check(g, out, point);
  EXPECT_LT(r.max_relative_error, 1e-5) << r.worst;
  EXPECT_EQ(r.coordinates, 12u + 15 * 4 + 4 + 4 + 1);
}

TEST(Discriminator, GradientFlowsIntoEncoder) {
  lm::LMConfig c;
  c.vocab_size = 5;
  c.embedding_dim = 2;
  c.hidden = {2, 2};
  lm::LanguageModel model(c);
  Discriminator d({c.encoding_dim(), 3, 2});
  Graph g;
  const auto ln = model.bind(g);
  const auto dn = d.bind(g);
  Var ex = model.encode_batch(g, ln, {{2, 3}, {4}});
  Var ey = model.encode_batch(g, ln, {{3, 3, 4}, {2, 4}});
  Var out = g.sum(d.score(g, dn, ex, ey));
  const auto r = numerics::gradient_check(g, out, {});
  EXPECT_LT(r.max_relative_error, 1e-5) << r.worst;
  g.forward();
  g.backward(out);
  double norm = 0;
  for (double v : model.params().flat_grads()) norm += std::abs(v);
  EXPECT_GT(norm, 0.0);
}

TEST(Discriminator, Validation) {
  EXPECT_THROW(Discriminator({0, 4, 1}), ConfigError);
  EXPECT_THROW(Discriminator({2, 0, 1}), ConfigError);
  Discriminator d({2, 2, 1});
  EXPECT_THROW(d.score({1, 2, 3}, {1, 2, 3}), ShapeError);
}

}  // namespace
}  // namespace bmi::discriminator
