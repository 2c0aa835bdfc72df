#include <gtest/gtest.h>

#include <cmath>

#include "bmi/corpus/synth.hpp"
#include "bmi/error.hpp"
#include "bmi/lm/checkpoint.hpp"
#include "bmi/numerics/gradient_check.hpp"
#include "bmi/training/training.hpp"

namespace bmi::training {
namespace {

using corpus::SegmentPair;
using numerics::Graph;
using numerics::Tensor;

lm::LMConfig tiny_lm(std::size_t k = 6) {
  lm::LMConfig c;
  c.vocab_size = k;
  c.embedding_dim = 3;
  c.hidden = {3, 2};
  c.seed = 3;
  return c;
}

corpus::Corpus synth(std::size_t docs, std::uint64_t seed, double p = 0.9) {
  corpus::SynthConfig c;
  c.topic_persistence = p;
  c.emission = corpus::disjoint_emissions(2, 4);
  c.num_documents = docs;
  c.sentences_per_document = 6;
  c.seed = seed;
  return corpus::synth_generate(c);
}

double abs_sum(const numerics::ParameterSet& p) {
  double s = 0;
  for (double v : p.flat_grads()) s += std::abs(v);
  return s;
}

TEST(SwitchCondition, Examples) {
  EXPECT_FALSE(switch_condition({10, 9, 8, 7, 6, 5, 4, 3}, 5));
  const std::vector<double> h{10, 9, 9.5, 9.6, 9.7, 9.8, 9.9};
  EXPECT_TRUE(switch_condition(h, 5));
  EXPECT_FALSE(switch_condition(std::vector<double>(h.begin(), h.begin() + 5), 5));
  EXPECT_FALSE(switch_condition({10, 11, 12, 13, 14}, 5));
  EXPECT_TRUE(switch_condition({10, 11, 12, 13, 14, 15}, 5));
  EXPECT_TRUE(switch_condition({5, 5}, 1));
}

TEST(MleStep, UniformModelCostsLnK) {
  lm::LanguageModel m(tiny_lm(7));
  m.zero_parameters();
  const auto r = mle_step(m, {lm::document_stream({{2, 3}, {4}}), lm::document_stream({{5}})});
  EXPECT_NEAR(r.loss, std::log(7.0), 1e-14);
  EXPECT_EQ(r.tokens, 7u);
  EXPECT_THROW(mle_step(m, {}), UsageError);
}

TEST(MleStep, GradientCheck) {
  lm::LanguageModel m(tiny_lm());
  Graph g;
  const auto n = m.bind(g);
  const auto loss = g.scale(
      m.streams_nll(g, n, {lm::document_stream({{2, 3}, {4}}), lm::document_stream({{5, 2}})}),
      1.0 / 7);
  const auto r = numerics::gradient_check(g, loss, {});
  EXPECT_LT(r.max_relative_error, 1e-4) << r.worst;
}

TEST(MleStep, MemorizesTwoSentences) {
  lm::LanguageModel m(tiny_lm());
  numerics::Sgd sgd{1.0, 5.0};
  const std::vector<std::vector<corpus::TokenId>> data{lm::document_stream({{2, 3, 4}, {5, 5}})};
  double prev = INFINITY;
  for (int i = 0; i < 50; ++i) {
    m.params().zero_grad();
    const double loss = mle_step(m, data).loss;
    EXPECT_LT(loss, prev);
    prev = loss;
    sgd.step(m.params());
  }
}

std::pair<std::vector<SegmentPair>, std::vector<SegmentPair>> pairs_for(
    const corpus::Corpus& c, std::size_t n, std::uint64_t seed) {
  corpus::PairSampler s(c);
  Rng rng(seed);
  auto pos = s.positives(n, rng);
  auto neg = s.negatives(n, rng);
  return {pos, neg};
}

TEST(Phase1Step, ZeroDiscriminatorValueAndGradients) {
  lm::LanguageModel m(tiny_lm());
  Discriminator d({m.config().encoding_dim(), 4, 2});
  d.zero_parameters();
  const auto c = synth(5, 1);
  const auto [pos, neg] = pairs_for(c, 6, 2);
  m.params().zero_grad();
  d.params().zero_grad();
  const auto r = phase1_step(m, d, pos, neg);
  EXPECT_NEAR(r.proxy, -2 * std::log(2.0), 1e-15);
  EXPECT_EQ(r.dv, 0.0);
  EXPECT_GT(abs_sum(d.params()), 0.0);
  EXPECT_THROW(phase1_step(m, d, {}, neg), UsageError);
}

TEST(Phase1Step, TouchesBothParameterSets) {
  lm::LanguageModel m(tiny_lm());
  Discriminator d({m.config().encoding_dim(), 4, 2});
  const auto c = synth(5, 1);
  const auto [pos, neg] = pairs_for(c, 4, 3);
  m.params().zero_grad();
  d.params().zero_grad();
  phase1_step(m, d, pos, neg);
  EXPECT_GT(abs_sum(m.params()), 0.0);
  EXPECT_GT(abs_sum(d.params()), 0.0);
}

TEST(Phase1Step, GradientCheck) {
  lm::LanguageModel m(tiny_lm());
  Discriminator d({m.config().encoding_dim(), 3, 2});
  const auto c = synth(3, 4);
  const auto [pos, neg] = pairs_for(c, 3, 5);
  Graph g;
  const auto ln = m.bind(g);
  const auto dn = d.bind(g);
  const auto p = build_phase1(g, m, ln, d, dn, pos, neg);
  const auto r = numerics::gradient_check(g, p.proxy, {});
  EXPECT_LT(r.max_relative_error, 1e-4) << r.worst;
}

TEST(Phase1Step, SwappedLabelsLowerTheProxy) {
  lm::LanguageModel m(tiny_lm());
  Discriminator d({m.config().encoding_dim(), 8, 2});
  const auto c = synth(40, 6);
  numerics::Adam adam;
  adam.learning_rate = 1e-2;
  corpus::PairSampler s(c);
  Rng rng(7);
  for (int i = 0; i < 150; ++i) {
    d.params().zero_grad();
    m.params().zero_grad();
    phase1_step(m, d, s.positives(32, rng), s.negatives(32, rng));
    adam.step(d.params());
  }
  const auto pos = s.positives(400, rng);
  const auto neg = s.negatives(400, rng);
  const auto right = validation_bound(m, d, pos, neg);
  const auto swapped = validation_bound(m, d, neg, pos);
  EXPECT_GT(right.dv, 0.0);
  EXPECT_LT(swapped.proxy, right.proxy);
}

TEST(RamlReward, IdentitiesAndConstructedOrdering) {
  lm::LanguageModel m(tiny_lm());
  Discriminator d({m.config().encoding_dim(), 4, 8});
  const corpus::Sentence x{2, 3}, a{4, 5}, b{3}, star{5, 2, 2};
  EXPECT_EQ(raml_reward(m, d, x, star, star), 0.0);
  const auto ex = m.encode(x);
  EXPECT_NEAR(raml_reward(m, d, x, a, star) - raml_reward(m, d, x, b, star),
              d.score(ex, m.encode(a)) - d.score(ex, m.encode(b)), 1e-14);

  // Score depends only on the first coordinate of phi(Y), increasingly.
  d.zero_parameters();
  d.params().get("disc.w1").value.at(m.config().encoding_dim(), 0) = 1.0;
  d.params().get("disc.w2").value.at(0, 0) = 1.0;
  std::vector<corpus::Sentence> cands{{2}, {3, 4}, {5, 5, 2}, {4}, {3, 3}};
  for (const auto& u : cands)
    for (const auto& v : cands) {
      const double du = m.encode(u)[0], dv = m.encode(v)[0];
      if (du > dv) EXPECT_GT(raml_reward(m, d, x, u, star), raml_reward(m, d, x, v, star));
    }
  EXPECT_THROW(raml_reward(m, d, {}, a, star), InputError);
}

TEST(Weights, DirectArithmeticAndNormalization) {
  std::vector<WeightedCandidate> c(2);
  c[0].log_raw_weight = 0.0 - std::log(0.5);
  c[1].log_raw_weight = std::log(2.0) - std::log(0.5);
  normalize_weights(c);
  EXPECT_NEAR(c[0].weight, 1.0 / 3, 1e-15);
  EXPECT_NEAR(c[1].weight, 2.0 / 3, 1e-15);

  std::vector<WeightedCandidate> one(1);
  one[0].log_raw_weight = -1e6;
  normalize_weights(one);
  EXPECT_EQ(one[0].weight, 1.0);

  std::vector<WeightedCandidate> dead(3);
  for (auto& w : dead) w.log_raw_weight = -INFINITY;
  EXPECT_THROW(normalize_weights(dead), DegenerateWeightError);
}

TEST(Weights, SumToOneAndFlattenWithTemperature) {
  lm::LanguageModel m(tiny_lm());
  Discriminator d({m.config().encoding_dim(), 6, 9});
  const auto c = synth(10, 8);
  corpus::PairSampler s(c);
  Rng rng(9);
  const auto base = propose_candidates(c, s.positives(8, rng), 2, 0.3, rng);
  double prev_max = INFINITY;
  for (double beta : {0.5, 1.0, 2.0, 8.0}) {
    auto w = base;
    weigh_candidates(m, d, w, beta);
    double sum = 0, mx = 0;
    for (const auto& x : w) {
      sum += x.weight;
      mx = std::max(mx, x.weight);
      EXPECT_GE(x.weight, 0.0);
    }
    EXPECT_NEAR(sum, 1.0, 1e-10);
    EXPECT_LE(mx, prev_max);
    prev_max = mx;
  }
}

TEST(Weights, InfiniteTemperatureLimitIsUniformOverProposalRatio) {
  lm::LanguageModel m(tiny_lm());
  Discriminator d({m.config().encoding_dim(), 6, 9});
  const auto c = synth(10, 8);
  corpus::PairSampler s(c);
  Rng rng(10);
  auto w = propose_candidates(c, s.positives(6, rng), 1, 0.3, rng);
  for (auto& x : w) x.proposal_prob = 0.25;  // equal proposal mass
  weigh_candidates(m, d, w, 1e9);
  for (const auto& x : w) EXPECT_NEAR(x.weight, 1.0 / 6, 1e-6);
}

TEST(IwRamlStep, SingleCandidateIsPlainNll) {
  lm::LanguageModel m(tiny_lm());
  std::vector<WeightedCandidate> w(1);
  w[0].x = {2, 3};
  w[0].y = {4, 5};
  w[0].weight = 1.0;
  m.params().zero_grad();
  iw_raml_step(m, w);
  const auto a = m.params().flat_grads();
  m.params().zero_grad();
  Graph g;
  const auto n = m.bind(g);
  const auto lp = m.sequence_log_probs(g, n, {{2, 3}}, {{4, 5}});
  const auto loss = g.neg(g.sum(lp));
  g.forward();
  g.backward(loss);
  EXPECT_EQ(a, m.params().flat_grads());
}

TEST(IwRamlStep, GradientCheckAndNoDiscriminatorGradient) {
  lm::LanguageModel m(tiny_lm());
  Discriminator d({m.config().encoding_dim(), 4, 2});
  const auto c = synth(4, 11);
  corpus::PairSampler s(c);
  Rng rng(12);
  auto w = propose_candidates(c, s.positives(3, rng), 2, 0.3, rng);
  weigh_candidates(m, d, w, 1.0);
  d.params().zero_grad();
  m.params().zero_grad();
  iw_raml_step(m, w, 0.5);
  EXPECT_EQ(abs_sum(d.params()), 0.0);
  EXPECT_GT(abs_sum(m.params()), 0.0);
  Graph g;
  const auto ln = m.bind(g);
  const auto loss = build_iw_raml_loss(g, m, ln, w);
  const auto r = numerics::gradient_check(g, loss, {});
  EXPECT_LT(r.max_relative_error, 1e-4) << r.worst;
}

TEST(MleStep, OnlyLanguageModelGradients) {
  lm::LanguageModel m(tiny_lm());
  Discriminator d({m.config().encoding_dim(), 4, 2});
  d.params().zero_grad();
  mle_step(m, {lm::document_stream({{2}, {3}})});
  EXPECT_EQ(abs_sum(d.params()), 0.0);
}

TEST(Proposals, ComeFromLaterSentencesWithExactMass) {
  const auto c = synth(6, 13);
  corpus::PairSampler s(c);
  Rng rng(14);
  const auto pairs = s.positives(20, rng);
  const auto cands = propose_candidates(c, pairs, 3, 0.3, rng);
  ASSERT_EQ(cands.size(), 60u);
  for (std::size_t i = 0; i < cands.size(); ++i) {
    const auto& p = pairs[i / 3];
    EXPECT_EQ(cands[i].y_star, p.y);
    const auto mass = corpus::geometric_proposal_masses(6, p.y_index, 0.3);
    bool found = false;
    for (std::size_t k = p.y_index; k < 6; ++k)
      if (c.documents[p.y_doc][k] == cands[i].y && mass[k - p.y_index] == cands[i].proposal_prob)
        found = true;
    EXPECT_TRUE(found);
  }
}

TEST(RlStep, ConstantRewardGivesZeroGradient) {
  lm::LanguageModel m(tiny_lm());
  Discriminator d({m.config().encoding_dim(), 4, 2});
  d.zero_parameters();
  Rng rng(15);
  std::vector<double> mean(m.params().scalar_count(), 0.0);
  const int draws = 10000;
  for (int i = 0; i < draws / 100; ++i) {
    m.params().zero_grad();
    std::vector<corpus::Sentence> xs(100, corpus::Sentence{2, 3});
    const auto r = rl_step(m, d, xs, 6, rng);
    for (std::size_t j = 0; j < r.rewards.size(); ++j)
      EXPECT_EQ(r.rewards[j] - r.baselines[j], 0.0);
    const auto g = m.params().flat_grads();
    for (std::size_t j = 0; j < g.size(); ++j) mean[j] += g[j];
  }
  for (double v : mean) EXPECT_EQ(v, 0.0);
}

TEST(RlStep, GreedySampleCancelsBaseline) {
  lm::LanguageModel m(tiny_lm());
  m.zero_parameters();
  // The end of sentence dominates every step, so sample and greedy agree.
  m.params().get("lm.out.b").value.at(0, 1) = 60.0;
  Discriminator d({m.config().encoding_dim(), 4, 2});
  Rng rng(16);
  m.params().zero_grad();
  const auto r = rl_step(m, d, {{2, 3}, {4}}, 5, rng);
  EXPECT_EQ(r.rewards, r.baselines);
  EXPECT_EQ(abs_sum(m.params()), 0.0);
}

TrainConfig quick_config() {
  TrainConfig t;
  t.batch_size = 4;
  t.max_iterations = 24;
  t.eval_interval = 2;
  t.switch_window = 2;
  t.eval_pairs = 16;
  t.lm_learning_rate = 0.5;
  return t;
}

TEST(Trainer, ZeroWeightsMatchPureMle) {
  const auto train = synth(8, 17), valid = synth(3, 18);
  lm::LanguageModel a(tiny_lm());
  Discriminator da({a.config().encoding_dim(), 4, 2});
  TrainConfig cfg = quick_config();
  cfg.regularizer_weight = 0.0;
  cfg.iw_raml_weight = 0.0;
  Trainer t(a, da, cfg, train, valid);
  for (int i = 0; i < 10; ++i) t.iterate();

  // Reference loop: the same MLE batches and the same optimizer, nothing else.
  lm::LanguageModel b(tiny_lm());
  numerics::Sgd sgd{cfg.lm_learning_rate, cfg.lm_clip_norm};
  Rng rng = make_rng(cfg.seed, "train.mle");
  for (int i = 0; i < 10; ++i) {
    std::vector<std::vector<corpus::TokenId>> streams;
    const std::size_t total = train.num_sentences();
    for (std::size_t k = 0; k < cfg.batch_size; ++k) {
      std::size_t j = uniform_index(rng, total), doc = 0;
      while (j >= train.documents[doc].size()) j -= train.documents[doc++].size();
      const auto& D = train.documents[doc];
      streams.push_back(lm::document_stream(
          {D.begin() + j, D.begin() + std::min(D.size(), j + cfg.mle_window)}));
    }
    b.params().zero_grad();
    mle_step(b, streams);
    sgd.step(b.params());
  }
  EXPECT_EQ(a.params().flat_values(), b.params().flat_values());
}

TEST(Trainer, BaseConfigNeverSwitches) {
  const auto train = synth(8, 19), valid = synth(3, 20);
  lm::LanguageModel m(tiny_lm());
  Discriminator d({m.config().encoding_dim(), 4, 2});
  TrainConfig cfg = quick_config();
  cfg.iw_raml_weight = 0.0;
  cfg.lm_learning_rate = 5.0;  // noisy validation curve
  const auto s = Trainer(m, d, cfg, train, valid).run();
  EXPECT_FALSE(s.phase.switch_iteration.has_value());
  for (const auto& r : s.metrics) {
    EXPECT_EQ(r.phase, Phase::One);
    EXPECT_FALSE(r.mean_iw_entropy.has_value());
  }
}

TEST(Trainer, FullRunSwitchesOnceAndIsDeterministic) {
  const auto train = synth(8, 21), valid = synth(3, 22);
  std::vector<std::string> streams[2];
  std::vector<std::string> tags;
  for (int rep = 0; rep < 2; ++rep) {
    lm::LanguageModel m(tiny_lm());
    Discriminator d({m.config().encoding_dim(), 4, 2});
    TrainConfig cfg = quick_config();
    cfg.lm_learning_rate = 3.0;
    cfg.max_iterations = 60;
    TrainHooks hooks;
    hooks.on_metrics = [&](const MetricsRecord& r) { streams[rep].push_back(r.to_json()); };
    hooks.on_checkpoint = [&](const std::string& tag) {
      if (rep == 0) tags.push_back(tag);
    };
    const auto s = Trainer(m, d, cfg, train, valid).run(hooks);
    ASSERT_TRUE(s.phase.switch_iteration.has_value());
    int flips = 0;
    for (std::size_t i = 1; i < s.metrics.size(); ++i)
      flips += s.metrics[i].phase != s.metrics[i - 1].phase;
    EXPECT_EQ(flips + (s.metrics[0].phase == Phase::Two), 1);
    for (const auto& r : s.metrics)
      if (r.iteration > *s.phase.switch_iteration) EXPECT_TRUE(r.mean_iw_entropy.has_value());
  }
  EXPECT_EQ(streams[0], streams[1]);
  EXPECT_EQ(std::count(tags.begin(), tags.end(), "switch"), 1);
  EXPECT_EQ(tags.back(), "final");
}

TEST(Trainer, DivergenceGuard) {
  const auto train = synth(8, 23), valid = synth(3, 24);
  lm::LanguageModel m(tiny_lm());
  Discriminator d({m.config().encoding_dim(), 4, 2});
  TrainConfig cfg = quick_config();
  cfg.lm_learning_rate = 1e300;
  cfg.lm_clip_norm = 0.0;
  Trainer t(m, d, cfg, train, valid);
  EXPECT_THROW(
      {
        for (int i = 0; i < 5; ++i) t.iterate();
        t.evaluate();
      },
      DivergenceError);
}

TEST(Trainer, ConfigValidation) {
  TrainConfig c;
  c.beta = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.regularizer_weight = -1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(MetricsRecord, JsonShape) {
  MetricsRecord r;
  r.iteration = 5;
  r.valid_ppl = 2.5;
  EXPECT_EQ(r.to_json(),
            R"({"iteration":5,"phase":"one","train_nll":0.0,"valid_ppl":2.5,"proxy_value":0.0,)"
            R"("dv_estimate":0.0,"mean_iw_entropy":null})");
}

}  // namespace
}  // namespace bmi::training

namespace bmi::training {
namespace {

TEST(IwRamlStep, SelfNormalizedEstimateMatchesEnumeration) {
  lm::LanguageModel m(tiny_lm());
  Discriminator d({m.config().encoding_dim(), 6, 31});
  corpus::Corpus c;
  for (const char* t : {"a", "b", "c", "d"}) c.vocab.add(t);
  c.documents = {{{2, 3}, {4}, {5, 2, 2}, {3, 3}, {4, 5}}};
  corpus::SegmentPair p;
  p.x = {2, 3};
  p.y = {4};
  p.x_doc = p.y_doc = 0;
  p.x_index = 0;
  p.y_index = 1;
  const double beta = 0.5, lambda = 0.4;

  // Exact: the reward-tilted law over positions >= y*'s index.
  std::vector<double> logits, nll;
  for (std::size_t k = 1; k < 5; ++k) {
    logits.push_back(raml_reward(m, d, p.x, c.documents[0][k], p.y) / beta);
    nll.push_back(-m.sequence_log_prob(p.x, c.documents[0][k]));
  }
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0, exact = 0;
  for (double l : logits) z += std::exp(l - mx);
  for (std::size_t k = 0; k < logits.size(); ++k) exact += std::exp(logits[k] - mx) / z * nll[k];

  Rng rng(32);
  auto cands = propose_candidates(c, {p}, 20000, lambda, rng);
  weigh_candidates(m, d, cands, beta);
  m.params().zero_grad();
  const auto r = iw_raml_step(m, cands);
  EXPECT_NEAR(r.weighted_nll, exact, 0.02);
}

TEST(Perplexity, IsExpOfMeanTokenNll) {
  lm::LanguageModel m(tiny_lm());
  const auto c = synth(3, 33);
  std::vector<std::vector<corpus::TokenId>> streams;
  for (const auto& doc : c.documents) streams.push_back(lm::document_stream(doc));
  const auto step = mle_step(m, streams);
  const auto nll = lm::corpus_nll(m, c);
  EXPECT_EQ(step.tokens, nll.tokens);
  EXPECT_NEAR(std::exp(step.loss), std::exp(nll.nll / double(nll.tokens)), 1e-10);
}

}  // namespace
}  // namespace bmi::training
