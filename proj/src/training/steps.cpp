#include <cmath>
#include <limits>
#include <ostream>

#include "bmi/error.hpp"
#include "bmi/mi/bounds.hpp"
#include "bmi/training/training.hpp"

namespace bmi::training {

using numerics::Graph;
using numerics::Tensor;
using numerics::Var;

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("train.batch_size must be at least 1");
  if (mle_window < 1) throw ConfigError("train.mle_window must be at least 1");
  if (!(regularizer_weight >= 0.0)) throw ConfigError("train.regularizer_weight must be >= 0");
  if (!(iw_raml_weight >= 0.0)) throw ConfigError("train.iw_raml_weight must be >= 0");
  if (!(beta > 0.0)) throw ConfigError("train.beta must be positive");
  if (!(proposal_lambda > 0.0 && proposal_lambda < 1.0))
    throw ConfigError("train.proposal_lambda must lie in (0, 1)");
  if (candidates_per_x < 1) throw ConfigError("train.candidates_per_x must be at least 1");
  if (!(lm_learning_rate > 0.0)) throw ConfigError("train.lm_learning_rate must be positive");
  if (!(lm_clip_norm >= 0.0)) throw ConfigError("train.lm_clip_norm must be >= 0");
  if (!(disc_learning_rate > 0.0)) throw ConfigError("train.disc_learning_rate must be positive");
  if (!(disc_weight_decay >= 0.0)) throw ConfigError("train.disc_weight_decay must be >= 0");
  if (eval_interval < 1) throw ConfigError("train.eval_interval must be at least 1");
  if (switch_window < 1) throw ConfigError("train.switch_window must be at least 1");
  if (eval_pairs < 2) throw ConfigError("train.eval_pairs must be at least 2");
}

TrainConfig TrainConfig::from_key_values(const KeyValues& kv, const std::string& p) {
  TrainConfig c;
  c.batch_size = kv.get_u64(p + "batch_size", c.batch_size);
  c.mle_window = kv.get_u64(p + "mle_window", c.mle_window);
  c.regularizer_weight = kv.get_double(p + "regularizer_weight", c.regularizer_weight);
  c.iw_raml_weight = kv.get_double(p + "iw_raml_weight", c.iw_raml_weight);
  c.beta = kv.get_double(p + "beta", c.beta);
  c.proposal_lambda = kv.get_double(p + "proposal_lambda", c.proposal_lambda);
  c.candidates_per_x = kv.get_u64(p + "candidates_per_x", c.candidates_per_x);
  c.lm_learning_rate = kv.get_double(p + "lm_learning_rate", c.lm_learning_rate);
  c.lm_clip_norm = kv.get_double(p + "lm_clip_norm", c.lm_clip_norm);
  c.disc_learning_rate = kv.get_double(p + "disc_learning_rate", c.disc_learning_rate);
  c.disc_weight_decay = kv.get_double(p + "disc_weight_decay", c.disc_weight_decay);
  c.max_iterations = kv.get_u64(p + "max_iterations", c.max_iterations);
  c.eval_interval = kv.get_u64(p + "eval_interval", c.eval_interval);
  c.switch_window = kv.get_u64(p + "switch_window", c.switch_window);
  c.eval_pairs = kv.get_u64(p + "eval_pairs", c.eval_pairs);
  c.seed = kv.get_u64(p + "seed", c.seed);
  return c;
}

void TrainConfig::write_key_values(std::ostream& out, const std::string& p) const {
  const auto old = out.precision(17);
  out << p << "batch_size = " << batch_size << "\n"
      << p << "mle_window = " << mle_window << "\n"
      << p << "regularizer_weight = " << regularizer_weight << "\n"
      << p << "iw_raml_weight = " << iw_raml_weight << "\n"
      << p << "beta = " << beta << "\n"
      << p << "proposal_lambda = " << proposal_lambda << "\n"
      << p << "candidates_per_x = " << candidates_per_x << "\n"
      << p << "lm_learning_rate = " << lm_learning_rate << "\n"
      << p << "lm_clip_norm = " << lm_clip_norm << "\n"
      << p << "disc_learning_rate = " << disc_learning_rate << "\n"
      << p << "disc_weight_decay = " << disc_weight_decay << "\n"
      << p << "max_iterations = " << max_iterations << "\n"
      << p << "eval_interval = " << eval_interval << "\n"
      << p << "switch_window = " << switch_window << "\n"
      << p << "eval_pairs = " << eval_pairs << "\n"
      << p << "seed = " << seed << "\n";
  out.precision(old);
}

const char* to_string(Phase p) { return p == Phase::One ? "one" : "two"; }

bool switch_condition(const std::vector<double>& history, std::size_t window) {
  if (window == 0 || history.size() < window + 1) return false;
  const double current = history.back();
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = history.size() - 1 - window; i + 1 < history.size(); ++i)
    best = std::min(best, history[i]);
  return !(current < best);
}

MleResult mle_step(LanguageModel& model, const std::vector<std::vector<corpus::TokenId>>& streams) {
  if (streams.empty()) throw UsageError("mle_step needs a non-empty batch");
  MleResult r;
  for (const auto& s : streams) r.tokens += s.size() - 1;
  Graph g;
  const auto n = model.bind(g);
  Var loss = g.scale(model.streams_nll(g, n, streams), 1.0 / static_cast<double>(r.tokens));
  g.forward();
  r.loss = g.value(loss).item();
  g.backward(loss);
  return r;
}

Phase1Graph build_phase1(Graph& g, const LanguageModel& model, const lm::LMNodes& ln,
                         const Discriminator& disc, const discriminator::DiscriminatorNodes& dn,
                         const std::vector<corpus::SegmentPair>& positives,
                         const std::vector<corpus::SegmentPair>& negatives) {
  if (positives.empty() || negatives.empty()) throw UsageError("phase1_step needs both batches");
  std::vector<Sentence> all;
  for (const auto* batch : {&positives, &negatives})
    for (const auto& p : *batch) all.push_back(p.x);
  for (const auto* batch : {&positives, &negatives})
    for (const auto& p : *batch) all.push_back(p.y);
  Phase1Graph r;
  r.n_joint = positives.size();
  r.n_marginal = negatives.size();
  const std::size_t n = r.n_joint + r.n_marginal;
  Var enc = model.encode_batch(g, ln, all);
  r.scores = disc.score(g, dn, g.slice(enc, 0, 0, n), g.slice(enc, 0, n, 2 * n));
  r.proxy = mi::proxy_objective(g, g.slice(r.scores, 0, 0, r.n_joint),
                                g.slice(r.scores, 0, r.n_joint, n));
  return r;
}

Phase1Result phase1_step(LanguageModel& model, Discriminator& disc,
                         const std::vector<corpus::SegmentPair>& positives,
                         const std::vector<corpus::SegmentPair>& negatives) {
  Graph g;
  const auto ln = model.bind(g);
  const auto dn = disc.bind(g);
  const Phase1Graph p = build_phase1(g, model, ln, disc, dn, positives, negatives);
  Var loss = g.neg(p.proxy);
  g.forward();
  const auto& sv = g.value(p.scores).storage();
  Phase1Result r;
  r.proxy = g.value(p.proxy).item();
  r.dv = mi::dv_bound(std::span<const double>(sv.data(), p.n_joint),
                      std::span<const double>(sv.data() + p.n_joint, p.n_marginal));
  g.backward(loss);
  return r;
}

namespace {

std::vector<double> encode_or_zero(const LanguageModel& model, const Sentence& s) {
  if (s.empty()) return std::vector<double>(model.config().encoding_dim(), 0.0);
  return model.encode(s);
}

}  // namespace

double raml_reward(const LanguageModel& model, const Discriminator& disc, const Sentence& x,
                   const Sentence& y, const Sentence& y_star) {
  if (x.empty() || y.empty() || y_star.empty()) throw InputError("raml_reward needs segments");
  const auto ex = model.encode(x);
  if (y == y_star) return 0.0;
  return disc.score(ex, model.encode(y)) - disc.score(ex, model.encode(y_star));
}

void normalize_weights(std::vector<WeightedCandidate>& candidates) {
  if (candidates.empty()) throw UsageError("no candidates to weigh");
  double m = -std::numeric_limits<double>::infinity();
  for (const auto& c : candidates)
    if (std::isfinite(c.log_raw_weight)) m = std::max(m, c.log_raw_weight);
  if (!std::isfinite(m)) throw DegenerateWeightError("every importance weight is zero");
  double total = 0.0;
  for (auto& c : candidates) {
    c.weight = std::isfinite(c.log_raw_weight) ? std::exp(c.log_raw_weight - m) : 0.0;
    total += c.weight;
  }
  for (auto& c : candidates) c.weight /= total;
}

void weigh_candidates(const LanguageModel& model, const Discriminator& disc,
                      std::vector<WeightedCandidate>& candidates, double beta) {
  if (!(beta > 0.0)) throw ConfigError("beta must be positive");
  for (auto& c : candidates) {
    if (!(c.proposal_prob > 0.0)) throw InputError("candidate without proposal probability");
    c.reward = raml_reward(model, disc, c.x, c.y, c.y_star);
    c.log_raw_weight = c.reward / beta - std::log(c.proposal_prob);
  }
  normalize_weights(candidates);
}

double weight_entropy(const std::vector<WeightedCandidate>& candidates) {
  double h = 0.0;
  for (const auto& c : candidates)
    if (c.weight > 0.0) h -= c.weight * std::log(c.weight);
  return h;
}

Var build_iw_raml_loss(Graph& g, const LanguageModel& model, const lm::LMNodes& ln,
                       const std::vector<WeightedCandidate>& weighted) {
  if (weighted.empty()) throw UsageError("iw_raml_step needs candidates");
  std::vector<Sentence> xs, ys;
  std::vector<double> w;
  for (const auto& c : weighted) {
    xs.push_back(c.x);
    ys.push_back(c.y);
    w.push_back(c.weight);
  }
  Var lp = model.sequence_log_probs(g, ln, xs, ys);
  return g.neg(g.sum(g.mul(lp, g.constant(Tensor::vector(w)))));
}

IwRamlResult iw_raml_step(LanguageModel& model, const std::vector<WeightedCandidate>& weighted,
                          double scale) {
  Graph g;
  const auto n = model.bind(g);
  Var loss = build_iw_raml_loss(g, model, n, weighted);
  g.forward();
  IwRamlResult r;
  r.weighted_nll = g.value(loss).item();
  r.weight_entropy = weight_entropy(weighted);
  g.backward(loss, Tensor::scalar(scale));
  return r;
}

std::vector<WeightedCandidate> propose_candidates(const Corpus& corpus,
                                                  const std::vector<corpus::SegmentPair>& pairs,
                                                  std::size_t per_x, double lambda, Rng& rng) {
  std::vector<WeightedCandidate> out;
  for (const auto& p : pairs) {
    if (p.law != corpus::PairLaw::Joint) throw UsageError("proposals start from joint pairs");
    const auto& doc = corpus.documents[p.y_doc];
    for (std::size_t i = 0; i < per_x; ++i) {
      const auto d = corpus::geometric_proposal(doc, p.y_index, lambda, rng);
      WeightedCandidate c;
      c.x = p.x;
      c.y_star = p.y;
      c.y = doc[d.index];
      c.proposal_prob = d.probability;
      out.push_back(std::move(c));
    }
  }
  return out;
}

RlResult rl_step(LanguageModel& model, const Discriminator& disc, const std::vector<Sentence>& xs,
                 std::size_t max_len, Rng& rng) {
  if (xs.empty()) throw UsageError("rl_step needs inputs");
  RlResult r;
  std::vector<Sentence> samples;
  std::vector<double> coef;
  for (const auto& x : xs) {
    const Sentence y = model.sample_sequence(x, max_len, 1.0, rng);
    const Sentence greedy = model.greedy_sequence(x, max_len);
    const auto ex = model.encode(x);
    const double reward = -numerics::softplus(-disc.score(ex, encode_or_zero(model, y)));
    const double base =
        y == greedy ? reward : -numerics::softplus(-disc.score(ex, encode_or_zero(model, greedy)));
    r.rewards.push_back(reward);
    r.baselines.push_back(base);
    samples.push_back(y);
    coef.push_back((reward - base) / static_cast<double>(xs.size()));
  }
  Graph g;
  const auto n = model.bind(g);
  Var lp = model.sequence_log_probs(g, n, xs, samples);
  Var loss = g.neg(g.sum(g.mul(lp, g.constant(Tensor::vector(coef)))));
  g.forward();
  g.backward(loss);
  return r;
}

Phase1Result validation_bound(const LanguageModel& model, const Discriminator& disc,
                              const std::vector<corpus::SegmentPair>& positives,
                              const std::vector<corpus::SegmentPair>& negatives) {
  std::vector<double> joint, marginal;
  for (const auto& p : positives) joint.push_back(disc.score(model.encode(p.x), model.encode(p.y)));
  for (const auto& p : negatives)
    marginal.push_back(disc.score(model.encode(p.x), model.encode(p.y)));
  return {mi::proxy_objective(joint, marginal), mi::dv_bound(joint, marginal)};
}

}  // namespace bmi::training
