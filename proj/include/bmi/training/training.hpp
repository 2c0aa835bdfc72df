#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "bmi/corpus/sampling.hpp"
#include "bmi/discriminator/discriminator.hpp"
#include "bmi/lm/lm.hpp"
#include "bmi/numerics/optim.hpp"
#include "bmi/util/key_values.hpp"

namespace bmi::training {

using corpus::Corpus;
using corpus::Sentence;
using discriminator::Discriminator;
using lm::LanguageModel;

struct TrainConfig {
  std::size_t batch_size = 16;            // M
  std::size_t mle_window = 4;             // consecutive sentences per MLE stream
  double regularizer_weight = 0.1;        // Phase-I term
  double iw_raml_weight = 0.1;            // Phase-II term; 0 keeps phase one forever
  double beta = 1.0;
  double proposal_lambda = 0.3;
  std::size_t candidates_per_x = 2;
  double lm_learning_rate = 1.0;
  double lm_clip_norm = 1.0;
  double disc_learning_rate = 3e-3;
  double disc_weight_decay = 1e-5;
  std::size_t max_iterations = 1000;
  std::size_t eval_interval = 50;
  std::size_t switch_window = 5;
  std::size_t eval_pairs = 512;           // validation pairs for the DV estimate
  std::uint64_t seed = 1;

  void validate() const;
  static TrainConfig from_key_values(const KeyValues& kv, const std::string& prefix = "train.");
  void write_key_values(std::ostream& out, const std::string& prefix = "train.") const;
};

enum class Phase { One, Two };
const char* to_string(Phase p);

struct PhaseState {
  Phase phase = Phase::One;
  std::vector<double> history;  // validation perplexities in evaluation order
  double best = 0.0;
  std::optional<std::size_t> switch_iteration;
};

// True when the latest entry is no better than the best of the n entries
// before it; false with fewer than n + 1 entries.
bool switch_condition(const std::vector<double>& history, std::size_t window);

// Graph-path steps. Each accumulates the gradient of its loss (the quantity to
// descend) into the parameters it touches; callers zero gradients.

struct MleResult {
  double loss = 0.0;  // mean NLL per predicted token
  std::size_t tokens = 0;
};
MleResult mle_step(LanguageModel& model, const std::vector<std::vector<corpus::TokenId>>& streams);

// `batch` streams, each up to `window` consecutive sentences starting at a
// uniformly drawn sentence of the corpus.
std::vector<std::vector<corpus::TokenId>> sample_mle_streams(const Corpus& corpus,
                                                             std::size_t batch,
                                                             std::size_t window, Rng& rng);

struct Phase1Result {
  double proxy = 0.0;
  double dv = 0.0;  // DV bound on the same scores
};

struct Phase1Graph {
  numerics::Var scores;  // [a + b]: joint rows first
  numerics::Var proxy;
  std::size_t n_joint = 0, n_marginal = 0;
};
Phase1Graph build_phase1(numerics::Graph& g, const LanguageModel& model,
                         const lm::LMNodes& ln, const Discriminator& disc,
                         const discriminator::DiscriminatorNodes& dn,
                         const std::vector<corpus::SegmentPair>& positives,
                         const std::vector<corpus::SegmentPair>& negatives);
// Loss is -proxy; gradients reach both the discriminator and the encoder.
Phase1Result phase1_step(LanguageModel& model, Discriminator& disc,
                         const std::vector<corpus::SegmentPair>& positives,
                         const std::vector<corpus::SegmentPair>& negatives);

// D(phi x, phi y) - D(phi x, phi y*) on the plain path.
double raml_reward(const LanguageModel& model, const Discriminator& disc, const Sentence& x,
                   const Sentence& y, const Sentence& y_star);

struct WeightedCandidate {
  Sentence x;
  Sentence y;
  Sentence y_star;
  double reward = 0.0;
  double proposal_prob = 0.0;
  double log_raw_weight = 0.0;  // log u = r / beta - log g
  double weight = 0.0;          // self-normalized over the minibatch
};

// Rewards, raw and normalized weights; throws DegenerateWeightError when no
// weight is positive and finite.
void weigh_candidates(const LanguageModel& model, const Discriminator& disc,
                      std::vector<WeightedCandidate>& candidates, double beta);
// Normalizes log raw weights in place (shift by the max).
void normalize_weights(std::vector<WeightedCandidate>& candidates);
double weight_entropy(const std::vector<WeightedCandidate>& candidates);

// -sum w_i log Q(y_i | x_i) with the weights held constant.
numerics::Var build_iw_raml_loss(numerics::Graph& g, const LanguageModel& model,
                                 const lm::LMNodes& ln,
                                 const std::vector<WeightedCandidate>& weighted);

struct IwRamlResult {
  double weighted_nll = 0.0;
  double weight_entropy = 0.0;
};
// Seeds the backward pass of -sum w_i log Q(y_i | x_i) with `scale`; only the
// language model receives gradients.
IwRamlResult iw_raml_step(LanguageModel& model, const std::vector<WeightedCandidate>& weighted,
                          double scale = 1.0);

// Draws candidates for (x, y*) pairs from the geometric proposal over later
// sentences of the same document.
std::vector<WeightedCandidate> propose_candidates(const Corpus& corpus,
                                                  const std::vector<corpus::SegmentPair>& pairs,
                                                  std::size_t per_x, double lambda, Rng& rng);

struct RlResult {
  std::vector<double> rewards;    // R+ of the sampled sequence
  std::vector<double> baselines;  // R+ of the greedy sequence
};
// Self-critical policy gradient on -(R+ - b) log Q(y | x), averaged over xs.
RlResult rl_step(LanguageModel& model, const Discriminator& disc, const std::vector<Sentence>& xs,
                 std::size_t max_len, Rng& rng);

struct MetricsRecord {
  std::size_t iteration = 0;
  Phase phase = Phase::One;
  double train_nll = 0.0;
  double valid_ppl = 0.0;
  double proxy_value = 0.0;
  double dv_estimate = 0.0;
  std::optional<double> mean_iw_entropy;

  std::string to_json() const;
};

struct TrainHooks {
  std::function<void(const MetricsRecord&)> on_metrics;
  // Tags: "switch", "best", "final".
  std::function<void(const std::string& tag)> on_checkpoint;
};

struct TrainSummary {
  std::vector<MetricsRecord> metrics;
  PhaseState phase;
  double best_valid_ppl = 0.0;
  std::size_t best_iteration = 0;
};

class Trainer {
 public:
  Trainer(LanguageModel& model, Discriminator& disc, TrainConfig config, const Corpus& train,
          const Corpus& valid);

  // One combined update; returns the MLE loss.
  double iterate();
  MetricsRecord evaluate();
  TrainSummary run(const TrainHooks& hooks = {});

  const PhaseState& phase() const { return phase_; }
  std::size_t iteration() const { return iteration_; }

 private:
  LanguageModel* model_;
  Discriminator* disc_;
  TrainConfig config_;
  const Corpus* train_;
  const Corpus* valid_;
  corpus::PairSampler sampler_;
  corpus::PairSampler valid_sampler_;
  numerics::Sgd sgd_;
  numerics::Adam adam_;
  Rng mle_rng_, phase1_rng_, phase2_rng_;
  std::vector<corpus::SegmentPair> eval_pos_, eval_neg_;
  PhaseState phase_;
  std::size_t iteration_ = 0;
  double nll_sum_ = 0.0;
  std::size_t nll_count_ = 0;
  double entropy_sum_ = 0.0;
  std::size_t entropy_count_ = 0;
};

// Validation DV and proxy of the training discriminator over fixed pairs.
Phase1Result validation_bound(const LanguageModel& model, const Discriminator& disc,
                              const std::vector<corpus::SegmentPair>& positives,
                              const std::vector<corpus::SegmentPair>& negatives);

}  // namespace bmi::training
