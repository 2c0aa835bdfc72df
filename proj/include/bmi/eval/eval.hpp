#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "bmi/corpus/corpus.hpp"
#include "bmi/discriminator/discriminator.hpp"
#include "bmi/lm/lm.hpp"
#include "bmi/mi/estimator.hpp"
#include "bmi/util/key_values.hpp"

namespace bmi::eval {

using corpus::Corpus;
using corpus::Sentence;
using lm::LanguageModel;

// exp(mean NLL per token) with every end of sentence counted. Throws DataError
// on an empty corpus.
double perplexity(const LanguageModel& model, const Corpus& corpus);

struct GenerationConfig {
  std::size_t tokens = 20000;               // stop once this many words are emitted
  std::size_t sentences_per_document = 10;
  std::size_t max_sentence_len = 32;
  double temperature = 1.0;
  std::uint64_t seed = 1;

  void validate() const;
  static GenerationConfig from_key_values(const KeyValues& kv, const std::string& prefix = "gen.");
  void write_key_values(std::ostream& out, const std::string& prefix = "gen.") const;
};

// Documents sampled as continuous streams, a fresh state per document. Empty
// sentences are dropped from the text but still fed to the model.
Corpus generate_corpus(const LanguageModel& model, const corpus::Vocabulary& vocab,
                       const GenerationConfig& config);

// Share of the most frequent word among all words of the corpus.
double top_token_fraction(const Corpus& corpus);

struct MleConfig {
  std::size_t iterations = 2000;
  std::size_t batch_size = 16;
  std::size_t window = 4;
  double learning_rate = 1.0;
  double clip_norm = 1.0;
  std::uint64_t seed = 1;

  void validate() const;
  static MleConfig from_key_values(const KeyValues& kv, const std::string& prefix = "reverse.");
  void write_key_values(std::ostream& out, const std::string& prefix = "reverse.") const;
};

// Plain MLE with clipped SGD; returns the mean loss of the last 10% of steps.
double train_mle(LanguageModel& model, const Corpus& corpus, const MleConfig& config);

// Generator architecture with every hidden width halved.
lm::LMConfig second_lm_config(const lm::LMConfig& generator, std::uint64_t seed);

struct ReversePplReport {
  double reverse_ppl = 0.0;
  std::size_t generated_tokens = 0;
  std::size_t generated_sentences = 0;
  double top_token_fraction = 0.0;
  bool degenerate = false;  // one word is more than 90% of the output

  std::string to_json() const;
  static ReversePplReport from_json(const std::string& text);
};

// Trains a fresh second model on `generated` and scores `heldout` with it.
ReversePplReport reverse_perplexity_from_text(const Corpus& generated, const Corpus& heldout,
                                              const lm::LMConfig& second,
                                              const MleConfig& training);
ReversePplReport reverse_perplexity(const LanguageModel& model, const Corpus& heldout,
                                    const GenerationConfig& generation,
                                    const lm::LMConfig& second, const MleConfig& training);

struct EmpiricalMiReport {
  mi::KFoldEstimate estimate;
  std::size_t segment_len = 0;  // 0: consecutive sentences
  std::size_t gap = 0;
  std::size_t pairs = 0;

  std::string to_json() const;
  static EmpiricalMiReport from_json(const std::string& text);
};

// Pairs from text: consecutive sentences when segment_len is 0, otherwise
// token spans of segment_len separated by gap.
EmpiricalMiReport empirical_mi_of_text(const Corpus& text, std::size_t segment_len,
                                       std::size_t gap, const mi::EvalConfig& config,
                                       mi::LawSource source);
EmpiricalMiReport empirical_mi(const LanguageModel& model, const corpus::Vocabulary& vocab,
                               const GenerationConfig& generation, std::size_t segment_len,
                               std::size_t gap, const mi::EvalConfig& config);

// Per-coordinate running mean and variance (Welford).
class GradientMoments {
 public:
  explicit GradientMoments(std::size_t dim);
  void add(const std::vector<double>& grad);
  std::size_t count() const { return count_; }
  // Population variance per coordinate.
  std::vector<double> variance() const;

 private:
  std::size_t count_ = 0;
  std::vector<double> mean_, m2_;
};

struct HistogramBin {
  double low = 0.0, high = 0.0;  // ratio bounds, not logs
  std::size_t count = 0;
};

inline constexpr double kVarianceEpsilon = 1e-30;

struct VarianceReport {
  std::vector<double> ratios;  // (var_rl + eps) / (var_iw + eps) per LM coordinate
  double median = 0.0;
  double geometric_mean = 0.0;
  std::vector<HistogramBin> histogram;  // log10 bins of width 0.25
  std::size_t iterations = 0;
  std::uint64_t hash_before = 0, hash_after = 0;

  std::string to_json() const;  // summary and histogram, omitting raw ratios
  static VarianceReport from_json(const std::string& text);
  void write_histogram_csv(std::ostream& out) const;
  // Text histogram with marks at ratios 0.1, 1 and 10.
  std::string render() const;
};

VarianceReport variance_report(const std::vector<double>& var_rl,
                               const std::vector<double>& var_iw);

struct VarianceConfig {
  std::size_t iterations = 200;
  std::size_t batch_size = 16;
  std::size_t candidates_per_x = 2;
  double beta = 1.0;
  double proposal_lambda = 0.3;
  std::size_t max_sentence_len = 32;
  std::uint64_t seed = 1;

  void validate() const;  // iterations < 20 is a StatisticsError
  static VarianceConfig from_key_values(const KeyValues& kv,
                                        const std::string& prefix = "variance.");
  void write_key_values(std::ostream& out, const std::string& prefix = "variance.") const;
};

// Holds parameters fixed and gathers RL and IW-RAML gradients of the language
// model on fresh batches from `corpus` without applying any update.
VarianceReport grad_variance_ratio(LanguageModel& model, discriminator::Discriminator& disc,
                                   const Corpus& corpus, const VarianceConfig& config);

struct PinskerReport {
  double tv = 0.0;  // half the L1 distance
  double kl = 0.0;  // KL(P || Q)
  std::size_t outcomes = 0;
  double overflow_mass = 0.0;  // Q mass on sentences longer than the limit

  double loose_bound() const;  // sqrt(2 KL)
  double tight_bound() const;  // sqrt(KL / 2)
};

// P is the empirical sentence law of `corpus`; Q is the model's law of a
// sentence after </s>, enumerated over every token sequence up to max_len with
// longer sentences lumped into one outcome. Throws InputError if a corpus
// sentence is longer than max_len.
PinskerReport pinsker_check(const LanguageModel& model, const Corpus& corpus,
                            std::size_t max_len);

}  // namespace bmi::eval
