#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "bmi/corpus/corpus.hpp"
#include "bmi/util/key_values.hpp"

namespace bmi::mi {

enum class LawSource { Data, Model };
const char* to_string(LawSource s);

struct MIEstimate {
  double dv = 0.0;
  double proxy = 0.0;
  std::size_t n_joint = 0;
  std::size_t n_marginal = 0;
  LawSource law_source = LawSource::Data;
  int fold = -1;

  std::string to_json() const;
  static MIEstimate from_json(const std::string& line);
};

// Aligned segment pairs: (x[i], y[i]) are dependent draws.
struct PairSet {
  std::vector<corpus::Sentence> x, y;
  std::size_t size() const { return x.size(); }
};

// Every (S_t, S_{t+1}) within each document.
PairSet consecutive_sentence_pairs(const corpus::Corpus& corpus);
// Token windows over each document's stream s1 </s> s2 </s> ...: X is
// `length` tokens, Y the next `length` tokens after skipping `gap`; windows do
// not overlap.
PairSet span_pairs(const corpus::Corpus& corpus, std::size_t length, std::size_t gap);

enum class Pooling { Max, Mean };
const char* to_string(Pooling p);

// Standalone evaluation discriminator. The encoder is a fresh token embedding
// pooled over positions, followed by the usual feature map and scorer.
struct EvalConfig {
  Pooling pooling = Pooling::Mean;
  std::size_t embedding_dim = 16;
  std::size_t hidden = 16;
  std::size_t folds = 5;
  std::size_t batch = 64;
  std::size_t max_epochs = 30;
  std::size_t patience = 4;
  double learning_rate = 1e-2;
  std::size_t marginal_shifts = 4;  // marginal pairings per joint pair at evaluation
  std::uint64_t seed = 1;

  void validate() const;
  static EvalConfig from_key_values(const KeyValues& kv, const std::string& prefix = "mi_eval.");
  void write_key_values(std::ostream& out, const std::string& prefix = "mi_eval.") const;
};

// Trains on `train`, early-stops on the validation DV bound, reports DV and
// proxy on `test`.
MIEstimate train_eval_discriminator(const PairSet& train, const PairSet& valid,
                                    const PairSet& test, std::size_t vocab_size,
                                    const EvalConfig& config, LawSource source, int fold = -1);

struct KFoldEstimate {
  double mean = 0.0;
  double standard_error = 0.0;
  std::vector<MIEstimate> folds;
};

// Fold i is the test set, fold i+1 the validation set and the rest train.
// Throws DataError when the pairs cannot fill the folds.
KFoldEstimate kfold_mi(const PairSet& pairs, std::size_t vocab_size, const EvalConfig& config,
                       LawSource source);

}  // namespace bmi::mi
