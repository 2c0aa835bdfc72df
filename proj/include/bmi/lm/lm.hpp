#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "bmi/corpus/corpus.hpp"
#include "bmi/numerics/graph.hpp"
#include "bmi/util/key_values.hpp"
#include "bmi/util/random.hpp"

namespace bmi::lm {

using corpus::Sentence;
using corpus::TokenId;
using numerics::Graph;
using numerics::Var;

struct LMConfig {
  std::size_t vocab_size = 0;  // including the reserved ids
  std::size_t embedding_dim = 32;
  std::vector<std::size_t> hidden = {64, 64};
  bool tie_embeddings = false;
  std::uint64_t seed = 1;

  void validate() const;
  std::size_t encoding_dim() const;

  static LMConfig from_key_values(const KeyValues& kv, const std::string& prefix = "lm.");
  void write_key_values(std::ostream& out, const std::string& prefix = "lm.") const;
};

// Hidden vector per layer.
struct LMState {
  std::vector<std::vector<double>> h;
};

struct ForwardResult {
  // log_probs[i] is the next-token distribution after consuming tokens[i].
  std::vector<std::vector<double>> log_probs;
  // hidden[i][l] is layer l's state after consuming tokens[i].
  std::vector<std::vector<std::vector<double>>> hidden;
  LMState final_state;
};

// Parameter handles inside one Graph.
struct LMNodes {
  struct Layer {
    Var wx, wh, bx, bh;
  };
  Var embedding;
  std::vector<Layer> layers;
  Var w_out, b_out;
};

// Per-step graph values of a batched run.
struct BatchTrace {
  std::vector<Var> logits;                 // [step] -> [B, K]
  std::vector<std::vector<Var>> hidden;    // [step][layer] -> [B, H_l]
};

// Layered GRU language model. Token id 1 (end of sentence) doubles as the
// start symbol, so a sentence y scored after x sees the stream
// </s> x </s> y </s>.
class LanguageModel {
 public:
  explicit LanguageModel(LMConfig config, std::string prefix = "lm.");

  const LMConfig& config() const { return config_; }
  numerics::ParameterSet& params() { return params_; }
  const numerics::ParameterSet& params() const { return params_; }
  const std::string& prefix() const { return prefix_; }

  void zero_parameters();

  // Plain inference path.
  LMState zero_state() const;
  // Consumes `token`; when log_probs is non-null it receives the next-token
  // log-distribution.
  void step(LMState& state, TokenId token, std::vector<double>* log_probs) const;
  ForwardResult forward(const std::vector<TokenId>& tokens, const LMState& initial) const;
  // log Q(continuation | context), summing every continuation token; the
  // context's last token must already be consumed by the caller's stream.
  double continuation_log_prob(const std::vector<TokenId>& context,
                               const std::vector<TokenId>& continuation) const;
  // log Q(Y = y | X = x) including the terminating end-of-sentence.
  double sequence_log_prob(const Sentence& x, const Sentence& y) const;
  std::vector<double> encode(const Sentence& tokens) const;

  // Ancestral sampling after the stream </s> prefix </s>; stops at the end of
  // sentence (not included) or after max_len tokens.
  Sentence sample_sequence(const Sentence& prefix, std::size_t max_len, double temperature,
                           Rng& rng) const;
  Sentence greedy_sequence(const Sentence& prefix, std::size_t max_len) const;

  // Graph path.
  LMNodes bind(Graph& g);
  // Teacher-forced run over equal-length rows of `tokens`.
  BatchTrace run(Graph& g, const LMNodes& n, const std::vector<std::vector<TokenId>>& tokens,
                 bool want_logits = true) const;
  // [B] log-probabilities of stream[t] for t >= first_scored over equal-length
  // streams.
  Var stream_log_probs(Graph& g, const LMNodes& n,
                       const std::vector<std::vector<TokenId>>& streams,
                       std::size_t first_scored) const;
  // [N] values of log Q(ys[i] | xs[i]); any lengths, ys[i] may be empty.
  Var sequence_log_probs(Graph& g, const LMNodes& n, const std::vector<Sentence>& xs,
                         const std::vector<Sentence>& ys) const;
  // [N, encoding_dim] max-pooled encodings; any lengths.
  Var encode_batch(Graph& g, const LMNodes& n, const std::vector<Sentence>& sentences) const;
  // Sum of per-token NLL over streams of any lengths, every token after the
  // first scored; returns a scalar.
  Var streams_nll(Graph& g, const LMNodes& n,
                  const std::vector<std::vector<TokenId>>& streams) const;

  void check_tokens(const std::vector<TokenId>& tokens) const;

 private:
  LMConfig config_;
  std::string prefix_;
  numerics::ParameterSet params_;
  numerics::Parameter* embedding_ = nullptr;
  std::vector<numerics::Parameter*> wx_, wh_, bx_, bh_;
  numerics::Parameter* w_out_ = nullptr;
  numerics::Parameter* b_out_ = nullptr;
};

// Continuous generation of a sentence stream that starts with </s>.
class StreamSampler {
 public:
  explicit StreamSampler(const LanguageModel& model);
  // Next sentence, ended by a sampled </s> or cut at max_len (the </s> is
  // then fed so the stream stays well formed).
  Sentence next(std::size_t max_len, double temperature, Rng& rng);

 private:
  const LanguageModel* model_;
  LMState state_;
  std::vector<double> pending_;
};

struct CorpusNll {
  double nll = 0.0;         // summed over predicted tokens
  std::size_t tokens = 0;   // every token after the leading </s>, ends included
};
// Scores each document as one stream </s> s1 </s> s2 </s> ...
CorpusNll corpus_nll(const LanguageModel& model, const corpus::Corpus& corpus);

// Coordinate-wise max over per-step hidden vectors.
std::vector<double> max_pool(const std::vector<std::vector<double>>& steps);

// </s> x </s> for conditioning, and </s> s1 </s> s2 </s> ... for documents.
std::vector<TokenId> context_stream(const Sentence& x);
std::vector<TokenId> document_stream(const std::vector<Sentence>& sentences);
std::vector<TokenId> with_eos(const Sentence& s);

}  // namespace bmi::lm
