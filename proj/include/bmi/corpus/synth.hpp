#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "bmi/corpus/corpus.hpp"
#include "bmi/util/key_values.hpp"

namespace bmi::corpus {

// How a topic is redrawn when it does not persist.
enum class TopicResample { Others, All };

// Topic-chain corpus generator. Each document runs a Markov chain over topics;
// sentence t emits `sentence_length` tokens i.i.d. from emission row z_t.
// Word symbol j maps to vocabulary id j + 2.
struct SynthConfig {
  std::size_t num_topics = 2;
  double topic_persistence = 0.9;
  std::size_t vocab_size = 4;  // word symbols, excluding reserved ids
  std::size_t sentence_length = 2;
  std::vector<std::vector<double>> emission;  // num_topics x vocab_size
  TopicResample resample = TopicResample::Others;
  std::size_t num_documents = 100;
  std::size_t sentences_per_document = 10;
  std::uint64_t seed = 1;

  // Throws ConfigError on any invariant violation, including
  // vocab_size^sentence_length > 65536.
  void validate() const;
  std::vector<std::vector<double>> transition() const;

  static SynthConfig from_key_values(const KeyValues& kv, const std::string& prefix = "");
  void write_key_values(std::ostream& out, const std::string& prefix = "") const;
};

// Rows that split the vocabulary into equal disjoint blocks, one per topic,
// uniform within the block. vocab_size must be divisible by num_topics.
std::vector<std::vector<double>> disjoint_emissions(std::size_t num_topics,
                                                    std::size_t vocab_size);
// Mixes each disjoint block row with the uniform row: (1 - shared) * block +
// shared * uniform.
std::vector<std::vector<double>> blended_emissions(std::size_t num_topics,
                                                   std::size_t vocab_size, double shared);

Vocabulary synth_vocabulary(std::size_t vocab_size);
Corpus synth_generate(const SynthConfig& config);

// Stationary distribution of the topic chain.
std::vector<double> stationary_topics(const SynthConfig& config);

// Exact I(S_t; S_{t+1}) in nats under the stationary chain. Sentences with the
// same token multiset share every likelihood, so the double sum runs over
// multisets weighted by their multiplicities.
double true_pair_mi(const SynthConfig& config);
// Same quantity by summing over every one of the K^L x K^L sentence pairs.
double true_pair_mi_enumerated(const SynthConfig& config);

}  // namespace bmi::corpus
