#pragma once

#include <vector>

#include "bmi/corpus/corpus.hpp"
#include "bmi/util/random.hpp"

namespace bmi::corpus {

enum class PairLaw { Joint, ProductOfMarginals };

const char* to_string(PairLaw law);

struct SegmentPair {
  Sentence x;
  Sentence y;
  PairLaw law = PairLaw::Joint;
  std::size_t x_doc = 0;
  std::size_t x_index = 0;
  std::size_t y_doc = 0;
  std::size_t y_index = 0;
};

// Precomputed positions for drawing sentence pairs from a fixed corpus.
class PairSampler {
 public:
  // Throws EmptySampleError when no document has two sentences.
  explicit PairSampler(const Corpus& corpus);

  // (S_l, S_{l+1}) uniform over all in-document consecutive pairs.
  std::vector<SegmentPair> positives(std::size_t batch, Rng& rng) const;
  // X as in positives(), Y uniform over every sentence of the corpus.
  std::vector<SegmentPair> negatives(std::size_t batch, Rng& rng) const;

  std::size_t num_eligible() const { return eligible_.size(); }
  const Corpus& corpus() const { return *corpus_; }

 private:
  struct Pos {
    std::size_t doc, index;
  };
  const Corpus* corpus_;
  std::vector<Pos> eligible_;
  std::vector<Pos> all_;

  SegmentPair make(Pos x, Pos y, PairLaw law) const;
};

std::vector<SegmentPair> positive_pairs(const Corpus& corpus, std::size_t batch, Rng& rng);
std::vector<SegmentPair> negative_pairs(const Corpus& corpus, std::size_t batch, Rng& rng);

struct ProposalDraw {
  std::size_t index = 0;     // sentence index k within the document
  double probability = 0.0;  // renormalized G(k | m)
};

// Masses (1 - lambda)^(k - m) * lambda over k = m .. last, renormalized to sum
// to one over that truncated support. Element i is the mass of k = m + i.
std::vector<double> geometric_proposal_masses(std::size_t document_length, std::size_t m,
                                              double lambda);

ProposalDraw geometric_proposal(std::size_t document_length, std::size_t m, double lambda,
                                Rng& rng);
inline ProposalDraw geometric_proposal(const Document& doc, std::size_t m, double lambda,
                                       Rng& rng) {
  return geometric_proposal(doc.size(), m, lambda, rng);
}

}  // namespace bmi::corpus
