#include "bmi/corpus/sampling.hpp"

#include <cmath>

#include "bmi/error.hpp"

namespace bmi::corpus {

const char* to_string(PairLaw law) {
  return law == PairLaw::Joint ? "joint" : "product_of_marginals";
}

PairSampler::PairSampler(const Corpus& corpus) : corpus_(&corpus) {
  for (std::size_t d = 0; d < corpus.documents.size(); ++d) {
    const auto& doc = corpus.documents[d];
    for (std::size_t i = 0; i < doc.size(); ++i) {
      all_.push_back({d, i});
      if (i + 1 < doc.size()) eligible_.push_back({d, i});
    }
  }
  if (eligible_.empty())
    throw EmptySampleError("no document has two consecutive sentences");
}

SegmentPair PairSampler::make(Pos x, Pos y, PairLaw law) const {
  SegmentPair p;
  p.x = corpus_->documents[x.doc][x.index];
  p.y = corpus_->documents[y.doc][y.index];
  p.law = law;
  p.x_doc = x.doc;
  p.x_index = x.index;
  p.y_doc = y.doc;
  p.y_index = y.index;
  return p;
}

std::vector<SegmentPair> PairSampler::positives(std::size_t batch, Rng& rng) const {
  std::vector<SegmentPair> out;
  out.reserve(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    const Pos x = eligible_[uniform_index(rng, eligible_.size())];
    out.push_back(make(x, {x.doc, x.index + 1}, PairLaw::Joint));
  }
  return out;
}

std::vector<SegmentPair> PairSampler::negatives(std::size_t batch, Rng& rng) const {
  std::vector<SegmentPair> out;
  out.reserve(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    const Pos x = eligible_[uniform_index(rng, eligible_.size())];
    const Pos y = all_[uniform_index(rng, all_.size())];
    out.push_back(make(x, y, PairLaw::ProductOfMarginals));
  }
  return out;
}

std::vector<SegmentPair> positive_pairs(const Corpus& corpus, std::size_t batch, Rng& rng) {
  return PairSampler(corpus).positives(batch, rng);
}

std::vector<SegmentPair> negative_pairs(const Corpus& corpus, std::size_t batch, Rng& rng) {
  return PairSampler(corpus).negatives(batch, rng);
}

std::vector<double> geometric_proposal_masses(std::size_t document_length, std::size_t m,
                                              double lambda) {
  if (!(lambda > 0.0 && lambda < 1.0))
    throw ConfigError("proposal lambda must lie in (0, 1)");
  if (m >= document_length) throw InputError("proposal base index outside the document");
  std::vector<double> mass(document_length - m);
  double total = 0.0;
  for (std::size_t i = 0; i < mass.size(); ++i) {
    mass[i] = std::pow(1.0 - lambda, static_cast<double>(i)) * lambda;
    total += mass[i];
  }
  for (auto& v : mass) v /= total;
  return mass;
}

ProposalDraw geometric_proposal(std::size_t document_length, std::size_t m, double lambda,
                                Rng& rng) {
  const auto mass = geometric_proposal_masses(document_length, m, lambda);
  const std::size_t i = sample_categorical(rng, mass);
  return {m + i, mass[i]};
}

}  // namespace bmi::corpus
