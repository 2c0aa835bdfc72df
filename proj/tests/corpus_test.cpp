#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <sstream>

#include "bmi/corpus/corpus.hpp"
#include "bmi/corpus/sampling.hpp"
#include "bmi/corpus/synth.hpp"
#include "bmi/error.hpp"

namespace bmi::corpus {
namespace {

Corpus from_text(const std::string& text, const VocabPolicy& policy = BuildVocabulary{}) {
  std::istringstream in(text);
  return ingest(in, policy);
}

TEST(Ingest, BuildsVocabularyAndSentences) {
  const Corpus c = from_text("a b\nb c\n");
  ASSERT_EQ(c.documents.size(), 1u);
  EXPECT_EQ(c.documents[0].size(), 2u);
  EXPECT_EQ(c.vocab.size(), 5u);
  EXPECT_EQ(c.vocab.id("a"), 2u);
  EXPECT_EQ(c.vocab.token(kEosId), kEosToken);
}

TEST(Ingest, FixedVocabularyMapsUnknown) {
  Vocabulary v;
  v.add("a");
  v.add("b");
  const Corpus c = from_text("a b\nb c\n", v);
  ASSERT_EQ(c.documents[0].size(), 2u);
  EXPECT_EQ(c.documents[0][1].back(), kUnknownId);
  EXPECT_EQ(c.vocab.size(), 4u);
}

TEST(Ingest, BlankLineSplitsDocuments) {
  const Corpus c = from_text("a b\n\nb c\n");
  ASSERT_EQ(c.documents.size(), 2u);
  EXPECT_EQ(c.documents[0].size(), 1u);
  EXPECT_EQ(c.documents[1].size(), 1u);
}

TEST(Ingest, Errors) {
  EXPECT_THROW(from_text(""), EmptyCorpusError);
  EXPECT_THROW(from_text("\n  \n"), EmptyCorpusError);
  EXPECT_THROW(from_text("ok \xC3\x28\n"), DecodeError);
  EXPECT_THROW(from_text("\xED\xA0\x80\n"), DecodeError);  // surrogate
  EXPECT_NO_THROW(from_text("caf\xC3\xA9 \xE2\x82\xAC\n"));
}

TEST(Ingest, WriteReadRoundTrip) {
  const Corpus c = from_text("a b\nb c\n\nd\n");
  std::ostringstream out;
  write_corpus(out, c);
  std::istringstream in(out.str());
  const Corpus back = ingest(in);
  EXPECT_EQ(back.documents, c.documents);
  EXPECT_EQ(back.fingerprint(), c.fingerprint());
}

TEST(Vocabulary, FileFormatOffsetsReservedIds) {
  Vocabulary v;
  v.add("x");
  v.add("y");
  std::ostringstream out;
  v.save(out);
  EXPECT_EQ(out.str(), "x\ny\n");
  std::istringstream in(out.str());
  const Vocabulary back = Vocabulary::load(in);
  EXPECT_EQ(back.id("y"), 3u);
  EXPECT_EQ(back, v);
}

Corpus three_sentence_document() { return from_text("a\nb\nc\n"); }

TEST(PositivePairs, OnlyConsecutivePairsWithinDocument) {
  const Corpus c = three_sentence_document();
  Rng rng(1);
  std::map<std::size_t, int> counts;
  const auto pairs = positive_pairs(c, 10000, rng);
  for (const auto& p : pairs) {
    EXPECT_EQ(p.law, PairLaw::Joint);
    EXPECT_EQ(p.y_index, p.x_index + 1);
    EXPECT_EQ(p.x_doc, p.y_doc);
    ++counts[p.x_index];
  }
  ASSERT_EQ(counts.size(), 2u);
  EXPECT_NEAR(counts[0] / 10000.0, 0.5, 0.02);
  EXPECT_NEAR(counts[1] / 10000.0, 0.5, 0.02);
}

TEST(PositivePairs, NeverCrossesDocumentBoundary) {
  SynthConfig cfg;
  cfg.emission = disjoint_emissions(2, 4);
  cfg.num_documents = 20;
  cfg.sentences_per_document = 3;
  const Corpus c = synth_generate(cfg);
  Rng rng(9);
  for (const auto& p : positive_pairs(c, 5000, rng)) {
    EXPECT_EQ(p.x_doc, p.y_doc);
    EXPECT_LT(p.y_index, 3u);
    EXPECT_EQ(p.y, c.documents[p.y_doc][p.y_index]);
  }
}

TEST(PositivePairs, SingleSentenceDocumentsAreRejected) {
  const Corpus c = from_text("a\n\nb\n\nc\n");
  Rng rng(1);
  EXPECT_THROW(positive_pairs(c, 3, rng), EmptySampleError);
  EXPECT_THROW(negative_pairs(c, 3, rng), EmptySampleError);
}

TEST(NegativePairs, YIsUniformOverCorpus) {
  const Corpus c = from_text("a\nb\nc\n\nd\ne\n\nf\ng\n");
  const std::size_t n = c.num_sentences();
  const int draws = 10000;
  Rng rng(4);
  std::map<std::pair<std::size_t, std::size_t>, int> counts;
  for (const auto& p : negative_pairs(c, draws, rng)) {
    EXPECT_EQ(p.law, PairLaw::ProductOfMarginals);
    ++counts[{p.y_doc, p.y_index}];
  }
  ASSERT_EQ(counts.size(), n);
  const double f = 1.0 / double(n);
  const double sigma = std::sqrt(f * (1 - f) / draws);
  for (const auto& [pos, k] : counts) EXPECT_NEAR(k / double(draws), f, 3 * sigma);
}

TEST(NegativePairs, SingleSentenceCorpusStillLabelledMarginal) {
  // Documents need two sentences for X; only one distinct Y exists when the
  // corpus has one eligible document of two identical-position sentences.
  const Corpus c = from_text("a\nb\n");
  Rng rng(2);
  for (const auto& p : negative_pairs(c, 50, rng)) {
    EXPECT_EQ(p.law, PairLaw::ProductOfMarginals);
    EXPECT_EQ(p.x_index, 0u);
  }
  const auto pos = positive_pairs(c, 5, rng);
  const auto neg = negative_pairs(c, 5, rng);
  EXPECT_NE(pos[0].law, neg[0].law);
}

TEST(GeometricProposal, UntruncatedMasses) {
  const auto m = geometric_proposal_masses(200, 0, 0.3);
  EXPECT_NEAR(m[0], 0.3, 1e-12);
  EXPECT_NEAR(m[1], 0.21, 1e-12);
  EXPECT_NEAR(m[2], 0.147, 1e-12);
}

TEST(GeometricProposal, TruncatedRenormalization) {
  const auto m = geometric_proposal_masses(5, 3, 0.3);
  ASSERT_EQ(m.size(), 2u);
  EXPECT_NEAR(m[0], 0.3 / 0.51, 1e-12);
  EXPECT_NEAR(m[1], 0.21 / 0.51, 1e-12);
}

TEST(GeometricProposal, MassesSumToOneAndDrawsReportExactMass) {
  Rng rng(8);
  for (std::size_t len = 1; len < 15; ++len)
    for (std::size_t m = 0; m < len; ++m)
      for (double lambda : {0.05, 0.3, 0.9}) {
        const auto mass = geometric_proposal_masses(len, m, lambda);
        double s = 0.0;
        for (double v : mass) s += v;
        EXPECT_NEAR(s, 1.0, 1e-12);
        const auto d = geometric_proposal(len, m, lambda, rng);
        ASSERT_GE(d.index, m);
        ASSERT_LT(d.index, len);
        EXPECT_EQ(d.probability, mass[d.index - m]);
      }
}

TEST(GeometricProposal, EmpiricalDecayRatio) {
  Rng rng(12);
  std::vector<int> counts(200, 0);
  for (int i = 0; i < 100000; ++i) ++counts[geometric_proposal(200, 0, 0.3, rng).index];
  EXPECT_NEAR(double(counts[1]) / counts[0], 0.7, 0.02);
  EXPECT_NEAR(double(counts[2]) / counts[1], 0.7, 0.02);
}

TEST(GeometricProposal, RejectsBadLambda) {
  Rng rng(1);
  EXPECT_THROW(geometric_proposal(5, 0, 0.0, rng), ConfigError);
  EXPECT_THROW(geometric_proposal(5, 0, 1.0, rng), ConfigError);
  EXPECT_THROW(geometric_proposal(5, 5, 0.3, rng), InputError);
}

SynthConfig two_topic(double p, std::size_t k = 4, std::size_t len = 2) {
  SynthConfig c;
  c.num_topics = 2;
  c.topic_persistence = p;
  c.vocab_size = k;
  c.sentence_length = len;
  c.emission = disjoint_emissions(2, k);
  return c;
}

TEST(Synth, PersistentTopicSharesOneTopicPerDocument) {
  SynthConfig cfg = two_topic(1.0);
  cfg.num_documents = 30;
  const Corpus c = synth_generate(cfg);
  for (const auto& doc : c.documents) {
    const auto block = (doc[0][0] - 2) / 2;
    for (const auto& s : doc)
      for (auto t : s) EXPECT_EQ((t - 2) / 2, block);
  }
}

TEST(Synth, ReproducibleFromSeed) {
  SynthConfig cfg = two_topic(0.9);
  EXPECT_EQ(synth_generate(cfg).documents, synth_generate(cfg).documents);
  SynthConfig other = cfg;
  other.seed = 2;
  EXPECT_NE(synth_generate(cfg).documents, synth_generate(other).documents);
}

TEST(Synth, ValidationAndCapacity) {
  SynthConfig cfg = two_topic(0.9);
  cfg.emission[0][0] += 1e-9;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = two_topic(0.9, 4, 9);  // 4^9 > 65536
  EXPECT_THROW(cfg.validate(), ConfigError);
  EXPECT_THROW(true_pair_mi(cfg), CapacityError);
  cfg = two_topic(1.5);
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(TruePairMi, IndependentConfigurationsAreZero) {
  SynthConfig others = two_topic(0.5);  // 1 / num_topics, resample among others
  EXPECT_NEAR(true_pair_mi(others), 0.0, 1e-12);
  SynthConfig all = two_topic(0.0);
  all.resample = TopicResample::All;
  EXPECT_NEAR(true_pair_mi(all), 0.0, 1e-12);
  SynthConfig four;
  four.num_topics = 4;
  four.vocab_size = 8;
  four.topic_persistence = 0.25;
  four.emission = blended_emissions(4, 8, 0.3);
  EXPECT_NEAR(true_pair_mi(four), 0.0, 1e-12);
}

TEST(TruePairMi, PersistentDisjointTopicIsLn2) {
  EXPECT_NEAR(true_pair_mi(two_topic(1.0)), std::log(2.0), 1e-12);
}

TEST(TruePairMi, TwoTopicPersistence09) {
  // Sentences identify the topic exactly, so the pair MI is the topic-chain MI
  // ln 2 - H_b(0.9): 0.3681 nats, i.e. 0.5310 bits.
  const double mi = true_pair_mi(two_topic(0.9));
  const double hb = -(0.9 * std::log(0.9) + 0.1 * std::log(0.1));
  EXPECT_NEAR(mi, std::log(2.0) - hb, 1e-12);
  EXPECT_NEAR(mi, 0.368064, 1e-6);
  EXPECT_NEAR(mi / std::log(2.0), 0.531, 5e-4);
}

TEST(TruePairMi, MultisetRouteMatchesFullEnumeration) {
  Rng rng(77);
  for (int trial = 0; trial < 10; ++trial) {
    SynthConfig c;
    c.num_topics = 2 + uniform_index(rng, 3);
    c.vocab_size = 2 + uniform_index(rng, 4);
    c.sentence_length = 1 + uniform_index(rng, 3);
    c.topic_persistence = uniform01(rng);
    c.resample = trial % 2 ? TopicResample::All : TopicResample::Others;
    for (std::size_t z = 0; z < c.num_topics; ++z) {
      std::vector<double> row(c.vocab_size);
      double s = 0;
      for (auto& v : row) s += (v = uniform01(rng) + 0.01);
      for (auto& v : row) v /= s;
      c.emission.push_back(row);
    }
    const double a = true_pair_mi(c);
    EXPECT_GE(a, -1e-15);
    EXPECT_NEAR(a, true_pair_mi_enumerated(c), 1e-12);
  }
}

TEST(TruePairMi, AgreesWithPlugInEstimateFromGeneratedPairs) {
  SynthConfig cfg = two_topic(0.9);
  cfg.num_documents = 10000;
  cfg.sentences_per_document = 101;
  const Corpus c = synth_generate(cfg);
  // Sentence code: base-K number over word symbols.
  auto code = [&](const Sentence& s) { return (s[0] - 2) * 4 + (s[1] - 2); };
  std::vector<double> joint(256, 0.0);
  double n = 0;
  for (const auto& doc : c.documents)
    for (std::size_t i = 0; i + 1 < doc.size(); ++i) {
      joint[code(doc[i]) * 16 + code(doc[i + 1])] += 1;
      n += 1;
    }
  ASSERT_EQ(n, 1e6);
  std::vector<double> px(16, 0.0), py(16, 0.0);
  for (int a = 0; a < 16; ++a)
    for (int b = 0; b < 16; ++b) {
      px[a] += joint[a * 16 + b] / n;
      py[b] += joint[a * 16 + b] / n;
    }
  double mi = 0;
  for (int a = 0; a < 16; ++a)
    for (int b = 0; b < 16; ++b) {
      const double p = joint[a * 16 + b] / n;
      if (p > 0) mi += p * std::log(p / (px[a] * py[b]));
    }
  EXPECT_NEAR(mi, true_pair_mi(cfg), 0.01);
}

TEST(SynthConfig, KeyValueRoundTrip) {
  SynthConfig cfg;
  cfg.num_topics = 3;
  cfg.vocab_size = 6;
  cfg.sentence_length = 3;
  cfg.emission = blended_emissions(3, 6, 0.2);
  cfg.seed = 99;
  std::ostringstream out;
  cfg.write_key_values(out, "synth.");
  std::istringstream in(out.str());
  const auto kv = KeyValues::parse(in);
  const auto back = SynthConfig::from_key_values(kv, "synth.");
  EXPECT_EQ(synth_generate(back).documents, synth_generate(cfg).documents);
  EXPECT_TRUE(kv.unconsumed().empty());
}

}  // namespace
}  // namespace bmi::corpus
