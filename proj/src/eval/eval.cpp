#include "bmi/eval/eval.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include "bmi/error.hpp"
#include "bmi/numerics/optim.hpp"
#include "bmi/training/training.hpp"
#include "json.hpp"

namespace bmi::eval {

using nlohmann::ordered_json;

double perplexity(const LanguageModel& model, const Corpus& corpus) {
  const auto r = lm::corpus_nll(model, corpus);
  if (r.tokens == 0) throw DataError("perplexity of an empty corpus");
  return std::exp(r.nll / double(r.tokens));
}

void GenerationConfig::validate() const {
  if (tokens == 0) throw ConfigError("gen.tokens must be positive");
  if (sentences_per_document < 2) throw ConfigError("gen.sentences_per_document must be >= 2");
  if (max_sentence_len == 0) throw ConfigError("gen.max_sentence_len must be positive");
  if (!(temperature > 0.0)) throw ConfigError("gen.temperature must be positive");
}

GenerationConfig GenerationConfig::from_key_values(const KeyValues& kv,
                                                   const std::string& prefix) {
  GenerationConfig c;
  c.tokens = kv.get_u64(prefix + "tokens", c.tokens);
  c.sentences_per_document = kv.get_u64(prefix + "sentences_per_document", c.sentences_per_document);
  c.max_sentence_len = kv.get_u64(prefix + "max_sentence_len", c.max_sentence_len);
  c.temperature = kv.get_double(prefix + "temperature", c.temperature);
  c.seed = kv.get_u64(prefix + "seed", c.seed);
  return c;
}

void GenerationConfig::write_key_values(std::ostream& out, const std::string& prefix) const {
  out.precision(17);
  out << prefix << "tokens = " << tokens << "\n";
  out << prefix << "sentences_per_document = " << sentences_per_document << "\n";
  out << prefix << "max_sentence_len = " << max_sentence_len << "\n";
  out << prefix << "temperature = " << temperature << "\n";
  out << prefix << "seed = " << seed << "\n";
}

Corpus generate_corpus(const LanguageModel& model, const corpus::Vocabulary& vocab,
                       const GenerationConfig& config) {
  config.validate();
  if (vocab.size() != model.config().vocab_size)
    throw ConfigError("vocabulary size differs from the model's");
  Corpus out;
  out.vocab = vocab;
  Rng rng = make_rng(config.seed, "gen.sample");
  std::size_t words = 0, dry = 0;
  while (words < config.tokens) {
    lm::StreamSampler sampler(model);
    corpus::Document doc;
    for (std::size_t i = 0; i < config.sentences_per_document; ++i) {
      auto s = sampler.next(config.max_sentence_len, config.temperature, rng);
      if (s.empty()) continue;
      words += s.size();
      doc.push_back(std::move(s));
    }
    if (doc.empty()) {
      if (++dry > 1000) throw DataError("generator keeps emitting empty sentences");
      continue;
    }
    out.documents.push_back(std::move(doc));
  }
  return out;
}

double top_token_fraction(const Corpus& corpus) {
  std::vector<std::size_t> counts(corpus.vocab.size(), 0);
  std::size_t total = 0;
  for (const auto& d : corpus.documents)
    for (const auto& s : d)
      for (auto t : s) {
        ++counts.at(t);
        ++total;
      }
  if (total == 0) return 0.0;
  return double(*std::max_element(counts.begin(), counts.end())) / double(total);
}

void MleConfig::validate() const {
  if (iterations == 0 || batch_size == 0 || window == 0)
    throw ConfigError("reverse iterations, batch_size and window must be positive");
  if (!(learning_rate > 0.0)) throw ConfigError("reverse.learning_rate must be positive");
  if (clip_norm < 0.0) throw ConfigError("reverse.clip_norm must be non-negative");
}

MleConfig MleConfig::from_key_values(const KeyValues& kv, const std::string& prefix) {
  MleConfig c;
  c.iterations = kv.get_u64(prefix + "iterations", c.iterations);
  c.batch_size = kv.get_u64(prefix + "batch_size", c.batch_size);
  c.window = kv.get_u64(prefix + "window", c.window);
  c.learning_rate = kv.get_double(prefix + "learning_rate", c.learning_rate);
  c.clip_norm = kv.get_double(prefix + "clip_norm", c.clip_norm);
  c.seed = kv.get_u64(prefix + "seed", c.seed);
  return c;
}

void MleConfig::write_key_values(std::ostream& out, const std::string& prefix) const {
  out.precision(17);
  out << prefix << "iterations = " << iterations << "\n";
  out << prefix << "batch_size = " << batch_size << "\n";
  out << prefix << "window = " << window << "\n";
  out << prefix << "learning_rate = " << learning_rate << "\n";
  out << prefix << "clip_norm = " << clip_norm << "\n";
  out << prefix << "seed = " << seed << "\n";
}

double train_mle(LanguageModel& model, const Corpus& corpus, const MleConfig& config) {
  config.validate();
  numerics::Sgd sgd{config.learning_rate, config.clip_norm};
  Rng rng = make_rng(config.seed, "mle.batches");
  const std::size_t tail = std::max<std::size_t>(1, config.iterations / 10);
  double tail_sum = 0.0;
  for (std::size_t i = 0; i < config.iterations; ++i) {
    model.params().zero_grad();
    const auto r = training::mle_step(
        model, training::sample_mle_streams(corpus, config.batch_size, config.window, rng));
    if (!std::isfinite(r.loss)) throw DivergenceError("MLE loss became non-finite");
    if (i + tail >= config.iterations) tail_sum += r.loss;
    sgd.step(model.params());
  }
  return tail_sum / double(tail);
}

lm::LMConfig second_lm_config(const lm::LMConfig& generator, std::uint64_t seed) {
  lm::LMConfig c = generator;
  for (auto& h : c.hidden) h = std::max<std::size_t>(1, h / 2);
  c.tie_embeddings = false;
  c.seed = seed;
  return c;
}

std::string ReversePplReport::to_json() const {
  ordered_json j;
  j["reverse_ppl"] = reverse_ppl;
  j["generated_tokens"] = generated_tokens;
  j["generated_sentences"] = generated_sentences;
  j["top_token_fraction"] = top_token_fraction;
  j["degenerate"] = degenerate;
  return j.dump();
}

ReversePplReport ReversePplReport::from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  ReversePplReport r;
  r.reverse_ppl = j.at("reverse_ppl").get<double>();
  r.generated_tokens = j.at("generated_tokens").get<std::size_t>();
  r.generated_sentences = j.at("generated_sentences").get<std::size_t>();
  r.top_token_fraction = j.at("top_token_fraction").get<double>();
  r.degenerate = j.at("degenerate").get<bool>();
  return r;
}

ReversePplReport reverse_perplexity_from_text(const Corpus& generated, const Corpus& heldout,
                                              const lm::LMConfig& second,
                                              const MleConfig& training) {
  if (generated.num_sentences() == 0) throw DataError("no generated text");
  ReversePplReport r;
  r.generated_tokens = generated.num_tokens();
  r.generated_sentences = generated.num_sentences();
  r.top_token_fraction = top_token_fraction(generated);
  r.degenerate = r.top_token_fraction > 0.9;
  LanguageModel reader(second, "reverse.");
  train_mle(reader, generated, training);
  r.reverse_ppl = perplexity(reader, heldout);
  return r;
}

ReversePplReport reverse_perplexity(const LanguageModel& model, const Corpus& heldout,
                                    const GenerationConfig& generation,
                                    const lm::LMConfig& second, const MleConfig& training) {
  const Corpus text = generate_corpus(model, heldout.vocab, generation);
  return reverse_perplexity_from_text(text, heldout, second, training);
}

std::string EmpiricalMiReport::to_json() const {
  ordered_json j;
  j["mean"] = estimate.mean;
  j["standard_error"] = estimate.standard_error;
  j["segment_len"] = segment_len;
  j["gap"] = gap;
  j["pairs"] = pairs;
  j["folds"] = ordered_json::array();
  for (const auto& f : estimate.folds) j["folds"].push_back(ordered_json::parse(f.to_json()));
  return j.dump();
}

EmpiricalMiReport EmpiricalMiReport::from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  EmpiricalMiReport r;
  r.estimate.mean = j.at("mean").get<double>();
  r.estimate.standard_error = j.at("standard_error").get<double>();
  r.segment_len = j.at("segment_len").get<std::size_t>();
  r.gap = j.at("gap").get<std::size_t>();
  r.pairs = j.at("pairs").get<std::size_t>();
  for (const auto& f : j.at("folds")) r.estimate.folds.push_back(mi::MIEstimate::from_json(f.dump()));
  return r;
}

EmpiricalMiReport empirical_mi_of_text(const Corpus& text, std::size_t segment_len,
                                       std::size_t gap, const mi::EvalConfig& config,
                                       mi::LawSource source) {
  const mi::PairSet pairs = segment_len == 0 ? mi::consecutive_sentence_pairs(text)
                                             : mi::span_pairs(text, segment_len, gap);
  EmpiricalMiReport r;
  r.segment_len = segment_len;
  r.gap = gap;
  r.pairs = pairs.size();
  r.estimate = mi::kfold_mi(pairs, text.vocab.size(), config, source);
  return r;
}

EmpiricalMiReport empirical_mi(const LanguageModel& model, const corpus::Vocabulary& vocab,
                               const GenerationConfig& generation, std::size_t segment_len,
                               std::size_t gap, const mi::EvalConfig& config) {
  const Corpus text = generate_corpus(model, vocab, generation);
  return empirical_mi_of_text(text, segment_len, gap, config, mi::LawSource::Model);
}

}  // namespace bmi::eval
