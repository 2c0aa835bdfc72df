#include "bmi/corpus/synth.hpp"

#include <cmath>
#include <functional>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "bmi/error.hpp"
#include "bmi/util/random.hpp"

namespace bmi::corpus {

namespace {
constexpr double kEnumerationLimit = 65536.0;
}

void SynthConfig::validate() const {
  if (num_topics < 2) throw ConfigError("synth.num_topics must be >= 2");
  if (!(topic_persistence >= 0.0 && topic_persistence <= 1.0))
    throw ConfigError("synth.topic_persistence must lie in [0, 1]");
  if (vocab_size < 1) throw ConfigError("synth.vocab_size must be >= 1");
  if (sentence_length < 1) throw ConfigError("synth.sentence_length must be >= 1");
  if (num_documents < 1) throw ConfigError("synth.num_documents must be >= 1");
  if (sentences_per_document < 1)
    throw ConfigError("synth.sentences_per_document must be >= 1");
  if (std::pow(static_cast<double>(vocab_size), static_cast<double>(sentence_length)) >
      kEnumerationLimit)
    throw ConfigError("synth.vocab_size^sentence_length exceeds 65536");
  if (emission.size() != num_topics)
    throw ConfigError("synth.emission must have one row per topic");
  for (std::size_t z = 0; z < emission.size(); ++z) {
    const auto& row = emission[z];
    if (row.size() != vocab_size)
      throw ConfigError("synth.emission." + std::to_string(z) + " has wrong length");
    double s = 0.0;
    for (double v : row) {
      if (!(v >= 0.0) || !std::isfinite(v))
        throw ConfigError("synth.emission." + std::to_string(z) + " has a negative entry");
      s += v;
    }
    if (std::abs(s - 1.0) > 1e-12)
      throw ConfigError("synth.emission." + std::to_string(z) + " does not sum to 1");
  }
}

std::vector<std::vector<double>> SynthConfig::transition() const {
  const std::size_t t = num_topics;
  const double p = topic_persistence;
  std::vector<std::vector<double>> m(t, std::vector<double>(t));
  for (std::size_t a = 0; a < t; ++a)
    for (std::size_t b = 0; b < t; ++b) {
      if (resample == TopicResample::Others)
        m[a][b] = a == b ? p : (1.0 - p) / static_cast<double>(t - 1);
      else
        m[a][b] = (a == b ? p : 0.0) + (1.0 - p) / static_cast<double>(t);
    }
  return m;
}

std::vector<std::vector<double>> disjoint_emissions(std::size_t num_topics,
                                                    std::size_t vocab_size) {
  return blended_emissions(num_topics, vocab_size, 0.0);
}

std::vector<std::vector<double>> blended_emissions(std::size_t num_topics,
                                                   std::size_t vocab_size, double shared) {
  if (num_topics == 0 || vocab_size % num_topics != 0)
    throw ConfigError("vocab_size must be divisible by num_topics for block emissions");
  if (!(shared >= 0.0 && shared <= 1.0)) throw ConfigError("emission blend must lie in [0, 1]");
  const std::size_t block = vocab_size / num_topics;
  std::vector<std::vector<double>> rows(num_topics, std::vector<double>(vocab_size));
  for (std::size_t z = 0; z < num_topics; ++z) {
    for (std::size_t k = 0; k < vocab_size; ++k) {
      const double own = (k / block == z) ? 1.0 / static_cast<double>(block) : 0.0;
      rows[z][k] = (1.0 - shared) * own + shared / static_cast<double>(vocab_size);
    }
    // Exact renormalization keeps row sums within 1e-12.
    double s = 0.0;
    for (double v : rows[z]) s += v;
    for (double& v : rows[z]) v /= s;
  }
  return rows;
}

Vocabulary synth_vocabulary(std::size_t vocab_size) {
  Vocabulary v;
  for (std::size_t k = 0; k < vocab_size; ++k) v.add("w" + std::to_string(k));
  return v;
}

std::vector<double> stationary_topics(const SynthConfig& config) {
  const auto m = config.transition();
  const std::size_t t = config.num_topics;
  std::vector<double> pi(t, 1.0 / static_cast<double>(t));
  for (int it = 0; it < 10000; ++it) {
    std::vector<double> next(t, 0.0);
    for (std::size_t a = 0; a < t; ++a)
      for (std::size_t b = 0; b < t; ++b) next[b] += pi[a] * m[a][b];
    double diff = 0.0;
    for (std::size_t a = 0; a < t; ++a) diff += std::abs(next[a] - pi[a]);
    pi = std::move(next);
    if (diff < 1e-16) break;
  }
  return pi;
}

Corpus synth_generate(const SynthConfig& config) {
  config.validate();
  Corpus c;
  c.vocab = synth_vocabulary(config.vocab_size);
  Rng rng(config.seed);
  const auto trans = config.transition();
  const auto pi = stationary_topics(config);
  for (std::size_t d = 0; d < config.num_documents; ++d) {
    Document doc;
    std::size_t z = sample_categorical(rng, pi);
    for (std::size_t t = 0; t < config.sentences_per_document; ++t) {
      if (t > 0) z = sample_categorical(rng, trans[z]);
      Sentence s(config.sentence_length);
      for (auto& tok : s)
        tok = static_cast<TokenId>(sample_categorical(rng, config.emission[z]) + 2);
      doc.push_back(std::move(s));
    }
    c.documents.push_back(std::move(doc));
  }
  return c;
}

namespace {

struct SentenceClass {
  double multiplicity = 1.0;
  std::vector<double> likelihood;  // per topic
};

double pair_mi(const SynthConfig& config, const std::vector<SentenceClass>& classes) {
  const std::size_t t = config.num_topics;
  const auto trans = config.transition();
  const auto pi = stationary_topics(config);
  std::vector<double> pi_next(t, 0.0);
  for (std::size_t a = 0; a < t; ++a)
    for (std::size_t b = 0; b < t; ++b) pi_next[b] += pi[a] * trans[a][b];

  const std::size_t n = classes.size();
  std::vector<double> px(n, 0.0), py(n, 0.0);
  std::vector<std::vector<double>> ahead(n, std::vector<double>(t, 0.0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t a = 0; a < t; ++a) {
      px[i] += pi[a] * classes[i].likelihood[a];
      py[i] += pi_next[a] * classes[i].likelihood[a];
      for (std::size_t b = 0; b < t; ++b)
        ahead[i][a] += trans[a][b] * classes[i].likelihood[b];
    }

  double mi = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (px[i] == 0.0) continue;
    for (std::size_t j = 0; j < n; ++j) {
      if (py[j] == 0.0) continue;
      double pxy = 0.0;
      for (std::size_t a = 0; a < t; ++a) pxy += pi[a] * classes[i].likelihood[a] * ahead[j][a];
      if (pxy <= 0.0) continue;
      mi += classes[i].multiplicity * classes[j].multiplicity * pxy *
            std::log(pxy / (px[i] * py[j]));
    }
  }
  return mi;
}

void check_capacity(const SynthConfig& config) {
  if (std::pow(static_cast<double>(config.vocab_size),
               static_cast<double>(config.sentence_length)) > kEnumerationLimit)
    throw CapacityError("sentence space K^L exceeds the enumeration limit 65536");
}

}  // namespace

double true_pair_mi(const SynthConfig& config) {
  check_capacity(config);
  config.validate();
  const std::size_t k = config.vocab_size, len = config.sentence_length;
  std::vector<SentenceClass> classes;
  std::vector<std::size_t> counts(k, 0);
  std::vector<double> log_fact(len + 1, 0.0);
  for (std::size_t i = 1; i <= len; ++i) log_fact[i] = log_fact[i - 1] + std::log(double(i));

  std::function<void(std::size_t, std::size_t)> rec = [&](std::size_t sym, std::size_t left) {
    if (sym + 1 == k) {
      counts[sym] = left;
      SentenceClass c;
      double log_mult = log_fact[len];
      for (auto v : counts) log_mult -= log_fact[v];
      c.multiplicity = std::round(std::exp(log_mult));
      c.likelihood.assign(config.num_topics, 1.0);
      for (std::size_t z = 0; z < config.num_topics; ++z)
        for (std::size_t s = 0; s < k; ++s)
          if (counts[s]) c.likelihood[z] *= std::pow(config.emission[z][s], double(counts[s]));
      classes.push_back(std::move(c));
      return;
    }
    for (std::size_t c = 0; c <= left; ++c) {
      counts[sym] = c;
      rec(sym + 1, left - c);
    }
  };
  rec(0, len);
  return pair_mi(config, classes);
}

double true_pair_mi_enumerated(const SynthConfig& config) {
  check_capacity(config);
  config.validate();
  const std::size_t k = config.vocab_size, len = config.sentence_length;
  std::size_t total = 1;
  for (std::size_t i = 0; i < len; ++i) total *= k;
  std::vector<SentenceClass> classes(total);
  for (std::size_t code = 0; code < total; ++code) {
    auto& c = classes[code];
    c.likelihood.assign(config.num_topics, 1.0);
    std::size_t rest = code;
    for (std::size_t pos = 0; pos < len; ++pos) {
      const std::size_t sym = rest % k;
      rest /= k;
      for (std::size_t z = 0; z < config.num_topics; ++z) c.likelihood[z] *= config.emission[z][sym];
    }
  }
  return pair_mi(config, classes);
}

SynthConfig SynthConfig::from_key_values(const KeyValues& kv, const std::string& prefix) {
  SynthConfig c;
  c.num_topics = static_cast<std::size_t>(kv.get_int(prefix + "num_topics", 2));
  c.topic_persistence = kv.get_double(prefix + "topic_persistence", 0.9);
  c.vocab_size = static_cast<std::size_t>(kv.get_int(prefix + "vocab_size", 4));
  c.sentence_length = static_cast<std::size_t>(kv.get_int(prefix + "sentence_length", 2));
  c.num_documents = static_cast<std::size_t>(kv.get_int(prefix + "num_documents", 100));
  c.sentences_per_document =
      static_cast<std::size_t>(kv.get_int(prefix + "sentences_per_document", 10));
  c.seed = kv.get_u64(prefix + "seed", 1);
  const std::string resample = kv.get_string(prefix + "resample", "others");
  if (resample == "others")
    c.resample = TopicResample::Others;
  else if (resample == "all")
    c.resample = TopicResample::All;
  else
    throw ConfigError("invalid value for " + prefix + "resample: '" + resample + "'");

  const std::string mode = kv.get_string(prefix + "emission", "rows");
  if (mode == "disjoint") {
    c.emission = disjoint_emissions(c.num_topics, c.vocab_size);
  } else if (mode.rfind("blend", 0) == 0) {
    const std::string amount = trim(mode.substr(5));
    double shared = 0.0;
    try {
      shared = std::stod(amount);
    } catch (const std::exception&) {
      throw ConfigError("invalid value for " + prefix + "emission: '" + mode + "'");
    }
    c.emission = blended_emissions(c.num_topics, c.vocab_size, shared);
  } else if (mode == "rows") {
    for (std::size_t z = 0; z < c.num_topics; ++z) {
      const std::string key = prefix + "emission." + std::to_string(z);
      if (!kv.has(key)) throw ConfigError("missing required key " + key);
      c.emission.push_back(kv.get_doubles(key, {}));
    }
  } else {
    throw ConfigError("invalid value for " + prefix + "emission: '" + mode + "'");
  }
  c.validate();
  return c;
}

void SynthConfig::write_key_values(std::ostream& out, const std::string& prefix) const {
  std::ostringstream os;
  os << std::setprecision(17);
  os << prefix << "num_topics = " << num_topics << '\n'
     << prefix << "topic_persistence = " << topic_persistence << '\n'
     << prefix << "vocab_size = " << vocab_size << '\n'
     << prefix << "sentence_length = " << sentence_length << '\n'
     << prefix << "resample = " << (resample == TopicResample::Others ? "others" : "all") << '\n'
     << prefix << "num_documents = " << num_documents << '\n'
     << prefix << "sentences_per_document = " << sentences_per_document << '\n'
     << prefix << "seed = " << seed << '\n'
     << prefix << "emission = rows\n";
  for (std::size_t z = 0; z < emission.size(); ++z) {
    os << prefix << "emission." << z << " = ";
    for (std::size_t k = 0; k < emission[z].size(); ++k) {
      if (k) os << ',';
      os << emission[z][k];
    }
    os << '\n';
  }
  out << os.str();
}

}  // namespace bmi::corpus
