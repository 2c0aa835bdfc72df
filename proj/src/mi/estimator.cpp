#include "bmi/mi/estimator.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include "json.hpp"
#include <ostream>

#include "bmi/discriminator/discriminator.hpp"
#include "bmi/error.hpp"
#include "bmi/mi/bounds.hpp"
#include "bmi/numerics/optim.hpp"
#include "bmi/util/random.hpp"

namespace bmi::mi {

using corpus::Sentence;
using numerics::Graph;
using numerics::Tensor;
using numerics::Var;

const char* to_string(LawSource s) { return s == LawSource::Data ? "data" : "model"; }

std::string MIEstimate::to_json() const {
  nlohmann::ordered_json j;
  j["dv"] = dv;
  j["proxy"] = proxy;
  j["n_joint"] = n_joint;
  j["n_marginal"] = n_marginal;
  j["law_source"] = to_string(law_source);
  j["fold"] = fold;
  return j.dump();
}

MIEstimate MIEstimate::from_json(const std::string& line) {
  const auto j = nlohmann::json::parse(line);
  MIEstimate e;
  e.dv = j.at("dv").get<double>();
  e.proxy = j.at("proxy").get<double>();
  e.n_joint = j.at("n_joint").get<std::size_t>();
  e.n_marginal = j.at("n_marginal").get<std::size_t>();
  e.law_source = j.at("law_source").get<std::string>() == "model" ? LawSource::Model
                                                                  : LawSource::Data;
  e.fold = j.at("fold").get<int>();
  return e;
}

PairSet consecutive_sentence_pairs(const corpus::Corpus& corpus) {
  PairSet out;
  for (const auto& doc : corpus.documents)
    for (std::size_t i = 0; i + 1 < doc.size(); ++i) {
      if (doc[i].empty() || doc[i + 1].empty()) continue;
      out.x.push_back(doc[i]);
      out.y.push_back(doc[i + 1]);
    }
  return out;
}

PairSet span_pairs(const corpus::Corpus& corpus, std::size_t length, std::size_t gap) {
  if (length == 0) throw ConfigError("segment length must be positive");
  PairSet out;
  for (const auto& doc : corpus.documents) {
    std::vector<corpus::TokenId> stream;
    for (const auto& s : doc) {
      stream.insert(stream.end(), s.begin(), s.end());
      stream.push_back(corpus::kEosId);
    }
    const std::size_t span = 2 * length + gap;
    for (std::size_t i = 0; i + span <= stream.size(); i += span) {
      out.x.emplace_back(stream.begin() + i, stream.begin() + i + length);
      out.y.emplace_back(stream.begin() + i + length + gap, stream.begin() + i + span);
    }
  }
  return out;
}

const char* to_string(Pooling p) { return p == Pooling::Max ? "max" : "mean"; }

void EvalConfig::validate() const {
  if (embedding_dim == 0 || hidden == 0) throw ConfigError("mi_eval dims must be positive");
  if (folds < 3) throw ConfigError("mi_eval.folds must be at least 3");
  if (batch == 0 || max_epochs == 0) throw ConfigError("mi_eval batch and epochs must be positive");
  if (!(learning_rate > 0.0)) throw ConfigError("mi_eval.learning_rate must be positive");
  if (marginal_shifts == 0) throw ConfigError("mi_eval.marginal_shifts must be positive");
}

EvalConfig EvalConfig::from_key_values(const KeyValues& kv, const std::string& prefix) {
  EvalConfig c;
  const std::string pool = kv.get_string(prefix + "pooling", to_string(c.pooling));
  if (pool == "max")
    c.pooling = Pooling::Max;
  else if (pool == "mean")
    c.pooling = Pooling::Mean;
  else
    throw ConfigError(prefix + "pooling must be max or mean");
  c.embedding_dim = kv.get_u64(prefix + "embedding_dim", c.embedding_dim);
  c.hidden = kv.get_u64(prefix + "hidden", c.hidden);
  c.folds = kv.get_u64(prefix + "folds", c.folds);
  c.batch = kv.get_u64(prefix + "batch", c.batch);
  c.max_epochs = kv.get_u64(prefix + "max_epochs", c.max_epochs);
  c.patience = kv.get_u64(prefix + "patience", c.patience);
  c.learning_rate = kv.get_double(prefix + "learning_rate", c.learning_rate);
  c.marginal_shifts = kv.get_u64(prefix + "marginal_shifts", c.marginal_shifts);
  c.seed = kv.get_u64(prefix + "seed", c.seed);
  return c;
}

void EvalConfig::write_key_values(std::ostream& out, const std::string& prefix) const {
  out << prefix << "pooling = " << to_string(pooling) << "\n";
  out << prefix << "embedding_dim = " << embedding_dim << "\n";
  out << prefix << "hidden = " << hidden << "\n";
  out << prefix << "folds = " << folds << "\n";
  out << prefix << "batch = " << batch << "\n";
  out << prefix << "max_epochs = " << max_epochs << "\n";
  out << prefix << "patience = " << patience << "\n";
  out.precision(17);
  out << prefix << "learning_rate = " << learning_rate << "\n";
  out << prefix << "marginal_shifts = " << marginal_shifts << "\n";
  out << prefix << "seed = " << seed << "\n";
}

namespace {

class EvalModel {
 public:
  EvalModel(std::size_t vocab, const EvalConfig& c, std::uint64_t seed)
      : pooling_(c.pooling), disc_({c.embedding_dim, c.hidden, derive_seed(seed, "d_eval.disc")}, "d_eval.") {
    Rng rng = make_rng(seed, "d_eval.embedding");
    Tensor e({vocab, c.embedding_dim});
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (auto& v : e.storage()) v = u(rng);
    embedding_ = &emb_.add("d_eval.embedding", std::move(e));
  }

  // [N, e]: per-position embeddings pooled, rows in input order.
  Var encode(Graph& g, Var table, const std::vector<Sentence>& xs) const {
    std::map<std::size_t, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < xs.size(); ++i) groups[xs[i].size()].push_back(i);
    std::vector<Var> parts;
    std::vector<std::size_t> order;
    for (const auto& [len, idx] : groups) {
      std::vector<Var> steps;
      for (std::size_t t = 0; t < len; ++t) {
        std::vector<std::size_t> rows;
        for (auto i : idx) rows.push_back(xs[i][t]);
        steps.push_back(g.gather_rows(table, rows));
      }
      if (steps.size() == 1) {
        parts.push_back(steps[0]);
      } else if (pooling_ == Pooling::Max) {
        parts.push_back(g.max_of(steps));
      } else {
        Var sum = steps[0];
        for (std::size_t t = 1; t < steps.size(); ++t) sum = g.add(sum, steps[t]);
        parts.push_back(g.scale(sum, 1.0 / double(steps.size())));
      }
      order.insert(order.end(), idx.begin(), idx.end());
    }
    Var all = parts.size() == 1 ? parts[0] : g.concat(parts, 0);
    std::vector<std::size_t> inverse(order.size());
    for (std::size_t i = 0; i < order.size(); ++i) inverse[order[i]] = i;
    return g.gather_rows(all, inverse);
  }

  // Scores of (xs[i], ys[i]).
  Var scores(Graph& g, Var table, const discriminator::DiscriminatorNodes& dn,
             const std::vector<Sentence>& xs, const std::vector<Sentence>& ys) const {
    return disc_.score(g, dn, encode(g, table, xs), encode(g, table, ys));
  }

  std::vector<double> score_values(const std::vector<Sentence>& xs,
                                   const std::vector<Sentence>& ys) {
    Graph g;
    Var table = g.parameter(*embedding_);
    const auto dn = disc_.bind(g);
    Var s = scores(g, table, dn, xs, ys);
    const auto& v = g.value(s).storage();
    return {v.begin(), v.end()};
  }

  Pooling pooling_;
  numerics::Parameter* embedding_;
  numerics::ParameterSet emb_;
  discriminator::Discriminator disc_;
};

struct Scored {
  double dv, proxy;
  std::size_t n_joint, n_marginal;
};

Scored evaluate(EvalModel& m, const PairSet& data, std::size_t shifts) {
  const std::size_t n = data.size();
  std::vector<Sentence> xs = data.x, ys = data.y;
  const std::size_t r = std::min(shifts, n - 1);
  for (std::size_t s = 1; s <= r; ++s)
    for (std::size_t i = 0; i < n; ++i) {
      xs.push_back(data.x[i]);
      ys.push_back(data.y[(i + s) % n]);
    }
  const auto all = m.score_values(xs, ys);
  std::span<const double> joint(all.data(), n), marginal(all.data() + n, all.size() - n);
  return {dv_bound(joint, marginal), proxy_objective(joint, marginal), n, marginal.size()};
}

}  // namespace

MIEstimate train_eval_discriminator(const PairSet& train, const PairSet& valid,
                                    const PairSet& test, std::size_t vocab_size,
                                    const EvalConfig& config, LawSource source, int fold) {
  config.validate();
  if (train.size() < 2 || valid.size() < 2 || test.size() < 2)
    throw DataError("evaluation discriminator needs at least two pairs per split");
  const std::uint64_t seed = derive_seed(config.seed, "fold" + std::to_string(fold));
  EvalModel model(vocab_size, config, seed);
  numerics::Adam adam_emb, adam_disc;
  adam_emb.learning_rate = adam_disc.learning_rate = config.learning_rate;
  Rng rng = make_rng(seed, "d_eval.batches");

  std::vector<numerics::Tensor> best;
  auto snapshot = [&] {
    best.clear();
    for (auto* p : model.emb_.all()) best.push_back(p->value);
    for (auto* p : model.disc_.params().all()) best.push_back(p->value);
  };
  auto restore = [&] {
    std::size_t i = 0;
    for (auto* p : model.emb_.all()) p->value = best[i++];
    for (auto* p : model.disc_.params().all()) p->value = best[i++];
  };
  double best_dv = evaluate(model, valid, config.marginal_shifts).dv;
  snapshot();
  std::size_t since_best = 0;
  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (std::size_t epoch = 0; epoch < config.max_epochs && since_best < config.patience; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += config.batch) {
      const std::size_t end = std::min(order.size(), start + config.batch);
      std::vector<Sentence> xs, ys;
      for (std::size_t k = start; k < end; ++k) {
        xs.push_back(train.x[order[k]]);
        ys.push_back(train.y[order[k]]);
      }
      for (std::size_t k = start; k < end; ++k) {
        xs.push_back(train.x[order[k]]);
        ys.push_back(train.y[uniform_index(rng, train.size())]);
      }
      const std::size_t b = end - start;
      Graph g;
      Var table = g.parameter(*model.embedding_);
      const auto dn = model.disc_.bind(g);
      Var s = model.scores(g, table, dn, xs, ys);
      Var loss = g.neg(proxy_objective(g, g.slice(s, 0, 0, b), g.slice(s, 0, b, 2 * b)));
      model.emb_.zero_grad();
      model.disc_.params().zero_grad();
      g.forward();
      g.backward(loss);
      adam_emb.step(model.emb_);
      adam_disc.step(model.disc_.params());
    }
    const double dv = evaluate(model, valid, config.marginal_shifts).dv;
    if (dv > best_dv) {
      best_dv = dv;
      snapshot();
      since_best = 0;
    } else {
      ++since_best;
    }
  }
  restore();
  const Scored t = evaluate(model, test, config.marginal_shifts);
  MIEstimate e;
  e.dv = t.dv;
  e.proxy = t.proxy;
  e.n_joint = t.n_joint;
  e.n_marginal = t.n_marginal;
  e.law_source = source;
  e.fold = fold;
  return e;
}

KFoldEstimate kfold_mi(const PairSet& pairs, std::size_t vocab_size, const EvalConfig& config,
                       LawSource source) {
  config.validate();
  const std::size_t k = config.folds;
  if (pairs.size() < 2 * k)
    throw DataError("need at least " + std::to_string(2 * k) + " pairs for " + std::to_string(k) +
                    " folds, got " + std::to_string(pairs.size()));
  std::vector<std::size_t> perm(pairs.size());
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  Rng rng = make_rng(config.seed, "d_eval.folds");
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<PairSet> folds(k);
  for (std::size_t i = 0; i < perm.size(); ++i) {
    auto& f = folds[i * k / perm.size()];
    f.x.push_back(pairs.x[perm[i]]);
    f.y.push_back(pairs.y[perm[i]]);
  }
  KFoldEstimate out;
  for (std::size_t i = 0; i < k; ++i) {
    PairSet train;
    for (std::size_t j = 0; j < k; ++j) {
      if (j == i || j == (i + 1) % k) continue;
      train.x.insert(train.x.end(), folds[j].x.begin(), folds[j].x.end());
      train.y.insert(train.y.end(), folds[j].y.begin(), folds[j].y.end());
    }
    out.folds.push_back(train_eval_discriminator(train, folds[(i + 1) % k], folds[i], vocab_size,
                                                 config, source, static_cast<int>(i)));
  }
  for (const auto& f : out.folds) out.mean += f.dv;
  out.mean /= double(k);
  double var = 0.0;
  for (const auto& f : out.folds) var += (f.dv - out.mean) * (f.dv - out.mean);
  out.standard_error = std::sqrt(var / double(k - 1) / double(k));
  return out;
}

}  // namespace bmi::mi
