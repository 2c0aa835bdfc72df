#include "bmi/lm/lm.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <ostream>

#include "bmi/error.hpp"

namespace bmi::lm {

using numerics::Parameter;
using numerics::Tensor;

void LMConfig::validate() const {
  if (vocab_size < 2) throw ConfigError("lm.vocab_size must be at least 2");
  if (embedding_dim == 0) throw ConfigError("lm.embedding_dim must be positive");
  if (hidden.empty() || hidden.size() > 3) throw ConfigError("lm.hidden must list 1 to 3 layers");
  for (auto h : hidden)
    if (h == 0) throw ConfigError("lm.hidden dims must be positive");
  if (tie_embeddings && hidden.back() != embedding_dim)
    throw ConfigError("lm.tie_embeddings needs the top hidden dim to equal embedding_dim");
}

std::size_t LMConfig::encoding_dim() const {
  std::size_t d = 0;
  for (auto h : hidden) d += h;
  return d;
}

LMConfig LMConfig::from_key_values(const KeyValues& kv, const std::string& prefix) {
  LMConfig c;
  c.vocab_size = static_cast<std::size_t>(kv.get_u64(prefix + "vocab_size", 0));
  c.embedding_dim = static_cast<std::size_t>(kv.get_u64(prefix + "embedding_dim", c.embedding_dim));
  c.hidden = kv.get_sizes(prefix + "hidden", c.hidden);
  c.tie_embeddings = kv.get_bool(prefix + "tie_embeddings", c.tie_embeddings);
  c.seed = kv.get_u64(prefix + "seed", c.seed);
  return c;
}

void LMConfig::write_key_values(std::ostream& out, const std::string& prefix) const {
  out << prefix << "vocab_size = " << vocab_size << "\n";
  out << prefix << "embedding_dim = " << embedding_dim << "\n";
  out << prefix << "hidden = ";
  for (std::size_t i = 0; i < hidden.size(); ++i) out << (i ? "," : "") << hidden[i];
  out << "\n";
  out << prefix << "tie_embeddings = " << (tie_embeddings ? "true" : "false") << "\n";
  out << prefix << "seed = " << seed << "\n";
}

namespace {

Tensor uniform_tensor(numerics::Shape shape, double scale, Rng& rng) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> u(-scale, scale);
  for (auto& v : t.storage()) v = u(rng);
  return t;
}

// out[j] = bias[j] + sum_p x[p] * w[p, j], accumulated like the graph matmul.
void affine(const std::vector<double>& x, const Tensor& w, const Tensor& bias,
            std::vector<double>& out) {
  const std::size_t k = w.shape()[0], c = w.shape()[1];
  out.assign(c, 0.0);
  const double* W = w.storage().data();
  for (std::size_t p = 0; p < k; ++p) {
    const double av = x[p];
    if (av == 0.0) continue;
    const double* row = W + p * c;
    for (std::size_t j = 0; j < c; ++j) out[j] += av * row[j];
  }
  for (std::size_t j = 0; j < c; ++j) out[j] = out[j] + bias[j];
}

}  // namespace

LanguageModel::LanguageModel(LMConfig config, std::string prefix)
    : config_(std::move(config)), prefix_(std::move(prefix)) {
  config_.validate();
  Rng rng = make_rng(config_.seed, prefix_ + "init");
  const std::size_t k = config_.vocab_size;
  embedding_ = &params_.add(prefix_ + "embedding",
                            uniform_tensor({k, config_.embedding_dim}, 0.1, rng));
  std::size_t in = config_.embedding_dim;
  for (std::size_t l = 0; l < config_.hidden.size(); ++l) {
    const std::size_t h = config_.hidden[l];
    const double s = 1.0 / std::sqrt(static_cast<double>(h));
    const std::string p = prefix_ + "layer" + std::to_string(l) + ".";
    wx_.push_back(&params_.add(p + "wx", uniform_tensor({in, 3 * h}, s, rng)));
    wh_.push_back(&params_.add(p + "wh", uniform_tensor({h, 3 * h}, s, rng)));
    bx_.push_back(&params_.add(p + "bx", uniform_tensor({1, 3 * h}, s, rng)));
    bh_.push_back(&params_.add(p + "bh", uniform_tensor({1, 3 * h}, s, rng)));
    in = h;
  }
  if (!config_.tie_embeddings) {
    const double s = 1.0 / std::sqrt(static_cast<double>(in));
    w_out_ = &params_.add(prefix_ + "out.w", uniform_tensor({in, k}, s, rng));
  }
  b_out_ = &params_.add(prefix_ + "out.b", Tensor({1, k}, 0.0));
}

void LanguageModel::zero_parameters() {
  for (auto* p : params_.all()) p->value.fill(0.0);
}

void LanguageModel::check_tokens(const std::vector<TokenId>& tokens) const {
  for (auto t : tokens)
    if (t >= config_.vocab_size)
      throw InputError("token id " + std::to_string(t) + " outside vocabulary of " +
                       std::to_string(config_.vocab_size));
}

LMState LanguageModel::zero_state() const {
  LMState s;
  for (auto h : config_.hidden) s.h.emplace_back(h, 0.0);
  return s;
}

void LanguageModel::step(LMState& state, TokenId token, std::vector<double>* log_probs) const {
  if (token >= config_.vocab_size) throw InputError("token id outside vocabulary");
  const std::size_t e = config_.embedding_dim;
  std::vector<double> x(embedding_->value.storage().begin() + token * e,
                        embedding_->value.storage().begin() + (token + 1) * e);
  std::vector<double> gx, gh;
  for (std::size_t l = 0; l < config_.hidden.size(); ++l) {
    const std::size_t H = config_.hidden[l];
    auto& h = state.h[l];
    affine(x, wx_[l]->value, bx_[l]->value, gx);
    affine(h, wh_[l]->value, bh_[l]->value, gh);
    std::vector<double> next(H);
    for (std::size_t j = 0; j < H; ++j) {
      const double z = numerics::sigmoid(gx[j] + gh[j]);
      const double r = numerics::sigmoid(gx[H + j] + gh[H + j]);
      const double n = std::tanh(gx[2 * H + j] + r * gh[2 * H + j]);
      next[j] = n + z * (h[j] - n);
    }
    h = next;
    x = std::move(next);
  }
  if (!log_probs) return;
  std::vector<double> logits;
  if (config_.tie_embeddings) {
    const std::size_t k = config_.vocab_size;
    logits.assign(k, 0.0);
    const auto& E = embedding_->value.storage();
    for (std::size_t c = 0; c < k; ++c) {
      double acc = 0.0;
      for (std::size_t p = 0; p < e; ++p) {
        if (x[p] == 0.0) continue;
        acc += x[p] * E[c * e + p];
      }
      logits[c] = acc + b_out_->value[c];
    }
  } else {
    affine(x, w_out_->value, b_out_->value, logits);
  }
  const double lse = numerics::log_sum_exp(logits);
  log_probs->resize(logits.size());
  for (std::size_t j = 0; j < logits.size(); ++j) (*log_probs)[j] = logits[j] - lse;
}

ForwardResult LanguageModel::forward(const std::vector<TokenId>& tokens,
                                     const LMState& initial) const {
  check_tokens(tokens);
  ForwardResult r;
  LMState s = initial;
  for (auto t : tokens) {
    std::vector<double> lp;
    step(s, t, &lp);
    r.log_probs.push_back(std::move(lp));
    r.hidden.push_back(s.h);
  }
  r.final_state = std::move(s);
  return r;
}

double LanguageModel::continuation_log_prob(const std::vector<TokenId>& context,
                                            const std::vector<TokenId>& continuation) const {
  if (context.empty()) throw InputError("empty context");
  check_tokens(context);
  check_tokens(continuation);
  LMState s = zero_state();
  std::vector<double> lp;
  for (std::size_t i = 0; i + 1 < context.size(); ++i) step(s, context[i], nullptr);
  step(s, context.back(), &lp);
  double total = 0.0;
  for (std::size_t i = 0; i < continuation.size(); ++i) {
    total += lp[continuation[i]];
    if (i + 1 < continuation.size()) step(s, continuation[i], &lp);
  }
  return total;
}

double LanguageModel::sequence_log_prob(const Sentence& x, const Sentence& y) const {
  if (x.empty() || y.empty()) throw InputError("sequence_log_prob needs non-empty segments");
  return continuation_log_prob(context_stream(x), with_eos(y));
}

std::vector<double> LanguageModel::encode(const Sentence& tokens) const {
  if (tokens.empty()) throw InputError("cannot encode an empty sequence");
  check_tokens(tokens);
  LMState s = zero_state();
  std::vector<double> out;
  std::vector<std::vector<double>> pooled(config_.hidden.size());
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    step(s, tokens[i], nullptr);
    for (std::size_t l = 0; l < s.h.size(); ++l) {
      if (i == 0)
        pooled[l] = s.h[l];
      else
        for (std::size_t j = 0; j < s.h[l].size(); ++j)
          pooled[l][j] = std::max(pooled[l][j], s.h[l][j]);
    }
  }
  for (const auto& p : pooled) out.insert(out.end(), p.begin(), p.end());
  return out;
}

namespace {

TokenId draw(const std::vector<double>& lp, double temperature, Rng& rng) {
  std::vector<double> w(lp.size());
  double m = -INFINITY;
  for (double v : lp) m = std::max(m, v / temperature);
  for (std::size_t j = 0; j < lp.size(); ++j) w[j] = std::exp(lp[j] / temperature - m);
  return static_cast<TokenId>(sample_categorical(rng, w));
}

}  // namespace

Sentence LanguageModel::sample_sequence(const Sentence& prefix, std::size_t max_len,
                                        double temperature, Rng& rng) const {
  if (!(temperature > 0.0)) throw UsageError("sampling temperature must be positive");
  const auto ctx = context_stream(prefix);
  check_tokens(ctx);
  LMState s = zero_state();
  std::vector<double> lp;
  for (auto t : ctx) step(s, t, &lp);
  Sentence out;
  while (out.size() < max_len) {
    const TokenId t = draw(lp, temperature, rng);
    if (t == corpus::kEosId) break;
    out.push_back(t);
    step(s, t, &lp);
  }
  return out;
}

Sentence LanguageModel::greedy_sequence(const Sentence& prefix, std::size_t max_len) const {
  const auto ctx = context_stream(prefix);
  check_tokens(ctx);
  LMState s = zero_state();
  std::vector<double> lp;
  for (auto t : ctx) step(s, t, &lp);
  Sentence out;
  while (out.size() < max_len) {
    const auto t = static_cast<TokenId>(std::max_element(lp.begin(), lp.end()) - lp.begin());
    if (t == corpus::kEosId) break;
    out.push_back(t);
    step(s, t, &lp);
  }
  return out;
}

StreamSampler::StreamSampler(const LanguageModel& model)
    : model_(&model), state_(model.zero_state()) {
  model_->step(state_, corpus::kEosId, &pending_);
}

Sentence StreamSampler::next(std::size_t max_len, double temperature, Rng& rng) {
  if (!(temperature > 0.0)) throw UsageError("sampling temperature must be positive");
  Sentence out;
  while (true) {
    if (out.size() == max_len) {
      model_->step(state_, corpus::kEosId, &pending_);
      break;
    }
    const TokenId t = draw(pending_, temperature, rng);
    model_->step(state_, t, &pending_);
    if (t == corpus::kEosId) break;
    out.push_back(t);
  }
  return out;
}

LMNodes LanguageModel::bind(Graph& g) {
  LMNodes n;
  n.embedding = g.parameter(*embedding_);
  for (std::size_t l = 0; l < config_.hidden.size(); ++l)
    n.layers.push_back({g.parameter(*wx_[l]), g.parameter(*wh_[l]), g.parameter(*bx_[l]),
                        g.parameter(*bh_[l])});
  n.w_out = config_.tie_embeddings ? g.transpose(n.embedding) : g.parameter(*w_out_);
  n.b_out = g.parameter(*b_out_);
  return n;
}

BatchTrace LanguageModel::run(Graph& g, const LMNodes& n,
                              const std::vector<std::vector<TokenId>>& tokens,
                              bool want_logits) const {
  if (tokens.empty() || tokens[0].empty()) throw InputError("empty batch");
  const std::size_t B = tokens.size(), T = tokens[0].size();
  for (const auto& row : tokens) {
    if (row.size() != T) throw ShapeError("run needs equal-length rows");
    check_tokens(row);
  }
  BatchTrace trace;
  std::vector<Var> h;
  for (auto H : config_.hidden) h.push_back(g.constant(Tensor({B, H}, 0.0)));
  for (std::size_t t = 0; t < T; ++t) {
    std::vector<std::size_t> ids(B);
    for (std::size_t b = 0; b < B; ++b) ids[b] = tokens[b][t];
    Var x = g.gather_rows(n.embedding, ids);
    std::vector<Var> hs;
    for (std::size_t l = 0; l < config_.hidden.size(); ++l) {
      const std::size_t H = config_.hidden[l];
      const auto& L = n.layers[l];
      Var gx = g.add_row(g.matmul(x, L.wx), L.bx);
      Var gh = g.add_row(g.matmul(h[l], L.wh), L.bh);
      Var z = g.sigmoid(g.add(g.slice(gx, 1, 0, H), g.slice(gh, 1, 0, H)));
      Var r = g.sigmoid(g.add(g.slice(gx, 1, H, 2 * H), g.slice(gh, 1, H, 2 * H)));
      Var c = g.tanh(g.add(g.slice(gx, 1, 2 * H, 3 * H), g.mul(r, g.slice(gh, 1, 2 * H, 3 * H))));
      h[l] = g.add(c, g.mul(z, g.sub(h[l], c)));
      hs.push_back(h[l]);
      x = h[l];
    }
    trace.hidden.push_back(std::move(hs));
    if (want_logits) trace.logits.push_back(g.add_row(g.matmul(x, n.w_out), n.b_out));
  }
  return trace;
}

Var LanguageModel::stream_log_probs(Graph& g, const LMNodes& n,
                                    const std::vector<std::vector<TokenId>>& streams,
                                    std::size_t first_scored) const {
  if (streams.empty()) throw InputError("empty batch");
  const std::size_t T = streams[0].size();
  if (first_scored < 1 || first_scored >= T) throw InputError("nothing to score");
  std::vector<std::vector<TokenId>> inputs;
  for (const auto& s : streams) inputs.emplace_back(s.begin(), s.end() - 1);
  const BatchTrace trace = run(g, n, inputs);
  Var total;
  for (std::size_t t = first_scored; t < T; ++t) {
    std::vector<std::size_t> targets;
    for (const auto& s : streams) targets.push_back(s[t]);
    Var nll = g.softmax_cross_entropy(trace.logits[t - 1], targets);
    total = t == first_scored ? nll : g.add(total, nll);
  }
  return g.neg(total);
}

namespace {

// Restores the caller's order after per-group evaluation of rows.
Var reorder_rows(Graph& g, const std::vector<Var>& parts, const std::vector<std::size_t>& order,
                 bool rank1) {
  Var all = parts.size() == 1 ? parts[0] : g.concat(parts, 0);
  const std::size_t n = order.size();
  std::vector<std::size_t> inverse(n);
  for (std::size_t i = 0; i < n; ++i) inverse[order[i]] = i;
  bool identity = true;
  for (std::size_t i = 0; i < n; ++i) identity = identity && inverse[i] == i;
  if (identity) return all;
  if (rank1) {
    Var m = g.reshape(all, {n, 1});
    return g.reshape(g.gather_rows(m, inverse), {n});
  }
  return g.gather_rows(all, inverse);
}

}  // namespace

Var LanguageModel::sequence_log_probs(Graph& g, const LMNodes& n, const std::vector<Sentence>& xs,
                                      const std::vector<Sentence>& ys) const {
  if (xs.size() != ys.size() || xs.empty()) throw InputError("mismatched pair batch");
  std::map<std::pair<std::size_t, std::size_t>, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (xs[i].empty()) throw InputError("empty conditioning segment");
    groups[{xs[i].size(), ys[i].size()}].push_back(i);
  }
  std::vector<Var> parts;
  std::vector<std::size_t> order;
  for (const auto& [lens, idx] : groups) {
    std::vector<std::vector<TokenId>> streams;
    for (auto i : idx) {
      auto s = context_stream(xs[i]);
      s.insert(s.end(), ys[i].begin(), ys[i].end());
      s.push_back(corpus::kEosId);
      streams.push_back(std::move(s));
      order.push_back(i);
    }
    parts.push_back(stream_log_probs(g, n, streams, lens.first + 2));
  }
  return reorder_rows(g, parts, order, true);
}

Var LanguageModel::encode_batch(Graph& g, const LMNodes& n,
                                const std::vector<Sentence>& sentences) const {
  if (sentences.empty()) throw InputError("empty batch");
  std::map<std::size_t, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < sentences.size(); ++i) {
    if (sentences[i].empty()) throw InputError("cannot encode an empty sequence");
    groups[sentences[i].size()].push_back(i);
  }
  std::vector<Var> parts;
  std::vector<std::size_t> order;
  for (const auto& [len, idx] : groups) {
    std::vector<std::vector<TokenId>> rows;
    for (auto i : idx) {
      rows.push_back(sentences[i]);
      order.push_back(i);
    }
    const BatchTrace trace = run(g, n, rows, false);
    std::vector<Var> layers;
    for (std::size_t l = 0; l < config_.hidden.size(); ++l) {
      std::vector<Var> steps;
      for (const auto& hs : trace.hidden) steps.push_back(hs[l]);
      layers.push_back(steps.size() == 1 ? steps[0] : g.max_of(steps));
    }
    parts.push_back(layers.size() == 1 ? layers[0] : g.concat(layers, 1));
  }
  return reorder_rows(g, parts, order, false);
}

Var LanguageModel::streams_nll(Graph& g, const LMNodes& n,
                               const std::vector<std::vector<TokenId>>& streams) const {
  if (streams.empty()) throw InputError("empty batch");
  std::map<std::size_t, std::vector<std::vector<TokenId>>> groups;
  for (const auto& s : streams) {
    if (s.size() < 2) throw InputError("stream needs at least two tokens");
    groups[s.size()].push_back(s);
  }
  Var total;
  bool first = true;
  for (const auto& [len, rows] : groups) {
    Var part = g.sum(stream_log_probs(g, n, rows, 1));
    total = first ? part : g.add(total, part);
    first = false;
  }
  return g.neg(total);
}

CorpusNll corpus_nll(const LanguageModel& model, const corpus::Corpus& corpus) {
  CorpusNll r;
  for (const auto& doc : corpus.documents) {
    if (doc.empty()) continue;
    const auto s = document_stream(doc);
    LMState st = model.zero_state();
    std::vector<double> lp;
    model.step(st, s[0], &lp);
    for (std::size_t t = 1; t < s.size(); ++t) {
      r.nll -= lp[s[t]];
      ++r.tokens;
      if (t + 1 < s.size()) model.step(st, s[t], &lp);
    }
  }
  return r;
}

std::vector<double> max_pool(const std::vector<std::vector<double>>& steps) {
  if (steps.empty()) throw InputError("cannot pool zero steps");
  std::vector<double> out = steps[0];
  for (const auto& s : steps) {
    if (s.size() != out.size()) throw ShapeError("pooled steps differ in size");
    for (std::size_t j = 0; j < s.size(); ++j) out[j] = std::max(out[j], s[j]);
  }
  return out;
}

std::vector<TokenId> context_stream(const Sentence& x) {
  std::vector<TokenId> s{corpus::kEosId};
  s.insert(s.end(), x.begin(), x.end());
  s.push_back(corpus::kEosId);
  return s;
}

std::vector<TokenId> document_stream(const std::vector<Sentence>& sentences) {
  std::vector<TokenId> s{corpus::kEosId};
  for (const auto& x : sentences) {
    s.insert(s.end(), x.begin(), x.end());
    s.push_back(corpus::kEosId);
  }
  return s;
}

std::vector<TokenId> with_eos(const Sentence& s) {
  std::vector<TokenId> out(s);
  out.push_back(corpus::kEosId);
  return out;
}

}  // namespace bmi::lm
