#include <cmath>
#include <map>

#include "bmi/error.hpp"
#include "bmi/eval/eval.hpp"

namespace bmi::eval {

double PinskerReport::loose_bound() const { return std::sqrt(2.0 * kl); }
double PinskerReport::tight_bound() const { return std::sqrt(0.5 * kl); }

namespace {

struct Enumerator {
  const LanguageModel& model;
  std::size_t max_len;
  std::map<Sentence, double> q;
  double overflow = 0.0;

  void walk(const lm::LMState& state, const std::vector<double>& lp, Sentence& prefix,
            double log_prefix) {
    q[prefix] = std::exp(log_prefix + lp[corpus::kEosId]);
    if (prefix.size() == max_len) {
      overflow += std::exp(log_prefix) * -std::expm1(lp[corpus::kEosId]);
      return;
    }
    for (corpus::TokenId t = 0; t < lp.size(); ++t) {
      if (t == corpus::kEosId) continue;
      lm::LMState next = state;
      std::vector<double> next_lp;
      model.step(next, t, &next_lp);
      prefix.push_back(t);
      walk(next, next_lp, prefix, log_prefix + lp[t]);
      prefix.pop_back();
    }
  }
};

}  // namespace

PinskerReport pinsker_check(const LanguageModel& model, const Corpus& corpus,
                            std::size_t max_len) {
  std::map<Sentence, double> p;
  std::size_t n = 0;
  for (const auto& d : corpus.documents)
    for (const auto& s : d) {
      if (s.size() > max_len) throw InputError("corpus sentence longer than the enumeration limit");
      model.check_tokens(s);
      p[s] += 1.0;
      ++n;
    }
  if (n == 0) throw DataError("empty corpus");
  for (auto& [s, v] : p) v /= double(n);

  Enumerator e{model, max_len, {}, 0.0};
  lm::LMState state = model.zero_state();
  std::vector<double> lp;
  model.step(state, corpus::kEosId, &lp);
  Sentence prefix;
  e.walk(state, lp, prefix, 0.0);

  PinskerReport r;
  r.outcomes = e.q.size() + 1;
  r.overflow_mass = e.overflow;
  double l1 = e.overflow;
  for (const auto& [s, qs] : e.q) {
    const auto it = p.find(s);
    const double ps = it == p.end() ? 0.0 : it->second;
    l1 += std::abs(ps - qs);
    if (ps > 0.0) r.kl += ps * (std::log(ps) - std::log(qs));
  }
  r.tv = 0.5 * l1;
  return r;
}

}  // namespace bmi::eval
