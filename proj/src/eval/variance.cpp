#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <sstream>

#include "bmi/error.hpp"
#include "bmi/eval/eval.hpp"
#include "bmi/lm/checkpoint.hpp"
#include "bmi/training/training.hpp"
#include "json.hpp"

namespace bmi::eval {

namespace {

constexpr double kBinWidth = 0.25;  // in log10 units
constexpr double kReferenceLines[] = {0.1, 1.0, 10.0};

}  // namespace

GradientMoments::GradientMoments(std::size_t dim) : mean_(dim, 0.0), m2_(dim, 0.0) {}

void GradientMoments::add(const std::vector<double>& grad) {
  if (grad.size() != mean_.size()) throw ShapeError("gradient dimension changed");
  ++count_;
  const double n = double(count_);
  for (std::size_t i = 0; i < grad.size(); ++i) {
    const double d = grad[i] - mean_[i];
    mean_[i] += d / n;
    m2_[i] += d * (grad[i] - mean_[i]);
  }
}

std::vector<double> GradientMoments::variance() const {
  if (count_ == 0) throw StatisticsError("no gradients recorded");
  std::vector<double> v(m2_.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = m2_[i] / double(count_);
  return v;
}

VarianceReport variance_report(const std::vector<double>& var_rl,
                               const std::vector<double>& var_iw) {
  if (var_rl.size() != var_iw.size()) throw ShapeError("variance vectors differ in length");
  if (var_rl.empty()) throw StatisticsError("no parameters");
  VarianceReport r;
  double log_sum = 0.0;
  for (std::size_t i = 0; i < var_rl.size(); ++i) {
    const double q = (var_rl[i] + kVarianceEpsilon) / (var_iw[i] + kVarianceEpsilon);
    r.ratios.push_back(q);
    log_sum += std::log(q);
  }
  r.geometric_mean = std::exp(log_sum / double(r.ratios.size()));
  std::vector<double> sorted = r.ratios;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t m = sorted.size() / 2;
  r.median = sorted.size() % 2 ? sorted[m] : 0.5 * (sorted[m - 1] + sorted[m]);

  const double lo = std::floor(std::log10(sorted.front()) / kBinWidth) * kBinWidth;
  double hi = std::ceil(std::log10(sorted.back()) / kBinWidth) * kBinWidth;
  const std::size_t bins =
      std::max<std::size_t>(1, std::size_t(std::llround((hi - lo) / kBinWidth)) + (hi == lo));
  for (std::size_t b = 0; b < bins; ++b)
    r.histogram.push_back({std::pow(10.0, lo + kBinWidth * double(b)),
                           std::pow(10.0, lo + kBinWidth * double(b + 1)), 0});
  for (double q : sorted) {
    const double pos = (std::log10(q) - lo) / kBinWidth;
    std::size_t b = pos <= 0.0 ? 0 : std::size_t(pos);
    ++r.histogram[std::min(b, bins - 1)].count;
  }
  return r;
}

std::string VarianceReport::to_json() const {
  nlohmann::ordered_json j;
  j["parameters"] = ratios.size();
  j["iterations"] = iterations;
  j["median"] = median;
  j["geometric_mean"] = geometric_mean;
  j["hash_before"] = hash_before;
  j["hash_after"] = hash_after;
  j["reference_lines"] = {0.1, 1.0, 10.0};
  j["histogram"] = nlohmann::ordered_json::array();
  for (const auto& b : histogram)
    j["histogram"].push_back({{"bin_low", b.low}, {"bin_high", b.high}, {"count", b.count}});
  return j.dump();
}

VarianceReport VarianceReport::from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  VarianceReport r;
  r.iterations = j.at("iterations").get<std::size_t>();
  r.median = j.at("median").get<double>();
  r.geometric_mean = j.at("geometric_mean").get<double>();
  r.hash_before = j.at("hash_before").get<std::uint64_t>();
  r.hash_after = j.at("hash_after").get<std::uint64_t>();
  for (const auto& b : j.at("histogram"))
    r.histogram.push_back({b.at("bin_low").get<double>(), b.at("bin_high").get<double>(),
                           b.at("count").get<std::size_t>()});
  return r;
}

void VarianceReport::write_histogram_csv(std::ostream& out) const {
  out << "bin_low,bin_high,count\n";
  char buf[96];
  for (const auto& b : histogram) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%zu\n", b.low, b.high, b.count);
    out << buf;
  }
}

std::string VarianceReport::render() const {
  std::size_t peak = 1;
  for (const auto& b : histogram) peak = std::max(peak, b.count);
  std::ostringstream out;
  char buf[160];
  std::snprintf(buf, sizeof buf, "gradient variance ratio RL / IW-RAML, %zu parameters, median %.4g\n",
                ratios.size(), median);
  out << buf;
  for (const auto& b : histogram) {
    std::string marks;
    for (double ref : kReferenceLines)
      if (b.low <= ref && ref < b.high) {
        std::snprintf(buf, sizeof buf, "  <- %g", ref);
        marks += buf;
      }
    std::snprintf(buf, sizeof buf, "[%10.4g, %10.4g) %8zu ", b.low, b.high, b.count);
    out << buf << std::string(b.count * 50 / peak, '#') << marks << "\n";
  }
  for (double ref : kReferenceLines)
    if (histogram.empty() || ref < histogram.front().low || ref >= histogram.back().high) {
      std::snprintf(buf, sizeof buf, "reference %g lies outside the histogram\n", ref);
      out << buf;
    }
  return out.str();
}

void VarianceConfig::validate() const {
  if (iterations < 20) throw StatisticsError("variance needs at least 20 iterations");
  if (batch_size == 0 || candidates_per_x == 0 || max_sentence_len == 0)
    throw ConfigError("variance batch, candidates and max length must be positive");
  if (!(beta > 0.0)) throw ConfigError("variance.beta must be positive");
  if (!(proposal_lambda > 0.0 && proposal_lambda < 1.0))
    throw ConfigError("variance.proposal_lambda must lie in (0, 1)");
}

VarianceConfig VarianceConfig::from_key_values(const KeyValues& kv, const std::string& prefix) {
  VarianceConfig c;
  c.iterations = kv.get_u64(prefix + "iterations", c.iterations);
  c.batch_size = kv.get_u64(prefix + "batch_size", c.batch_size);
  c.candidates_per_x = kv.get_u64(prefix + "candidates_per_x", c.candidates_per_x);
  c.beta = kv.get_double(prefix + "beta", c.beta);
  c.proposal_lambda = kv.get_double(prefix + "proposal_lambda", c.proposal_lambda);
  c.max_sentence_len = kv.get_u64(prefix + "max_sentence_len", c.max_sentence_len);
  c.seed = kv.get_u64(prefix + "seed", c.seed);
  return c;
}

void VarianceConfig::write_key_values(std::ostream& out, const std::string& prefix) const {
  out.precision(17);
  out << prefix << "iterations = " << iterations << "\n";
  out << prefix << "batch_size = " << batch_size << "\n";
  out << prefix << "candidates_per_x = " << candidates_per_x << "\n";
  out << prefix << "beta = " << beta << "\n";
  out << prefix << "proposal_lambda = " << proposal_lambda << "\n";
  out << prefix << "max_sentence_len = " << max_sentence_len << "\n";
  out << prefix << "seed = " << seed << "\n";
}

VarianceReport grad_variance_ratio(LanguageModel& model, discriminator::Discriminator& disc,
                                   const Corpus& corpus, const VarianceConfig& config) {
  config.validate();
  auto& params = model.params();
  const std::uint64_t before = lm::parameter_hash(params);
  corpus::PairSampler sampler(corpus);
  Rng pair_rng = make_rng(config.seed, "variance.pairs");
  Rng rl_rng = make_rng(config.seed, "variance.rl");
  Rng iw_rng = make_rng(config.seed, "variance.iw");
  GradientMoments rl(params.scalar_count()), iw(params.scalar_count());
  for (std::size_t i = 0; i < config.iterations; ++i) {
    const auto pairs = sampler.positives(config.batch_size, pair_rng);
    std::vector<Sentence> xs;
    for (const auto& p : pairs) xs.push_back(p.x);

    params.zero_grad();
    training::rl_step(model, disc, xs, config.max_sentence_len, rl_rng);
    rl.add(params.flat_grads());

    params.zero_grad();
    auto cands = training::propose_candidates(corpus, pairs, config.candidates_per_x,
                                              config.proposal_lambda, iw_rng);
    training::weigh_candidates(model, disc, cands, config.beta);
    training::iw_raml_step(model, cands, 1.0);
    iw.add(params.flat_grads());
  }
  params.zero_grad();
  VarianceReport r = variance_report(rl.variance(), iw.variance());
  r.iterations = config.iterations;
  r.hash_before = before;
  r.hash_after = lm::parameter_hash(params);
  return r;
}

}  // namespace bmi::eval
