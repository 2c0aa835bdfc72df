#include <cmath>

#include "bmi/error.hpp"
#include "bmi/training/training.hpp"
#include "json.hpp"

namespace bmi::training {

std::string MetricsRecord::to_json() const {
  nlohmann::ordered_json j;
  j["iteration"] = iteration;
  j["phase"] = to_string(phase);
  j["train_nll"] = train_nll;
  j["valid_ppl"] = valid_ppl;
  j["proxy_value"] = proxy_value;
  j["dv_estimate"] = dv_estimate;
  if (mean_iw_entropy)
    j["mean_iw_entropy"] = *mean_iw_entropy;
  else
    j["mean_iw_entropy"] = nullptr;
  return j.dump();
}

Trainer::Trainer(LanguageModel& model, Discriminator& disc, TrainConfig config,
                 const Corpus& train, const Corpus& valid)
    : model_(&model),
      disc_(&disc),
      config_(std::move(config)),
      train_(&train),
      valid_(&valid),
      sampler_(train),
      valid_sampler_(valid),
      mle_rng_(make_rng(config_.seed, "train.mle")),
      phase1_rng_(make_rng(config_.seed, "train.phase1")),
      phase2_rng_(make_rng(config_.seed, "train.phase2")) {
  config_.validate();
  if (disc.config().input_dim != model.config().encoding_dim())
    throw ConfigError("disc.input_dim must equal the encoder dimension");
  sgd_.learning_rate = config_.lm_learning_rate;
  sgd_.clip_norm = config_.lm_clip_norm;
  adam_.learning_rate = config_.disc_learning_rate;
  adam_.weight_decay = config_.disc_weight_decay;
  Rng eval_rng = make_rng(config_.seed, "train.eval_pairs");
  eval_pos_ = valid_sampler_.positives(config_.eval_pairs, eval_rng);
  eval_neg_ = valid_sampler_.negatives(config_.eval_pairs, eval_rng);
}

std::vector<std::vector<corpus::TokenId>> sample_mle_streams(const Corpus& corpus,
                                                             std::size_t batch,
                                                             std::size_t window, Rng& rng) {
  const std::size_t total = corpus.num_sentences();
  if (total == 0) throw DataError("corpus has no sentences");
  std::vector<std::vector<corpus::TokenId>> streams;
  for (std::size_t b = 0; b < batch; ++b) {
    std::size_t k = uniform_index(rng, total);
    std::size_t d = 0;
    while (k >= corpus.documents[d].size()) k -= corpus.documents[d++].size();
    const auto& doc = corpus.documents[d];
    const std::size_t end = std::min(doc.size(), k + window);
    streams.push_back(lm::document_stream({doc.begin() + k, doc.begin() + end}));
  }
  return streams;
}

double Trainer::iterate() {
  auto& lp = model_->params();
  auto& dp = disc_->params();
  lp.zero_grad();
  dp.zero_grad();
  try {
    const auto pos = sampler_.positives(config_.batch_size, phase1_rng_);
    const auto neg = sampler_.negatives(config_.batch_size, phase1_rng_);
    phase1_step(*model_, *disc_, pos, neg);
    lp.scale_grads(config_.regularizer_weight);

    const MleResult mle = mle_step(*model_, sample_mle_streams(*train_, config_.batch_size, config_.mle_window, mle_rng_));
    if (!std::isfinite(mle.loss)) throw DivergenceError("MLE loss became non-finite");
    nll_sum_ += mle.loss;
    ++nll_count_;

    if (phase_.phase == Phase::Two && config_.iw_raml_weight > 0.0) {
      const auto pairs = sampler_.positives(config_.batch_size, phase2_rng_);
      auto cands = propose_candidates(*train_, pairs, config_.candidates_per_x,
                                      config_.proposal_lambda, phase2_rng_);
      weigh_candidates(*model_, *disc_, cands, config_.beta);
      const auto r = iw_raml_step(*model_, cands, config_.iw_raml_weight);
      entropy_sum_ += r.weight_entropy;
      ++entropy_count_;
    }
    sgd_.step(lp);
    adam_.step(dp);
    ++iteration_;
    return mle.loss;
  } catch (const InvalidValueError& e) {
    throw DivergenceError(std::string("training diverged: ") + e.what());
  }
}

MetricsRecord Trainer::evaluate() {
  MetricsRecord r;
  r.iteration = iteration_;
  r.train_nll = nll_count_ ? nll_sum_ / double(nll_count_) : 0.0;
  const auto nll = lm::corpus_nll(*model_, *valid_);
  r.valid_ppl = std::exp(nll.nll / double(nll.tokens));
  if (!std::isfinite(r.valid_ppl)) throw DivergenceError("validation perplexity non-finite");
  const auto vb = validation_bound(*model_, *disc_, eval_pos_, eval_neg_);
  r.proxy_value = vb.proxy;
  r.dv_estimate = vb.dv;
  if (entropy_count_) r.mean_iw_entropy = entropy_sum_ / double(entropy_count_);
  nll_sum_ = entropy_sum_ = 0.0;
  nll_count_ = entropy_count_ = 0;
  r.phase = phase_.phase;
  return r;
}

TrainSummary Trainer::run(const TrainHooks& hooks) {
  TrainSummary s;
  s.best_valid_ppl = std::numeric_limits<double>::infinity();
  auto checkpoint = [&](const char* tag) {
    if (hooks.on_checkpoint) hooks.on_checkpoint(tag);
  };
  while (iteration_ < config_.max_iterations) {
    iterate();
    if (iteration_ % config_.eval_interval != 0 && iteration_ != config_.max_iterations) continue;
    MetricsRecord r = evaluate();
    phase_.history.push_back(r.valid_ppl);
    if (r.valid_ppl < s.best_valid_ppl) {
      s.best_valid_ppl = phase_.best = r.valid_ppl;
      s.best_iteration = iteration_;
      checkpoint("best");
    }
    if (phase_.phase == Phase::One && config_.iw_raml_weight > 0.0 &&
        switch_condition(phase_.history, config_.switch_window)) {
      phase_.phase = Phase::Two;
      phase_.switch_iteration = iteration_;
      r.phase = Phase::Two;
      checkpoint("switch");
    }
    s.metrics.push_back(r);
    if (hooks.on_metrics) hooks.on_metrics(r);
  }
  checkpoint("final");
  s.phase = phase_;
  return s;
}

}  // namespace bmi::training
