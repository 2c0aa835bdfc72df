#include "bmi/cli/experiment.hpp"

#include <algorithm>
#include <fstream>
#include <random>
#include <sstream>

#include "bmi/error.hpp"
#include "bmi/lm/checkpoint.hpp"
#include "json.hpp"

namespace bmi::cli {

namespace {

const char* kSeedKeys[] = {"synth.seed",    "lm.seed",      "disc.seed",
                           "train.seed",    "gen.seed",     "mi_eval.seed",
                           "reverse.seed",  "reverse.lm_seed", "variance.seed"};

bool filesystem_safe(const std::string& s) {
  if (s.empty() || s == "." || s == "..") return false;
  for (char c : s)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '_' || c == '-'))
      return false;
  return true;
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw InputError("cannot read " + p.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_text(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw InputError("cannot write " + p.string());
  out << text;
  if (!out) throw InputError("write failed for " + p.string());
}

}  // namespace

ExperimentConfig ExperimentConfig::from_key_values(KeyValues kv) {
  ExperimentConfig c;
  if (!kv.has("run.seed")) {
    std::random_device rd;
    kv.set("run.seed", std::to_string((std::uint64_t(rd()) << 32) ^ rd()));
  }
  c.seed = kv.get_u64("run.seed", 1);
  std::vector<std::string> injected;
  for (const char* key : kSeedKeys)
    if (!kv.has(key)) {
      kv.set(key, std::to_string(derive_seed(c.seed, key)));
      injected.push_back(key);
    }

  c.name = kv.get_string("run.name", c.name);
  if (!filesystem_safe(c.name)) throw ConfigError("run.name must be filesystem-safe: '" + c.name + "'");
  c.output_dir = kv.get_string("run.output_dir", c.output_dir);
  c.do_train = kv.get_bool("run.train", c.do_train);
  c.checkpoint = kv.get_string("run.checkpoint", c.checkpoint);
  c.eval_checkpoint = kv.get_string("eval.checkpoint", c.eval_checkpoint);

  const std::string source = kv.get_string("corpus.source", "synth");
  if (source == "synth") {
    c.corpus_source = CorpusSource::Synth;
    c.synth = corpus::SynthConfig::from_key_values(kv, "synth.");
  } else if (source == "files") {
    c.corpus_source = CorpusSource::Files;
    c.train_path = kv.require_string("corpus.train");
    c.valid_path = kv.require_string("corpus.valid");
    c.test_path = kv.require_string("corpus.test");
  } else {
    throw ConfigError("invalid value for corpus.source: '" + source + "'");
  }
  c.valid_documents = kv.get_u64("corpus.valid_documents", c.valid_documents);
  c.test_documents = kv.get_u64("corpus.test_documents", c.test_documents);

  c.lm = lm::LMConfig::from_key_values(kv, "lm.");
  c.disc_hidden = kv.get_u64("disc.hidden", c.disc_hidden);
  c.disc_seed = kv.get_u64("disc.seed", c.disc_seed);
  c.train = training::TrainConfig::from_key_values(kv, "train.");

  c.eval.perplexity = kv.get_bool("eval.perplexity", c.eval.perplexity);
  c.eval.reverse_ppl = kv.get_bool("eval.reverse_ppl", c.eval.reverse_ppl);
  c.eval.empirical_mi = kv.get_bool("eval.empirical_mi", c.eval.empirical_mi);
  c.eval.variance = kv.get_bool("eval.variance", c.eval.variance);
  c.generation = eval::GenerationConfig::from_key_values(kv, "gen.");
  c.mi_eval = mi::EvalConfig::from_key_values(kv, "mi_eval.");
  c.mi_segment_len = kv.get_u64("mi_eval.segment_len", c.mi_segment_len);
  c.mi_gap = kv.get_u64("mi_eval.gap", c.mi_gap);
  c.reverse = eval::MleConfig::from_key_values(kv, "reverse.");
  c.reverse_lm_seed = kv.get_u64("reverse.lm_seed", c.reverse_lm_seed);
  c.variance = eval::VarianceConfig::from_key_values(kv, "variance.");

  for (const auto& key : kv.unconsumed())
    if (std::find(injected.begin(), injected.end(), key) == injected.end())
      throw ConfigError("unknown key: " + key);
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
  return from_key_values(KeyValues::load(path));
}

void ExperimentConfig::validate() const {
  if (!filesystem_safe(name)) throw ConfigError("run.name must be filesystem-safe");
  if (eval_checkpoint != "best" && eval_checkpoint != "final" && eval_checkpoint != "switch")
    throw ConfigError("eval.checkpoint must be best, final or switch");
  if (corpus_source == CorpusSource::Synth) {
    synth.validate();
    if (valid_documents == 0) throw ConfigError("corpus.valid_documents must be positive");
    if (test_documents == 0) throw ConfigError("corpus.test_documents must be positive");
  } else {
    const std::pair<const char*, const std::string*> paths[] = {
        {"corpus.train", &train_path}, {"corpus.valid", &valid_path}, {"corpus.test", &test_path}};
    for (const auto& [key, p] : paths)
      if (!fs::exists(*p)) throw ConfigError(std::string(key) + " does not exist: " + *p);
  }
  if (!do_train && checkpoint.empty()) throw ConfigError("run.checkpoint is required when run.train = false");
  if (!do_train && !fs::exists(checkpoint))
    throw ConfigError("run.checkpoint does not exist: " + checkpoint);
  if (disc_hidden == 0) throw ConfigError("disc.hidden must be positive");
  train.validate();
  generation.validate();
  mi_eval.validate();
  reverse.validate();
  if (eval.variance) variance.validate();
  if (lm.vocab_size != 0) lm.validate();
}

void ExperimentConfig::write(std::ostream& out) const {
  out << "run.name = " << name << "\n";
  if (!output_dir.empty()) out << "run.output_dir = " << output_dir << "\n";
  out << "run.seed = " << seed << "\n";
  out << "run.train = " << (do_train ? "true" : "false") << "\n";
  if (!checkpoint.empty()) out << "run.checkpoint = " << checkpoint << "\n";
  if (corpus_source == CorpusSource::Synth) {
    out << "corpus.source = synth\n";
    synth.write_key_values(out, "synth.");
  } else {
    out << "corpus.source = files\n";
    out << "corpus.train = " << train_path << "\n";
    out << "corpus.valid = " << valid_path << "\n";
    out << "corpus.test = " << test_path << "\n";
  }
  out << "corpus.valid_documents = " << valid_documents << "\n";
  out << "corpus.test_documents = " << test_documents << "\n";
  lm.write_key_values(out, "lm.");
  out << "disc.hidden = " << disc_hidden << "\n";
  out << "disc.seed = " << disc_seed << "\n";
  train.write_key_values(out, "train.");
  out << "eval.checkpoint = " << eval_checkpoint << "\n";
  out << "eval.perplexity = " << (eval.perplexity ? "true" : "false") << "\n";
  out << "eval.reverse_ppl = " << (eval.reverse_ppl ? "true" : "false") << "\n";
  out << "eval.empirical_mi = " << (eval.empirical_mi ? "true" : "false") << "\n";
  out << "eval.variance = " << (eval.variance ? "true" : "false") << "\n";
  generation.write_key_values(out, "gen.");
  mi_eval.write_key_values(out, "mi_eval.");
  out << "mi_eval.segment_len = " << mi_segment_len << "\n";
  out << "mi_eval.gap = " << mi_gap << "\n";
  reverse.write_key_values(out, "reverse.");
  out << "reverse.lm_seed = " << reverse_lm_seed << "\n";
  variance.write_key_values(out, "variance.");
}

CorpusSplits build_corpora(const ExperimentConfig& config) {
  CorpusSplits s;
  if (config.corpus_source == CorpusSource::Synth) {
    corpus::SynthConfig c = config.synth;
    s.train = corpus::synth_generate(c);
    c.num_documents = config.valid_documents;
    c.seed = derive_seed(config.synth.seed, "valid");
    s.valid = corpus::synth_generate(c);
    c.num_documents = config.test_documents;
    c.seed = derive_seed(config.synth.seed, "test");
    s.test = corpus::synth_generate(c);
    s.true_pair_mi = corpus::true_pair_mi(config.synth);
  } else {
    s.train = corpus::ingest_file(config.train_path);
    s.valid = corpus::ingest_file(config.valid_path, s.train.vocab);
    s.test = corpus::ingest_file(config.test_path, s.train.vocab);
  }
  return s;
}

void write_corpora(const CorpusSplits& s, const fs::path& dir) {
  const std::pair<const char*, const corpus::Corpus*> parts[] = {
      {"train.txt", &s.train}, {"valid.txt", &s.valid}, {"test.txt", &s.test}};
  for (const auto& [file, c] : parts) {
    std::ostringstream os;
    corpus::write_corpus(os, *c);
    write_text(dir / file, os.str());
  }
  std::ostringstream vocab;
  s.train.vocab.save(vocab);
  write_text(dir / "vocab.txt", vocab.str());
  nlohmann::ordered_json j;
  j["train_fingerprint"] = s.train.fingerprint();
  j["valid_fingerprint"] = s.valid.fingerprint();
  j["test_fingerprint"] = s.test.fingerprint();
  j["train_documents"] = s.train.documents.size();
  j["train_sentences"] = s.train.num_sentences();
  j["train_tokens"] = s.train.num_tokens();
  j["vocab_size"] = s.train.vocab.size();
  if (s.true_pair_mi)
    j["true_pair_mi"] = *s.true_pair_mi;
  else
    j["true_pair_mi"] = nullptr;
  write_text(dir / "info.json", j.dump(2) + "\n");
}

CorpusSplits read_corpora(const fs::path& dir) {
  std::istringstream vin(read_text(dir / "vocab.txt"));
  const corpus::Vocabulary vocab = corpus::Vocabulary::load(vin);
  CorpusSplits s;
  s.train = corpus::ingest_file((dir / "train.txt").string(), vocab);
  s.valid = corpus::ingest_file((dir / "valid.txt").string(), vocab);
  s.test = corpus::ingest_file((dir / "test.txt").string(), vocab);
  const auto info = nlohmann::json::parse(read_text(dir / "info.json"));
  if (!info.at("true_pair_mi").is_null()) s.true_pair_mi = info.at("true_pair_mi").get<double>();
  if (info.at("train_fingerprint").get<std::uint64_t>() != s.train.fingerprint())
    throw DataError("corpus files do not match their recorded fingerprint");
  return s;
}

Models make_models(const ExperimentConfig& config, std::size_t vocab_size) {
  lm::LMConfig lc = config.lm;
  if (lc.vocab_size == 0) lc.vocab_size = vocab_size;
  if (lc.vocab_size != vocab_size)
    throw ConfigError("lm.vocab_size " + std::to_string(lc.vocab_size) +
                      " differs from the corpus vocabulary " + std::to_string(vocab_size));
  lm::LanguageModel model(lc);
  discriminator::Discriminator disc({lc.encoding_dim(), config.disc_hidden, config.disc_seed});
  return {std::move(model), std::move(disc)};
}

void save_models(const Models& m, const fs::path& path) {
  fs::create_directories(path.parent_path());
  lm::save_checkpoint(path.string(), {&m.lm.params(), &m.disc.params()});
}

void load_models(Models& m, const fs::path& path) {
  const auto tensors = lm::load_checkpoint(path.string());
  lm::restore(m.lm.params(), tensors);
  lm::restore(m.disc.params(), tensors);
}

training::TrainSummary train_stage(const ExperimentConfig& config, const CorpusSplits& data,
                                   Models& models, const RunPaths& paths) {
  fs::create_directories(paths.root);
  std::ofstream metrics(paths.metrics(), std::ios::binary);
  if (!metrics) throw InputError("cannot write " + paths.metrics().string());
  training::Trainer trainer(models.lm, models.disc, config.train, data.train, data.valid);
  training::TrainHooks hooks;
  hooks.on_metrics = [&](const training::MetricsRecord& r) {
    metrics << r.to_json() << "\n";
    metrics.flush();
  };
  hooks.on_checkpoint = [&](const std::string& tag) { save_models(models, paths.checkpoint(tag)); };
  const auto s = trainer.run(hooks);
  nlohmann::ordered_json j;
  j["iterations"] = trainer.iteration();
  j["final_phase"] = training::to_string(s.phase.phase);
  if (s.phase.switch_iteration)
    j["switch_iteration"] = *s.phase.switch_iteration;
  else
    j["switch_iteration"] = nullptr;
  j["best_valid_ppl"] = s.best_valid_ppl;
  j["best_iteration"] = s.best_iteration;
  write_text(paths.summary(), j.dump(2) + "\n");
  return s;
}

void evaluate_stage(const ExperimentConfig& config, const CorpusSplits& data, Models& models,
                    const RunPaths& paths) {
  const fs::path ckpt = config.do_train ? paths.checkpoint(config.eval_checkpoint)
                                        : fs::path(config.checkpoint);
  if (!fs::exists(ckpt)) throw CheckpointError("missing checkpoint " + ckpt.string());
  load_models(models, ckpt);
  const fs::path out = paths.reports();
  fs::create_directories(out);
  if (config.eval.perplexity) {
    nlohmann::ordered_json j;
    j["checkpoint"] = ckpt.filename().string();
    j["valid_ppl"] = eval::perplexity(models.lm, data.valid);
    j["test_ppl"] = eval::perplexity(models.lm, data.test);
    write_text(out / "perplexity.json", j.dump() + "\n");
  }
  if (config.eval.empirical_mi) {
    const auto r = eval::empirical_mi(models.lm, data.train.vocab, config.generation,
                                      config.mi_segment_len, config.mi_gap, config.mi_eval);
    write_text(out / "empirical_mi.json", r.to_json() + "\n");
  }
  if (config.eval.reverse_ppl) {
    const auto second = eval::second_lm_config(models.lm.config(), config.reverse_lm_seed);
    const auto r =
        eval::reverse_perplexity(models.lm, data.test, config.generation, second, config.reverse);
    write_text(out / "reverse_ppl.json", r.to_json() + "\n");
  }
  if (config.eval.variance) {
    const fs::path sw = config.do_train ? paths.checkpoint("switch") : fs::path(config.checkpoint);
    if (!fs::exists(sw)) throw UsageError("variance needs a phase-switch checkpoint: " + sw.string());
    load_models(models, sw);
    const auto r = eval::grad_variance_ratio(models.lm, models.disc, data.train, config.variance);
    write_text(out / "variance.json", r.to_json() + "\n");
    std::ostringstream csv;
    r.write_histogram_csv(csv);
    write_text(out / "variance_hist.csv", csv.str());
    write_text(out / "variance_hist.txt", r.render());
  }
}

void run_experiment(const ExperimentConfig& config, const fs::path& dir) {
  const RunPaths paths{dir};
  if (fs::exists(paths.marker()))
    throw UsageError("run directory is complete and immutable: " + dir.string());
  fs::create_directories(dir);
  {
    std::ostringstream os;
    config.write(os);
    write_text(paths.config(), os.str());
  }
  const CorpusSplits data = build_corpora(config);
  write_corpora(data, paths.corpus());
  Models models = make_models(config, data.train.vocab.size());
  if (config.do_train) train_stage(config, data, models, paths);
  evaluate_stage(config, data, models, paths);
  write_text(paths.marker(), "complete\n");
}

RunRecord read_run(const fs::path& dir) {
  const RunPaths paths{dir};
  if (!fs::exists(paths.marker())) throw ComparisonError("run is not complete: " + dir.string());
  RunRecord r;
  r.dir = dir;
  const auto kv = KeyValues::load(paths.config().string());
  r.name = kv.get_string("run.name", dir.filename().string());
  const auto info = nlohmann::json::parse(read_text(paths.corpus() / "info.json"));
  r.corpus_fingerprint = info.at("train_fingerprint").get<std::uint64_t>() ^
                         (info.at("test_fingerprint").get<std::uint64_t>() * 31);
  const fs::path rep = paths.reports();
  if (fs::exists(rep / "perplexity.json")) {
    const auto j = nlohmann::json::parse(read_text(rep / "perplexity.json"));
    r.valid_ppl = j.at("valid_ppl").get<double>();
    r.test_ppl = j.at("test_ppl").get<double>();
  }
  if (fs::exists(rep / "reverse_ppl.json"))
    r.reverse_ppl = nlohmann::json::parse(read_text(rep / "reverse_ppl.json"))
                        .at("reverse_ppl")
                        .get<double>();
  if (fs::exists(rep / "empirical_mi.json")) {
    const auto j = nlohmann::json::parse(read_text(rep / "empirical_mi.json"));
    r.empirical_mi = j.at("mean").get<double>();
    r.empirical_mi_se = j.at("standard_error").get<double>();
  }
  if (fs::exists(paths.metrics())) {
    std::istringstream in(read_text(paths.metrics()));
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto j = nlohmann::json::parse(line);
      r.curve.emplace_back(j.at("iteration").get<std::size_t>(), j.at("valid_ppl").get<double>());
    }
  }
  return r;
}

namespace {

std::string cell(const std::optional<double>& v, const std::optional<double>& base) {
  if (!v) return "absent";
  char buf[64];
  if (base)
    std::snprintf(buf, sizeof buf, "%.4f (%+.4f)", *v, *v - *base);
  else
    std::snprintf(buf, sizeof buf, "%.4f", *v);
  return buf;
}

void put(nlohmann::ordered_json& j, const char* key, const std::optional<double>& v) {
  if (v)
    j[key] = *v;
  else
    j[key] = nullptr;
}

}  // namespace

Comparison compare_runs(const std::vector<fs::path>& dirs) {
  if (dirs.size() < 2) throw ComparisonError("compare needs at least two runs");
  Comparison c;
  for (const auto& d : dirs) c.runs.push_back(read_run(d));
  for (const auto& r : c.runs)
    if (r.corpus_fingerprint != c.runs.front().corpus_fingerprint)
      throw ComparisonError("runs use different corpora: " + c.runs.front().dir.string() + " vs " +
                            r.dir.string());
  const RunRecord& base = c.runs.front();
  std::ostringstream t;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-20s %-22s %-22s %-22s %-22s\n", "run", "valid_ppl", "test_ppl",
                "reverse_ppl", "empirical_mi");
  t << buf;
  nlohmann::ordered_json j = nlohmann::ordered_json::array();
  for (const auto& r : c.runs) {
    std::snprintf(buf, sizeof buf, "%-20s %-22s %-22s %-22s %-22s\n", r.name.c_str(),
                  cell(r.valid_ppl, base.valid_ppl).c_str(), cell(r.test_ppl, base.test_ppl).c_str(),
                  cell(r.reverse_ppl, base.reverse_ppl).c_str(),
                  cell(r.empirical_mi, base.empirical_mi).c_str());
    t << buf;
    nlohmann::ordered_json e;
    e["run"] = r.name;
    e["dir"] = r.dir.string();
    put(e, "valid_ppl", r.valid_ppl);
    put(e, "test_ppl", r.test_ppl);
    put(e, "reverse_ppl", r.reverse_ppl);
    put(e, "empirical_mi", r.empirical_mi);
    put(e, "empirical_mi_se", r.empirical_mi_se);
    j.push_back(e);
  }
  t << "deltas in parentheses are against " << base.name << "\n";
  c.table = t.str();
  c.json = j.dump(2) + "\n";

  std::map<std::size_t, std::vector<std::optional<double>>> rows;
  for (std::size_t k = 0; k < c.runs.size(); ++k)
    for (const auto& [it, ppl] : c.runs[k].curve) {
      auto& row = rows[it];
      row.resize(c.runs.size());
      row[k] = ppl;
    }
  std::ostringstream csv;
  csv << "iteration";
  for (const auto& r : c.runs) csv << "," << r.name;
  csv << "\n";
  for (auto& [it, row] : rows) {
    row.resize(c.runs.size());
    csv << it;
    for (const auto& v : row) {
      csv << ",";
      if (v) {
        std::snprintf(buf, sizeof buf, "%.17g", *v);
        csv << buf;
      }
    }
    csv << "\n";
  }
  c.curve_csv = csv.str();
  return c;
}

}  // namespace bmi::cli
