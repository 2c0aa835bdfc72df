#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "bmi/corpus/synth.hpp"
#include "bmi/discriminator/discriminator.hpp"
#include "bmi/eval/eval.hpp"
#include "bmi/lm/lm.hpp"
#include "bmi/mi/estimator.hpp"
#include "bmi/training/training.hpp"

namespace bmi::cli {

namespace fs = std::filesystem;

enum class CorpusSource { Synth, Files };

struct EvalToggles {
  bool perplexity = true;
  bool reverse_ppl = true;
  bool empirical_mi = true;
  bool variance = false;
};

// Flat key-value experiment description. Every seed is resolved at parse time:
// an absent component seed is derived from run.seed, and an absent run.seed is
// drawn from the system entropy source.
struct ExperimentConfig {
  std::string name = "run";
  std::string output_dir;  // empty: the caller decides
  std::uint64_t seed = 1;

  CorpusSource corpus_source = CorpusSource::Synth;
  corpus::SynthConfig synth;
  std::size_t valid_documents = 100;
  std::size_t test_documents = 100;
  std::string train_path, valid_path, test_path;

  lm::LMConfig lm;  // vocab_size 0 means "from the corpus"
  std::size_t disc_hidden = 64;
  std::uint64_t disc_seed = 1;
  training::TrainConfig train;

  bool do_train = true;
  std::string checkpoint;  // used when do_train is false
  std::string eval_checkpoint = "best";  // best, final or switch
  EvalToggles eval;

  eval::GenerationConfig generation;
  mi::EvalConfig mi_eval;
  std::size_t mi_segment_len = 0;
  std::size_t mi_gap = 0;
  eval::MleConfig reverse;
  std::uint64_t reverse_lm_seed = 1;
  eval::VarianceConfig variance;

  // Throws ConfigError naming the first offending key, including unknown keys.
  static ExperimentConfig from_key_values(KeyValues kv);
  static ExperimentConfig load(const std::string& path);
  // Every field, defaults expanded.
  void write(std::ostream& out) const;
  void validate() const;
};

struct CorpusSplits {
  corpus::Corpus train, valid, test;
  std::optional<double> true_pair_mi;
};

CorpusSplits build_corpora(const ExperimentConfig& config);
// train.txt, valid.txt, test.txt, vocab.txt and info.json under dir.
void write_corpora(const CorpusSplits& splits, const fs::path& dir);
CorpusSplits read_corpora(const fs::path& dir);

// Layout of a run directory.
struct RunPaths {
  fs::path root;
  fs::path config() const { return root / "config.resolved.txt"; }
  fs::path corpus() const { return root / "corpus"; }
  fs::path metrics() const { return root / "metrics.jsonl"; }
  fs::path checkpoint(const std::string& tag) const { return root / "checkpoints" / (tag + ".ckpt"); }
  fs::path summary() const { return root / "summary.json"; }
  fs::path reports() const { return root / "reports"; }
  fs::path marker() const { return root / "COMPLETE"; }
};

// A model pair bound to a run's configuration.
struct Models {
  lm::LanguageModel lm;
  discriminator::Discriminator disc;
};
Models make_models(const ExperimentConfig& config, std::size_t vocab_size);
void save_models(const Models& m, const fs::path& path);
void load_models(Models& m, const fs::path& path);

// Pipeline stages. Each writes its outputs under the run directory.
training::TrainSummary train_stage(const ExperimentConfig& config, const CorpusSplits& data,
                                   Models& models, const RunPaths& paths);
void evaluate_stage(const ExperimentConfig& config, const CorpusSplits& data, Models& models,
                    const RunPaths& paths);

// Full run: resolved config, corpora, training (unless disabled), evaluations,
// then the completion marker. Refuses a directory that is already complete.
void run_experiment(const ExperimentConfig& config, const fs::path& dir);

struct RunRecord {
  std::string name;
  fs::path dir;
  std::uint64_t corpus_fingerprint = 0;
  std::optional<double> valid_ppl, test_ppl, reverse_ppl, empirical_mi, empirical_mi_se;
  std::vector<std::pair<std::size_t, double>> curve;  // (iteration, valid_ppl)
};
RunRecord read_run(const fs::path& dir);

struct Comparison {
  std::vector<RunRecord> runs;
  std::string table;  // plain text, deltas against the first run
  std::string curve_csv;
  std::string json;
};
// Throws ComparisonError on fewer than two runs, incomplete runs or differing
// corpora.
Comparison compare_runs(const std::vector<fs::path>& dirs);

// Command-line entry point; returns the process exit code (0 success,
// 1 validation error, 2 runtime failure).
int main_entry(int argc, char** argv);

}  // namespace bmi::cli
