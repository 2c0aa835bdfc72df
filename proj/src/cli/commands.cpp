#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "bmi/cli/experiment.hpp"
#include "bmi/error.hpp"
#include "json.hpp"

namespace bmi::cli {

namespace {

struct LoadedRun {
  ExperimentConfig config;
  CorpusSplits data;
  Models models;
};

LoadedRun load_run(const fs::path& dir, const std::string& tag) {
  const RunPaths paths{dir};
  if (!fs::exists(paths.config())) throw InputError("not a run directory: " + dir.string());
  auto config = ExperimentConfig::load(paths.config().string());
  auto data = read_corpora(paths.corpus());
  auto models = make_models(config, data.train.vocab.size());
  const fs::path ckpt = config.do_train ? paths.checkpoint(tag) : fs::path(config.checkpoint);
  if (!fs::exists(ckpt)) throw CheckpointError("missing checkpoint " + ckpt.string());
  load_models(models, ckpt);
  return {std::move(config), std::move(data), std::move(models)};
}

void emit(const std::string& text, const std::string& out) {
  if (out.empty()) {
    std::cout << text;
    return;
  }
  const fs::path p(out);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream f(p, std::ios::binary);
  if (!f) throw InputError("cannot write " + out);
  f << text;
}

fs::path default_run_dir(const ExperimentConfig& c) {
  return fs::path(c.output_dir.empty() ? "runs" : c.output_dir) / c.name;
}

}  // namespace

int main_entry(int argc, char** argv) {
  CLI::App app{"Language model training with a mutual-information regularizer"};
  app.require_subcommand(1);

  std::string config_path, out, run_dir, tag = "best";
  std::vector<std::string> dirs;
  std::size_t iterations = 0;

  auto* gen = app.add_subcommand("gen-corpus", "Write train/valid/test corpora");
  gen->add_option("--config", config_path, "experiment config")->required();
  gen->add_option("--out", out, "output directory")->required();

  auto* train = app.add_subcommand("train", "Train a model into a run directory");
  train->add_option("--config", config_path, "experiment config")->required();
  train->add_option("--out", out, "run directory");

  auto* run = app.add_subcommand("run", "Train and evaluate as the config's toggles say");
  run->add_option("--config", config_path, "experiment config")->required();
  run->add_option("--out", out, "run directory");

  auto add_run_options = [&](CLI::App* sub) {
    sub->add_option("--run", run_dir, "run directory")->required();
    sub->add_option("--checkpoint", tag, "best, final or switch");
    sub->add_option("--out", out, "output file (stdout if absent)");
  };
  auto* ev = app.add_subcommand("eval", "Validation and test perplexity of a checkpoint");
  add_run_options(ev);
  auto* mi = app.add_subcommand("mi-eval", "Empirical MI of generated text");
  add_run_options(mi);
  auto* rev = app.add_subcommand("reverse-ppl", "Reverse perplexity of generated text");
  add_run_options(rev);
  auto* var = app.add_subcommand("variance", "RL / IW-RAML gradient variance ratio");
  var->add_option("--run", run_dir, "run directory")->required();
  var->add_option("--out", out, "output directory")->required();
  var->add_option("--iterations", iterations, "override variance.iterations");

  auto* cmp = app.add_subcommand("compare", "Side-by-side table of completed runs");
  cmp->add_option("runs", dirs, "run directories")->required()->expected(2, -1);
  cmp->add_option("--out", out, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*gen) {
      const auto c = ExperimentConfig::load(config_path);
      const auto data = build_corpora(c);
      write_corpora(data, out);
      std::cout << "wrote corpora to " << out << "\n";
    } else if (*train || *run) {
      auto c = ExperimentConfig::load(config_path);
      if (*train) c.eval = EvalToggles{false, false, false, false};
      const fs::path dir = out.empty() ? default_run_dir(c) : fs::path(out);
      run_experiment(c, dir);
      std::cout << "run complete: " << dir.string() << "\n";
    } else if (*ev) {
      auto r = load_run(run_dir, tag);
      nlohmann::ordered_json j;
      j["checkpoint"] = tag;
      j["valid_ppl"] = eval::perplexity(r.models.lm, r.data.valid);
      j["test_ppl"] = eval::perplexity(r.models.lm, r.data.test);
      emit(j.dump() + "\n", out);
    } else if (*mi) {
      auto r = load_run(run_dir, tag);
      const auto rep = eval::empirical_mi(r.models.lm, r.data.train.vocab, r.config.generation,
                                          r.config.mi_segment_len, r.config.mi_gap,
                                          r.config.mi_eval);
      emit(rep.to_json() + "\n", out);
    } else if (*rev) {
      auto r = load_run(run_dir, tag);
      const auto second = eval::second_lm_config(r.models.lm.config(), r.config.reverse_lm_seed);
      const auto rep = eval::reverse_perplexity(r.models.lm, r.data.test, r.config.generation,
                                                second, r.config.reverse);
      emit(rep.to_json() + "\n", out);
    } else if (*var) {
      auto r = load_run(run_dir, "switch");
      auto vc = r.config.variance;
      if (iterations) vc.iterations = iterations;
      const auto rep = eval::grad_variance_ratio(r.models.lm, r.models.disc, r.data.train, vc);
      const fs::path o(out);
      fs::create_directories(o);
      emit(rep.to_json() + "\n", (o / "variance.json").string());
      std::ostringstream csv;
      rep.write_histogram_csv(csv);
      emit(csv.str(), (o / "variance_hist.csv").string());
      emit(rep.render(), (o / "variance_hist.txt").string());
      std::cout << rep.render();
    } else if (*cmp) {
      std::vector<fs::path> paths(dirs.begin(), dirs.end());
      const auto c = compare_runs(paths);
      std::cout << c.table;
      if (!out.empty()) {
        const fs::path o(out);
        fs::create_directories(o);
        emit(c.table, (o / "comparison.txt").string());
        emit(c.json, (o / "comparison.json").string());
        emit(c.curve_csv, (o / "learning_curve.csv").string());
      }
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

}  // namespace bmi::cli
