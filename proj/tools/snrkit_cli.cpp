// Copyright 2026 The snrkit Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// snrkit command-line front end. Pipeline subcommands share one experiment
// directory; each stage reloads what the previous one wrote.

#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "snrkit/error.hpp"
#include "snrkit/harness.hpp"

namespace fs = std::filesystem;
using namespace snrkit;

namespace {

struct Options {
  std::string config_path;
  std::string out_dir;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::optional<int> mc_samples;
  std::optional<int> degree;
  std::string wav;
  std::string noise_type;
  std::string method = "f2";
  double snr_db = 5.0;
  bool verbose = false;
  bool oracle_fit = false;
};

fs::path out_dir(const Options& o) {
  if (!o.out_dir.empty()) return o.out_dir;
  if (const char* env = std::getenv("SNRKIT_OUT_DIR"); env != nullptr && *env != '\0') return env;
  return "snrkit_out";
}

// Precedence: defaults < --config (or the directory's saved config) <
// key=value overrides < dedicated flags.
ExperimentConfig load_config(const Options& o, const fs::path& dir) {
  KeyValueConfig kv;
  if (!o.config_path.empty()) {
    kv = KeyValueConfig::load(o.config_path);
  } else if (fs::exists(dir / "config.txt")) {
    kv = KeyValueConfig::load(dir / "config.txt");
  }
  for (const std::string& a : o.overrides) kv.set(a);
  if (o.seed) kv.set("seed", std::to_string(*o.seed));
  if (o.threads) kv.set("harness.threads", std::to_string(*o.threads));
  if (o.mc_samples) kv.set("mc.n_samples", std::to_string(*o.mc_samples));
  if (o.degree) kv.set("regress.degree", std::to_string(*o.degree));
  return ExperimentConfig::from_kv(kv);
}

void save_config(const ExperimentConfig& cfg, const fs::path& dir) {
  fs::create_directories(dir);
  std::ofstream os(dir / "config.txt");
  if (!os) fail(ErrorCode::kIo, "cannot write " + (dir / "config.txt").string());
  os << cfg.to_kv().to_string();
}

fs::path inside(const fs::path& dir, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() ? path : dir / path;
}

void print_kv(const std::string& key, double v) {
  std::cout << key << '=' << std::setprecision(6) << v << '\n';
}

Corpus write_corpus(const ExperimentConfig& cfg, const fs::path& dir) {
  Corpus corpus = build_corpus(cfg);
  write_manifest(dir, cfg, corpus);
  return corpus;
}

int cmd_synth(const Options& o) {
  const fs::path dir = out_dir(o);
  const ExperimentConfig cfg = load_config(o, dir);
  save_config(cfg, dir);
  const Corpus corpus = write_corpus(cfg, dir);
  std::cout << "utterances=" << corpus.utterances.size() << '\n';
  if (!o.wav.empty()) {
    // Demo mixture: first test utterance in held-out noise at --snr.
    const std::string noise = o.noise_type.empty() ? cfg.noise_types.front() : o.noise_type;
    const auto test = corpus.split(Split::kTest);
    const Waveform clean = synth_utterance(test.front()->spec, cfg.sample_rate_hz);
    const Waveform track = noise_track(cfg, noise, false);
    const NoisyMixture m = mix_at_snr(clean, track, o.snr_db);
    const fs::path path = inside(dir, o.wav);
    write_wav(path, m.mixed);
    std::cout << "wav=" << path.string() << '\n';
    print_kv("snr_db", o.snr_db);
  }
  return 0;
}

int cmd_train(const Options& o) {
  const fs::path dir = out_dir(o);
  const ExperimentConfig cfg = load_config(o, dir);
  save_config(cfg, dir);
  const Corpus corpus = write_corpus(cfg, dir);
  StageLog log(dir / "log.txt", o.verbose);
  const ClassifierResult r = stage_train_classifier(cfg, corpus, dir, log);
  print_kv("final_loss", r.final_loss);
  print_kv("clean_test_accuracy", r.clean_test_accuracy);
  return 0;
}

int cmd_distill(const Options& o) {
  const fs::path dir = out_dir(o);
  const ExperimentConfig cfg = load_config(o, dir);
  const MlpParams cls = read_model(dir / "models" / "classifier.mlp");
  StageLog log(dir / "log.txt", o.verbose);
  const VarianceNetwork vn = stage_distill_varnet(cfg, build_corpus(cfg), cls, dir, log);
  print_kv("target_mean", vn.affine.offset);
  print_kv("target_sd", vn.affine.scale);
  return 0;
}

int cmd_fit(const Options& o) {
  const fs::path dir = out_dir(o);
  const ExperimentConfig cfg = load_config(o, dir);
  const MlpParams cls = read_model(dir / "models" / "classifier.mlp");
  const VarianceNetwork vn = read_varnet(dir / "models" / "varnet.mlp");
  const Corpus corpus = build_corpus(cfg);
  StageLog log(dir / "log.txt", o.verbose);
  std::vector<ScoreRow> rows = stage_score_training(cfg, corpus, cls, log);
  add_varnet_scores(cfg, corpus, vn, rows);
  write_score_rows(dir / "scores.csv", rows);
  const auto regs = fit_regressors(cfg, rows);
  write_regressors(dir / "regressors.txt", regs);
  std::cout << "regressors=" << regs.size() << '\n';
  return 0;
}

int cmd_evaluate(const Options& o) {
  const fs::path dir = out_dir(o);
  const ExperimentConfig cfg = load_config(o, dir);
  const ModelBundle bundle = load_bundle(dir);
  const MaeTable table = evaluate(bundle, cfg, o.oracle_fit);
  const std::string stem = o.oracle_fit ? "mae_table_oracle" : "mae_table";
  write_mae_csv(dir / (stem + ".csv"), table);
  std::ofstream(dir / (stem + ".txt")) << format_mae_table(table);
  std::cerr << format_mae_table(table);
  for (Method m : {Method::kBaseline, Method::kF1, Method::kF2, Method::kF3}) {
    print_kv(std::string("mean_mae_") + to_string(m), table.mean_mae(m));
  }
  return 0;
}

int cmd_trends(const Options& o) {
  const fs::path dir = out_dir(o);
  const ExperimentConfig cfg = load_config(o, dir);
  const TrendReport r = emit_trend_report(load_bundle(dir), cfg, dir);
  print_kv("varnet_mc_pearson", r.varnet_mc_pearson);
  std::cout << "series=" << r.rows.size() / std::max<std::size_t>(1, cfg.trend_snr_grid.size()) << '\n';
  return 0;
}

int cmd_estimate(const Options& o) {
  const fs::path dir = out_dir(o);
  const ExperimentConfig cfg = load_config(o, dir);
  if (o.wav.empty()) fail(ErrorCode::kConfig, "estimate needs --wav");
  if (o.noise_type.empty()) fail(ErrorCode::kConfig, "estimate needs --noise-type");
  const Method method = method_from_string(o.method);
  const Waveform w = read_wav(o.wav);
  // The baseline needs no trained models.
  const ModelBundle bundle = method == Method::kBaseline ? ModelBundle{} : load_bundle(dir);
  print_kv("snr_db", estimate_snr(bundle, cfg, w, o.noise_type, method));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"snrkit: utterance SNR estimation from dropout-network uncertainty"};
  app.require_subcommand(1);
  Options o;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config_path, "key=value config file")->check(CLI::ExistingFile);
    sub->add_option("--out-dir", o.out_dir, "experiment directory (default: $SNRKIT_OUT_DIR or ./snrkit_out)");
    sub->add_option("--seed", o.seed, "experiment seed");
    sub->add_option("--threads", o.threads, "worker threads (0 = all processors)")->check(CLI::NonNegativeNumber);
    sub->add_option("--mc-samples", o.mc_samples, "MC-dropout samples per frame")->check(CLI::PositiveNumber);
    sub->add_option("--degree", o.degree, "regressor polynomial degree")->check(CLI::NonNegativeNumber);
    sub->add_option("--set,overrides", o.overrides, "config overrides, key=value");
    sub->add_flag("-v,--verbose", o.verbose, "echo stage log to stderr");
  };

  std::vector<std::pair<CLI::App*, int (*)(const Options&)>> commands;
  auto add = [&](const char* name, const char* help, int (*fn)(const Options&)) {
    CLI::App* sub = app.add_subcommand(name, help);
    common(sub);
    commands.emplace_back(sub, fn);
    return sub;
  };
  CLI::App* synth = add("synth", "generate the corpus manifest (and optionally a demo mixture)", cmd_synth);
  synth->add_option("--wav", o.wav, "write a demo test mixture to this path");
  synth->add_option("--noise-type", o.noise_type, "noise type for the demo mixture");
  synth->add_option("--snr", o.snr_db, "SNR of the demo mixture in dB");
  add("train", "train the dropout classifier on clean speech", cmd_train);
  add("distill", "distill the variance network from MC-dropout targets", cmd_distill);
  add("fit", "score noisy training mixtures and fit per-noise regressors", cmd_fit);
  CLI::App* eval = add("evaluate", "score the test set and write the MAE table", cmd_evaluate);
  eval->add_flag("--oracle-fit", o.oracle_fit, "refit regressors on the test scores (sanity check)");
  add("trends", "write uncertainty-vs-SNR trends (CSV and SVG)", cmd_trends);
  CLI::App* est = add("estimate", "estimate the SNR of one WAV file", cmd_estimate);
  est->add_option("--wav", o.wav, "mono 16-bit PCM WAV")->required();
  est->add_option("--noise-type", o.noise_type, "noise type selecting the regressor")->required();
  est->add_option("--method", o.method, "f1, f2, f3 or baseline")
      ->check(CLI::IsMember({"f1", "f2", "f3", "baseline"}));

  if (argc < 2) {
    std::cerr << app.help();
    return 1;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  for (auto& [sub, fn] : commands) {
    if (!sub->parsed()) continue;
    try {
      return fn(o);
    } catch (const Error& e) {
      std::cerr << "snrkit " << sub->get_name() << ": " << e.what() << '\n';
      return e.code() == ErrorCode::kConfig ? 1 : 2;
    } catch (const std::exception& e) {
      std::cerr << "snrkit " << sub->get_name() << ": " << e.what() << '\n';
      return 2;
    }
  }
  return 1;
}
