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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "snrkit/audio.hpp"
#include "snrkit/config.hpp"
#include "snrkit/harness.hpp"
#include "test_util.hpp"

using namespace snrkit;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

// Small enough to run the whole pipeline in a few seconds.
ExperimentConfig tiny_config(int threads = 1) {
  KeyValueConfig kv = KeyValueConfig::parse(R"(
corpus.n_classes=6
corpus.n_speakers_equiv=3
corpus.n_train_utts=24
corpus.n_test_utts=4
corpus.noise_duration_s=3
noise.types=white,babble,hum
noise.varnet_types=white,babble
snr.train_grid=-10,-5,0,5,10,15,20
snr.eval_grid=-10,0,10
snr.trend_grid=-10,0,10,30
harness.varnet_utts_per_noise=6
mc.n_samples=4
net.hidden_units=24
net.hidden_layers=2
train.epochs=3
varnet.hidden_units=16
varnet.hidden_layers=1
varnet.epochs=3
regress.degree=2
)");
  kv.set("harness.threads", std::to_string(threads));
  return ExperimentConfig::from_kv(kv);
}

Waveform tone_burst(double amplitude) {
  Waveform w;
  w.samples.assign(16000, 0.0);
  for (std::size_t i = 4000; i < 12000; ++i) {
    w.samples[i] = amplitude * std::sin(2.0 * std::numbers::pi * 440.0 * static_cast<double>(i) / 16000.0);
  }
  return w;
}

}  // namespace

TEST_CASE("config defaults validate and round-trip through key=value") {
  const ExperimentConfig d = ExperimentConfig::defaults();
  CHECK_NOTHROW(d.validate());
  CHECK(d.noise_types.size() >= 6);
  CHECK(d.varnet_noise_types.size() >= 6);
  CHECK(d.train_snr_grid.size() == 41);
  CHECK(d.eval_snr_grid == std::vector<double>{-10, -5, 0, 5, 10});
  const KeyValueConfig kv = d.to_kv();
  CHECK(ExperimentConfig::from_kv(kv).to_kv().to_string() == kv.to_string());

  KeyValueConfig tweaked = kv;
  tweaked.set("mc.n_samples=7");
  tweaked.set("noise.types=white,pink");
  tweaked.set("noise.varnet_types=pink");
  const ExperimentConfig t = ExperimentConfig::from_kv(tweaked);
  CHECK(t.mc.n_samples == 7);
  CHECK(t.noise_types == std::vector<std::string>{"white", "pink"});
}

TEST_CASE("config rejects unknown keys and bad values") {
  KeyValueConfig kv;
  kv.set("corpus.n_trian_utts=3");
  CHECK_THROWS_CODE(ExperimentConfig::from_kv(kv), ErrorCode::kConfig);

  KeyValueConfig bad_int;
  bad_int.set("corpus.n_train_utts=many");
  CHECK_THROWS_CODE(ExperimentConfig::from_kv(bad_int), ErrorCode::kConfig);

  KeyValueConfig bad_noise;
  bad_noise.set("noise.types=white,gravel");
  CHECK_THROWS_CODE(ExperimentConfig::from_kv(bad_noise), ErrorCode::kConfig);

  KeyValueConfig orphan;
  orphan.set("noise.types=white");
  orphan.set("noise.varnet_types=pink");
  CHECK_THROWS_CODE(ExperimentConfig::from_kv(orphan), ErrorCode::kConfig);

  ExperimentConfig c = ExperimentConfig::defaults();
  c.mc.n_samples = 1;
  CHECK_THROWS_CODE(c.validate(), ErrorCode::kConfig);
  c = ExperimentConfig::defaults();
  c.n_calib_utts = -1;
  CHECK_THROWS_CODE(c.validate(), ErrorCode::kConfig);
}

TEST_CASE("noise profiles are distinct and resolvable") {
  std::set<std::string> names;
  for (const NoiseProfile& p : builtin_noise_profiles()) names.insert(p.name);
  CHECK(names.size() == builtin_noise_profiles().size());
  CHECK(names.size() >= 10);
  CHECK_THROWS_CODE(find_noise_profile("gravel"), ErrorCode::kConfig);
}

TEST_CASE("corpus splits are sized, disjoint and stable") {
  ExperimentConfig cfg = tiny_config();
  const Corpus c = build_corpus(cfg);
  CHECK(c.split(Split::kTrain).size() == 24);
  CHECK(c.split(Split::kTest).size() == 4);
  CHECK(c.split(Split::kCalib).empty());

  std::set<std::string> ids;
  std::set<std::uint64_t> seeds;
  for (const auto& u : c.utterances) {
    ids.insert(u.utt_id);
    seeds.insert(u.spec.seed);
  }
  CHECK(ids.size() == c.utterances.size());
  CHECK(seeds.size() == c.utterances.size());
  CHECK(c.split(Split::kTrain).front()->utt_id == "train_00000");
  CHECK(c.split(Split::kTest).front()->utt_id == "test_00000");

  // Adding calibration utterances leaves train and test untouched.
  cfg.n_calib_utts = 5;
  const Corpus with_calib = build_corpus(cfg);
  REQUIRE(with_calib.split(Split::kCalib).size() == 5);
  CHECK(with_calib.split(Split::kCalib).front()->utt_id == "calib_00000");
  const auto a = c.split(Split::kTest);
  const auto b = with_calib.split(Split::kTest);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i]->spec.seed == b[i]->spec.seed);
}

TEST_CASE("manifest is byte-identical across runs") {
  const ExperimentConfig cfg = tiny_config();
  TempDir d1, d2;
  write_manifest(d1.path(), cfg, build_corpus(cfg));
  write_manifest(d2.path(), cfg, build_corpus(cfg));
  const std::string m = slurp(d1 / "manifest.csv");
  CHECK(m == slurp(d2 / "manifest.csv"));
  CHECK(m.rfind("utt_id,kind,seed,duration_s,label_track_path\n", 0) == 0);
  CHECK(fs::exists(d1 / "labels" / "train_00000.txt"));
  CHECK(fs::exists(d1 / "features" / "test_00003.feat"));
  CHECK(slurp(d1 / "labels" / "test_00001.txt") == slurp(d2 / "labels" / "test_00001.txt"));
}

TEST_CASE("noise tracks are deterministic with disjoint train and test material") {
  const ExperimentConfig cfg = tiny_config();
  const Waveform a = noise_track(cfg, "babble", true);
  CHECK(a.samples == noise_track(cfg, "babble", true).samples);
  CHECK(a.samples != noise_track(cfg, "babble", false).samples);
  CHECK(a.duration_s() == doctest::Approx(cfg.noise_duration_s));
}

TEST_CASE("parallel_for visits every index once and propagates errors") {
  std::vector<std::atomic<int>> hits(97);
  parallel_for(hits.size(), 4, [&](std::size_t i) { hits[i]++; });
  for (const auto& h : hits) CHECK(h.load() == 1);
  CHECK_THROWS_AS(parallel_for(10, 3,
                               [](std::size_t i) {
                                 if (i == 6) throw std::runtime_error("boom");
                               }),
                  std::runtime_error);
}

TEST_CASE("energy-percentile baseline") {
  // Tone burst over digital silence: noise floor is zero, estimate clamps high.
  CHECK(baseline_energy_percentile_snr(tone_burst(0.5)) == 40.0);

  // Stationary white noise alone has no signal frames to speak of.
  SynthSpec white;
  white.kind = SynthKind::kNoiseWhite;
  white.duration_s = 2.0;
  white.seed = 5;
  const Waveform noise = synth_noise(white, 16000);
  CHECK(baseline_energy_percentile_snr(noise) <= 0.0);

  // Monotone in the true SNR for a fixed utterance and noise.
  const ExperimentConfig cfg = tiny_config();
  const Corpus c = build_corpus(cfg);
  const Waveform clean = synth_utterance(c.utterances[0].spec, 16000);
  double prev = -1e9;
  for (double snr : {-10.0, 0.0, 10.0, 20.0}) {
    const double est = baseline_energy_percentile_snr(mix_at_snr(clean, noise, snr).mixed);
    CHECK(est >= prev);
    prev = est;
  }

  Waveform tiny;
  tiny.samples.assign(4000, 0.1);
  CHECK_THROWS_CODE(baseline_energy_percentile_snr(tiny), ErrorCode::kTooShort);
}

TEST_CASE("score rows round-trip through CSV") {
  TempDir d;
  std::vector<ScoreRow> rows = {{"train_00001", "white", -5.0, 1.25, 0.125, 0.1, -3.5},
                                {"train_00002", "hum", 30.0, 0.1 / 3.0, 1e-7, 2e-3, 40.0}};
  write_score_rows(d / "s.csv", rows);
  const auto back = read_score_rows(d / "s.csv");
  REQUIRE(back.size() == rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(back[i].utt_id == rows[i].utt_id);
    CHECK(back[i].noise == rows[i].noise);
    CHECK(back[i].snr_db == rows[i].snr_db);
    CHECK(back[i].entropy == rows[i].entropy);
    CHECK(back[i].mc_mu == rows[i].mc_mu);
    CHECK(back[i].varnet == rows[i].varnet);
    CHECK(back[i].baseline_db == rows[i].baseline_db);
  }
  CHECK(slurp(d / "s.csv").rfind("utt_id,noise,snr_db,entropy,mc_mu,varnet,baseline_db\n", 0) == 0);
  std::ofstream(d / "broken.csv") << "utt_id,noise\nx,y\n";
  CHECK_THROWS(read_score_rows(d / "broken.csv"));
}

TEST_CASE("tiny pipeline end to end") {
  const ExperimentConfig cfg = tiny_config();
  TempDir d;
  const ModelBundle bundle = run_pipeline(cfg, d.path());
  for (const char* f : {"config.txt", "manifest.csv", "log.txt", "scores.csv", "regressors.txt",
                        "models/classifier.mlp", "models/varnet.mlp", "varnet_dataset.vnds"}) {
    CHECK_MESSAGE(fs::exists(d / f), f);
  }
  CHECK(bundle.regressors.size() == 3 * cfg.noise_types.size());
  CHECK(read_score_rows(d / "scores.csv").size() == 24 * cfg.noise_types.size());

  // Persisted bundle reproduces the in-memory one.
  const ModelBundle loaded = load_bundle(d.path());
  const Corpus corpus = build_corpus(cfg);
  const auto a = score_test_set(cfg, corpus, bundle, {0.0}, true);
  const auto b = score_test_set(cfg, corpus, loaded, {0.0}, true);
  REQUIRE(a.size() == 4 * cfg.noise_types.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].entropy == doctest::Approx(b[i].entropy).epsilon(1e-12));
    CHECK(a[i].varnet == doctest::Approx(b[i].varnet).epsilon(1e-12));
    CHECK(a[i].mc_mu == doctest::Approx(b[i].mc_mu).epsilon(1e-12));
  }

  const MaeTable table = evaluate(loaded, cfg);
  CHECK(table.rows.size() == cfg.noise_types.size() * 4 * cfg.eval_snr_grid.size());
  for (const MaeRow& r : table.rows) {
    CHECK(r.n == 4);
    CHECK(r.mae_db >= 0.0);
    CHECK(r.mae_db <= 60.0);  // predictions and truths both lie in [-20, 40]
  }
  const std::string text = format_mae_table(table);
  CHECK(text.find("hum") != std::string::npos);

  const TrendReport trends = emit_trend_report(loaded, cfg, d.path());
  CHECK(trends.rows.size() == cfg.noise_types.size() * cfg.trend_snr_grid.size());
  CHECK(trends.series("babble").size() == cfg.trend_snr_grid.size());
  CHECK(std::abs(trends.varnet_mc_pearson) <= 1.0);
  CHECK(slurp(d / "trends.csv").rfind("noise,snr_db,mean_entropy,mean_mu,mean_varnet\n", 0) == 0);
  CHECK(slurp(d / "trends.svg").find("<svg") != std::string::npos);

  const double est = estimate_snr(loaded, cfg, mix_at_snr(synth_utterance(corpus.utterances.back().spec, 16000),
                                                          noise_track(cfg, "white", false), 5.0)
                                                   .mixed,
                                  "white", Method::kF3);
  CHECK(est >= -20.0);
  CHECK(est <= 40.0);
  CHECK_THROWS_CODE(estimate_snr(loaded, cfg, tone_burst(0.1), "gravel", Method::kF1), ErrorCode::kMissing);
}

TEST_CASE("pipeline output does not depend on the worker count") {
  TempDir d1, d2;
  const ExperimentConfig serial = tiny_config(1);
  const ExperimentConfig threaded = tiny_config(3);
  write_mae_csv(d1 / "mae.csv", evaluate(run_pipeline(serial, d1.path()), serial));
  write_mae_csv(d2 / "mae.csv", evaluate(run_pipeline(threaded, d2.path()), threaded));
  CHECK(slurp(d1 / "mae.csv") == slurp(d2 / "mae.csv"));
  CHECK(slurp(d1 / "scores.csv") == slurp(d2 / "scores.csv"));
  CHECK(slurp(d1 / "models" / "varnet.mlp") == slurp(d2 / "models" / "varnet.mlp"));
}

TEST_CASE("command-line exit codes") {
  TempDir d;
  const std::string cli = SNRKIT_CLI_PATH;
  auto run = [&](const std::string& args) {
    const std::string cmd = "\"" + cli + "\" " + args + " >\"" + (d / "out.txt").string() + "\" 2>&1";
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
  };
  const std::string out = " --out-dir \"" + d.path().string() + "\"";
  CHECK(run("") == 1);
  CHECK(slurp(d / "out.txt").find("Subcommands") != std::string::npos);
  CHECK(run("frobnicate") == 1);
  CHECK(run("--help") == 0);
  CHECK(run("train" + out + " corpus.n_trian_utts=3") == 1);
  CHECK(run("estimate" + out + " --noise-type white --method baseline --wav missing.wav") == 2);
  CHECK(run("estimate" + out + " --noise-type white") == 1);  // --wav is required

  write_wav(d / "burst.wav", tone_burst(0.5));
  CHECK(run("estimate" + out + " --noise-type white --method baseline --wav \"" + (d / "burst.wav").string() + "\"") == 0);
  CHECK(slurp(d / "out.txt") == "snr_db=40\n");
}
