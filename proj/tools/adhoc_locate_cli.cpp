// Copyright 2026 The adhoc-locate Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// adhoc-locate: simulate scenes, localise speakers and run seeded
// experiments. Exit status 0 on success, 1 on usage errors, 2 when the work
// itself fails.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "adhoc_locate/adhoc_locate.hpp"

namespace fs = std::filesystem;
using namespace adhoc;

namespace {

constexpr int kUsage = 1;
constexpr int kFailure = 2;

struct SimulateArgs {
  std::string config;
  std::uint64_t seed = 0;
  int speakers = 1;
  int nodes = 20;
  double t60 = 0.4;
  double snr_db = 30.0;
  std::string out = "scene.json";
  std::string wav_dir;
  int max_order = 6;
  double duration_s = 1.0;
};

struct LocalizeArgs {
  std::string scenario;
  std::string wav_dir;
  std::string posteriors;
  std::string estimator = "oracle";
  std::string weights;
  std::string k = "all";
  std::size_t grid_l = 0;
  bool unweighted = false;
  std::string out_prefix;  // dump-candidates only
};

struct EvaluateArgs {
  std::string config;
  std::string out;
  std::vector<std::string> k;  // sweep only
  unsigned threads = 0;
  bool print = false;
};

int simulate(const SimulateArgs& a) {
  ScenarioConfig sc;
  RenderConfig render;
  if (!a.config.empty()) {
    const auto cfg = load_experiment_config(a.config);
    sc = cfg.scenario;
    render = cfg.estimator.render;
  } else {
    sc.speakers_min = sc.speakers_max = a.speakers;
    sc.nodes_min = sc.nodes_max = a.nodes;
    sc.t60_min = sc.t60_max = a.t60;
    sc.snr_min_db = sc.snr_max_db = a.snr_db;
    render.max_order = a.max_order;
    render.duration_s = a.duration_s;
  }
  const Scenario scene = generate_scenario(sc, a.seed);
  save_scenario(a.out, scene);
  std::cout << "scenario written to " << a.out << " (" << scene.node_count() << " nodes, "
            << scene.speaker_count() << " speakers)\n";
  if (a.wav_dir.empty()) return 0;

  fs::create_directories(a.wav_dir);
  const auto source = rendered_audio(render);
  std::vector<MultichannelAudio> audio;
  double peak = 0.0;
  for (NodeId id = 0; id < scene.node_count(); ++id) {
    audio.push_back(source(scene, id));
    for (const auto& c : audio.back().channels)
      for (double v : c) peak = std::max(peak, std::abs(v));
  }
  // One gain for every node keeps relative levels intact.
  const double gain = peak > 0.0 ? 0.9 / peak : 1.0;
  for (NodeId id = 0; id < scene.node_count(); ++id)
    write_wav(fs::path(a.wav_dir) / ("node_" + std::to_string(id) + ".wav"), audio[id], gain);
  std::cout << scene.node_count() << " recordings written to " << a.wav_dir << '\n';
  return 0;
}

/// Per-node estimates for `localize` and `dump-candidates`.
NodeEstimates node_estimates(const Scenario& scene, const LocalizeArgs& a) {
  if (!a.posteriors.empty())
    return estimates_from_posteriors(scene, load_posteriors(a.posteriors));
  EstimatorConfig ec;
  ec.kind = parse_estimator(a.estimator);
  ec.grid_classes = a.grid_l ? a.grid_l : default_grid_classes(ec.kind);
  if (ec.kind == EstimatorKind::kCnn) {
    if (a.weights.empty()) throw ConfigError("estimator 'cnn' needs --weights");
    if (!fs::exists(a.weights)) throw ConfigError("weights file not found: " + a.weights);
    ec.model = std::make_shared<const nn::NetworkWeights>(nn::load_weights(a.weights));
  }
  AudioSource audio;
  if (!a.wav_dir.empty()) {
    const fs::path dir = a.wav_dir;
    audio = [dir](const Scenario&, NodeId id) {
      return read_wav(dir / ("node_" + std::to_string(id) + ".wav"));
    };
  }
  return estimate_nodes(scene, ec, audio);
}

Localization run_fusion(const Scenario& scene, const LocalizeArgs& a, const NodeEstimates& est) {
  const FusionConfig fc = a.unweighted ? FusionConfig::unweighted() : FusionConfig{};
  return fuse(scene, est, parse_selection(a.k), fc);
}

int localize(const LocalizeArgs& a) {
  const Scenario scene = load_scenario(a.scenario);
  const auto loc = run_fusion(scene, a, node_estimates(scene, a));
  std::cout << "selected nodes:";
  for (NodeId id : loc.selected) std::cout << ' ' << id;
  std::cout << '\n';
  for (std::size_t i = 0; i < loc.positions.size(); ++i)
    std::cout << "speaker " << i << ": " << format_fixed(loc.positions[i].x, 3) << ' '
              << format_fixed(loc.positions[i].y, 3) << '\n';
  if (loc.positions.size() < scene.speaker_count())
    std::cout << "only " << loc.positions.size() << " of " << scene.speaker_count()
              << " speakers found\n";
  const auto m = mae(scene.speaker_positions, loc.positions, scene.room.floor_diagonal());
  std::cout << "MAE against scenario truth: " << format_fixed(m.mae, 4) << " m\n";
  return 0;
}

int dump_candidates(const LocalizeArgs& a) {
  const Scenario scene = load_scenario(a.scenario);
  const auto loc = run_fusion(scene, a, node_estimates(scene, a));
  const std::string cloud_path = a.out_prefix + "_cloud.csv";
  const std::string cluster_path = a.out_prefix + "_clusters.csv";
  std::ofstream cloud(cloud_path), clusters(cluster_path);
  if (!cloud || !clusters) throw IoError("cannot write dumps with prefix " + a.out_prefix);
  write_cloud_csv(cloud, loc.cloud, loc.cloud.points.empty() ? nullptr : &loc.clusters);
  write_clusters_csv(clusters, loc.clusters);
  std::cout << loc.cloud.points.size() << " candidates written to " << cloud_path << '\n'
            << loc.clusters.centers.size() << " clusters written to " << cluster_path << '\n';
  return 0;
}

int evaluate(const EvaluateArgs& a, bool sweep) {
  auto cfg = load_experiment_config(a.config);
  if (sweep) {
    if (a.k.empty()) throw ConfigError("sweep needs at least one --k");
    cfg.selections.clear();
    for (const auto& k : a.k) cfg.selections.push_back(parse_selection(k));
  }
  const std::string out = a.out.empty() ? cfg.output : a.out;
  if (out.empty()) throw ConfigError("no output path (use --out or 'output' in the config)");
  const auto res = run_experiment(cfg, a.threads ? a.threads : worker_count());
  std::ostringstream csv;
  write_results_csv(csv, cfg, res, sweep);
  std::ofstream file(out);
  if (!file) throw IoError("cannot write " + out);
  file << csv.str();
  if (a.print) std::cout << csv.str();
  std::size_t failed = 0;
  for (const auto& ag : res.aggregates) failed += ag.failed;
  std::cerr << res.records.size() << " records written to " << out;
  if (failed) std::cerr << " (" << failed << " failed, see status column)";
  std::cerr << '\n';
  return 0;
}

void add_localize_options(CLI::App* cmd, LocalizeArgs& a) {
  cmd->add_option("--scenario", a.scenario, "Scenario JSON file")->required();
  auto* wav = cmd->add_option("--wav-dir", a.wav_dir, "Directory with node_<id>.wav recordings");
  cmd->add_option("--posteriors", a.posteriors, "JSON file of per-node sentence posteriors")
      ->excludes(wav);
  cmd->add_option("--estimator", a.estimator, "oracle, srp-phat, music or cnn")
      ->check(CLI::IsMember({"oracle", "srp-phat", "srp", "music", "cnn"}));
  cmd->add_option("--weights", a.weights, "ADLW weights for the cnn estimator");
  cmd->add_option("--k", a.k, "Number of selected nodes, or 'all'");
  cmd->add_option("--grid-L", a.grid_l, "Azimuth classes (default depends on estimator)");
  cmd->add_flag("--unweighted", a.unweighted,
                "Unit weights, no culling, speakers ranked by cluster mass");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Speaker localisation with ad-hoc microphone arrays"};
  app.require_subcommand(0, 1);

  SimulateArgs sim;
  auto* simulate_cmd = app.add_subcommand("simulate", "Draw a random scene and optionally render it");
  simulate_cmd->add_option("--config", sim.config, "Experiment config whose scenario block is used");
  simulate_cmd->add_option("--seed", sim.seed, "Scenario seed");
  simulate_cmd->add_option("--speakers", sim.speakers, "Speaker count")->check(CLI::Range(1, 8));
  simulate_cmd->add_option("--nodes", sim.nodes, "Node count")->check(CLI::Range(2, 1000));
  simulate_cmd->add_option("--t60", sim.t60, "Reverberation time in seconds");
  simulate_cmd->add_option("--snr", sim.snr_db, "Signal-to-noise ratio in dB");
  simulate_cmd->add_option("--max-order", sim.max_order, "Image-source reflection order");
  simulate_cmd->add_option("--duration", sim.duration_s, "Recording length in seconds");
  simulate_cmd->add_option("--out", sim.out, "Scenario JSON output");
  simulate_cmd->add_option("--wav-dir", sim.wav_dir, "Write node_<id>.wav recordings here");

  LocalizeArgs loc;
  auto* localize_cmd = app.add_subcommand("localize", "Localise the speakers of one scene");
  add_localize_options(localize_cmd, loc);

  LocalizeArgs dump;
  auto* dump_cmd =
      app.add_subcommand("dump-candidates", "Write the candidate cloud and clusters as CSV");
  add_localize_options(dump_cmd, dump);
  dump_cmd->add_option("--out-prefix", dump.out_prefix, "Output prefix")->required();

  EvaluateArgs ev;
  auto* evaluate_cmd = app.add_subcommand("evaluate", "Run a seeded experiment");
  evaluate_cmd->add_option("--config", ev.config, "Experiment config (JSON)")->required();
  evaluate_cmd->add_option("--out", ev.out, "CSV output");
  evaluate_cmd->add_option("--threads", ev.threads, "Worker threads (default ADHOC_LOCATE_THREADS)");
  evaluate_cmd->add_flag("--print", ev.print, "Also print the CSV");

  EvaluateArgs sw;
  auto* sweep_cmd = app.add_subcommand("sweep", "Aggregate rows for several K values");
  sweep_cmd->add_option("--config", sw.config, "Experiment config (JSON)")->required();
  sweep_cmd->add_option("--k", sw.k, "K values, comma separated or repeated; 'all' for every node")
      ->delimiter(',')
      ->required();
  sweep_cmd->add_option("--out", sw.out, "CSV output");
  sweep_cmd->add_option("--threads", sw.threads, "Worker threads (default ADHOC_LOCATE_THREADS)");
  sweep_cmd->add_flag("--print", sw.print, "Also print the CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }
  if (app.get_subcommands().empty()) {
    std::cerr << app.help() << "\nSubcommands: simulate, localize, evaluate, sweep, dump-candidates\n";
    return kUsage;
  }

  try {
    if (simulate_cmd->parsed()) return simulate(sim);
    if (localize_cmd->parsed()) return localize(loc);
    if (dump_cmd->parsed()) return dump_candidates(dump);
    if (evaluate_cmd->parsed()) return evaluate(ev, false);
    return evaluate(sw, true);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  }
}
