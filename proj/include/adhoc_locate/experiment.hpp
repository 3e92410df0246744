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

// Monte Carlo evaluation: experiment configuration files, seeded trial
// execution on a worker pool, and the results CSV.

#pragma once

#include <atomic>
#include <charconv>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "adhoc_locate/errors.hpp"
#include "adhoc_locate/metrics.hpp"
#include "adhoc_locate/nn.hpp"
#include "adhoc_locate/pipeline.hpp"
#include "adhoc_locate/room_sim.hpp"

namespace adhoc {

/// K for K-best selection; empty means every node.
using Selection = std::optional<std::size_t>;

inline std::string selection_label(const Selection& s) {
  return s ? std::to_string(*s) : std::string("all");
}

inline Selection parse_selection(const std::string& s) {
  if (s == "all") return std::nullopt;
  std::size_t k = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), k);
  if (ec != std::errc{} || p != s.data() + s.size() || k < 2)
    throw ConfigError("invalid selection '" + s + "' (expected an integer >= 2 or 'all')");
  return k;
}

struct ExperimentConfig {
  ScenarioConfig scenario;
  EstimatorConfig estimator;
  std::string weights_path;
  FusionConfig fusion;
  std::vector<Selection> selections{std::nullopt};
  std::size_t trials = 1;
  std::uint64_t seed = 0;
  std::optional<double> miss_penalty_m;  // default: room floor diagonal
  bool record_timing = false;
  std::string output;
};

struct EvalRecord {
  std::size_t trial = 0;
  std::uint64_t scenario_seed = 0;
  std::string estimator;
  Selection selection;
  std::size_t b = 0;
  double snr_db = 0.0;
  double t60 = 0.0;
  bool failed = false;
  std::string error;
  double mae_m = 0.0;
  std::vector<double> per_speaker_errors;
  std::size_t missed = 0;
  double runtime_ms = 0.0;
  // Not written to CSV.
  std::vector<Point2D> truth;
  std::vector<Point2D> predicted;
  std::vector<NodeId> selected;
  std::vector<std::vector<double>> node_sentences;

  bool success() const { return !failed && missed == 0; }
};

struct AggregateRecord {
  std::string estimator;
  Selection selection;
  std::size_t trials = 0;
  std::size_t failed = 0;
  std::size_t missed = 0;
  double mae_m = 0.0;          // over non-failed trials, penalties included
  double success_mae_m = 0.0;  // over trials without misses or failures
  std::size_t successes = 0;
};

struct ExperimentResult {
  std::vector<EvalRecord> records;  // grouped by selection, then trial index
  std::vector<AggregateRecord> aggregates;
};

// -- Config files -------------------------------------------------------------

namespace config_detail {

template <typename T>
void read_range(const nlohmann::json& j, const char* key, T& lo, T& hi) {
  if (!j.contains(key)) return;
  const auto& v = j.at(key);
  if (v.is_array()) {
    lo = v.at(0).get<T>();
    hi = v.at(1).get<T>();
  } else {
    lo = hi = v.get<T>();
  }
}

}  // namespace config_detail

/// Parses an experiment file (JSON). Relative paths resolve against
/// `base_dir`. A CNN estimator has its weights loaded here, so a missing file
/// fails early with the path in the message.
inline ExperimentConfig parse_experiment_config(const nlohmann::json& j,
                                                const std::filesystem::path& base_dir = {}) {
  using config_detail::read_range;
  ExperimentConfig c;
  try {
    if (j.contains("scenario")) {
      const auto& s = j.at("scenario");
      if (s.contains("rooms")) {
        c.scenario.rooms.clear();
        for (const auto& r : s.at("rooms"))
          c.scenario.rooms.push_back({r.at(0).get<double>(), r.at(1).get<double>(),
                                      r.at(2).get<double>()});
      }
      read_range(s, "t60", c.scenario.t60_min, c.scenario.t60_max);
      read_range(s, "snr_db", c.scenario.snr_min_db, c.scenario.snr_max_db);
      read_range(s, "speakers", c.scenario.speakers_min, c.scenario.speakers_max);
      read_range(s, "nodes", c.scenario.nodes_min, c.scenario.nodes_max);
      c.scenario.mic_count = s.value("mic_count", c.scenario.mic_count);
      c.scenario.mic_spacing = s.value("mic_spacing", c.scenario.mic_spacing);
      c.scenario.wall_margin = s.value("wall_margin", c.scenario.wall_margin);
      c.scenario.min_node_speaker_distance =
          s.value("min_node_speaker_distance", c.scenario.min_node_speaker_distance);
      c.scenario.min_speaker_separation =
          s.value("min_speaker_separation", c.scenario.min_speaker_separation);
      c.scenario.min_node_separation = s.value("min_node_separation", c.scenario.min_node_separation);
      const auto orient = s.value("orientation", std::string("random"));
      if (orient == "random") {
        c.scenario.orientation = OrientationMode::kRandom;
      } else if (orient == "front-facing") {
        c.scenario.orientation = OrientationMode::kFrontFacing;
      } else {
        throw ConfigError("unknown orientation mode '" + orient + "'");
      }
    }

    c.estimator.kind = parse_estimator(j.value("estimator", std::string("oracle")));
    c.estimator.grid_classes = j.value("grid_L", default_grid_classes(c.estimator.kind));
    c.estimator.peak_separation = j.value("peak_separation", std::size_t{1});
    if (j.contains("oracle")) {
      const auto& o = j.at("oracle");
      c.estimator.oracle.angular_noise_deg = o.value("angular_noise_deg", 0.0);
      c.estimator.oracle.quantize = o.value("quantize", true);
      c.estimator.oracle.distance_confidence = o.value("distance_confidence", false);
      c.estimator.oracle.noise_per_meter_deg = o.value("noise_per_meter_deg", 0.0);
      c.estimator.oracle.confidence_decay_m = o.value("confidence_decay_m", 3.0);
    }
    if (j.contains("render")) {
      const auto& r = j.at("render");
      c.estimator.render.max_order = r.value("max_order", 6);
      c.estimator.render.duration_s = r.value("duration_s", 1.0);
      const auto ref = r.value("snr_reference", std::string("node"));
      if (ref == "node") {
        c.estimator.render.snr_reference = SnrReference::kAtNode;
      } else if (ref == "source") {
        c.estimator.render.snr_reference = SnrReference::kAtSource;
      } else {
        throw ConfigError("unknown snr_reference '" + ref + "'");
      }
      c.estimator.render.frame_size = r.value("frame_size", std::size_t{512});
      c.estimator.render.overlap = r.value("overlap", 0.5);
      c.estimator.render.window = parse_window(r.value("window", std::string("hann")));
    }
    if (j.contains("spectral")) {
      const auto& sp = j.at("spectral");
      c.estimator.spectral.min_hz = sp.value("min_hz", 0.0);
      c.estimator.spectral.max_hz = sp.value("max_hz", 1e9);
    }

    if (j.contains("fusion")) {
      const auto& f = j.at("fusion");
      if (f.value("mode", std::string("default")) == "unweighted")
        c.fusion = FusionConfig::unweighted();
      c.fusion.include_ghosts = f.value("include_ghosts", c.fusion.include_ghosts);
      if (f.contains("weighting")) {
        const auto w = f.at("weighting").get<std::string>();
        if (w == "posterior") {
          c.fusion.weighting = CandidateWeighting::kPosteriorProduct;
        } else if (w == "unit") {
          c.fusion.weighting = CandidateWeighting::kUnit;
        } else {
          throw ConfigError("unknown weighting '" + w + "'");
        }
      }
      c.fusion.cull = f.value("cull", c.fusion.cull);
      c.fusion.cull_margin = f.value("cull_margin", c.fusion.cull_margin);
      c.fusion.mean_shift.bandwidth = f.value("bandwidth", c.fusion.mean_shift.bandwidth);
      c.fusion.mean_shift.tol = f.value("tol", c.fusion.mean_shift.tol);
      c.fusion.mean_shift.max_iter = f.value("max_iter", c.fusion.mean_shift.max_iter);
      c.fusion.mean_shift.merge_radius = f.value("merge_radius", c.fusion.mean_shift.merge_radius);
      c.fusion.min_member_count = f.value("min_member_count", c.fusion.min_member_count);
      c.fusion.min_range = f.value("min_range", c.fusion.min_range);
      c.fusion.mean_shift.kernel_cutoff = f.value("kernel_cutoff", c.fusion.mean_shift.kernel_cutoff);
      if (f.contains("rank")) {
        const std::string r = f.at("rank").get<std::string>();
        if (r == "density")
          c.fusion.ranking = SpeakerRanking::kDensity;
        else if (r == "mass")
          c.fusion.ranking = SpeakerRanking::kMass;
        else
          throw ConfigError("fusion.rank must be 'density' or 'mass'");
      }
    }

    if (j.contains("selection")) {
      c.selections.clear();
      const auto& s = j.at("selection");
      auto one = [](const nlohmann::json& v) -> Selection {
        return v.is_string() ? parse_selection(v.get<std::string>())
                             : parse_selection(std::to_string(v.get<std::size_t>()));
      };
      if (s.is_array()) {
        for (const auto& v : s) c.selections.push_back(one(v));
      } else {
        c.selections.push_back(one(s));
      }
      if (c.selections.empty()) throw ConfigError("empty selection list");
    }
    c.trials = j.value("trials", std::size_t{1});
    c.seed = j.value("seed", std::uint64_t{0});
    if (j.contains("miss_penalty_m") && !j.at("miss_penalty_m").is_null())
      c.miss_penalty_m = j.at("miss_penalty_m").get<double>();
    c.record_timing = j.value("record_timing", false);
    c.output = j.value("output", std::string{});
    c.weights_path = j.value("weights", std::string{});
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("invalid experiment config: ") + e.what());
  }

  if (c.trials < 1) throw ConfigError("trial count must be at least 1");
  if (c.estimator.kind == EstimatorKind::kCnn) {
    if (c.weights_path.empty()) throw ConfigError("estimator 'cnn' needs a 'weights' path");
    std::filesystem::path w(c.weights_path);
    if (w.is_relative() && !base_dir.empty()) w = base_dir / w;
    if (!std::filesystem::exists(w)) throw ConfigError("weights file not found: " + w.string());
    c.weights_path = w.string();
    c.estimator.model = std::make_shared<const nn::NetworkWeights>(nn::load_weights(w));
  }
  return c;
}

inline ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return parse_experiment_config(j, path.parent_path());
}

// -- Execution -----------------------------------------------------------------

/// Worker count: ADHOC_LOCATE_THREADS when set to a positive integer, else
/// the hardware concurrency.
inline unsigned worker_count() {
  if (const char* env = std::getenv("ADHOC_LOCATE_THREADS")) {
    unsigned n = 0;
    const std::string s(env);
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), n);
    if (ec == std::errc{} && n > 0) return n;
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

/// Runs fn(i) for i in [0, n) on up to `threads` workers.
template <typename Fn>
void parallel_for(std::size_t n, unsigned threads, Fn&& fn) {
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, n));
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::jthread> pool;
  for (unsigned t = 0; t < threads; ++t)
    pool.emplace_back([&] {
      for (std::size_t i; (i = next.fetch_add(1)) < n;) fn(i);
    });
}

inline std::uint64_t trial_seed(std::uint64_t base, std::size_t trial) {
  return mix_seed(base, 0x7000 + trial);
}

/// One record per selection for a single trial. Stage failures are recorded,
/// not thrown.
inline std::vector<EvalRecord> run_trial(const ExperimentConfig& cfg, std::size_t trial) {
  const std::uint64_t seed = trial_seed(cfg.seed, trial);
  std::vector<EvalRecord> out(cfg.selections.size());
  for (std::size_t s = 0; s < cfg.selections.size(); ++s) {
    out[s].trial = trial;
    out[s].scenario_seed = seed;
    out[s].estimator = estimator_name(cfg.estimator.kind);
    out[s].selection = cfg.selections[s];
  }
  const auto t0 = std::chrono::steady_clock::now();
  Scenario sc;
  NodeEstimates est;
  try {
    sc = generate_scenario(cfg.scenario, seed);
    est = estimate_nodes(sc, cfg.estimator);
  } catch (const std::exception& e) {
    for (auto& r : out) {
      r.failed = true;
      r.error = e.what();
    }
    return out;
  }
  const auto t_est = std::chrono::steady_clock::now();
  const double penalty = cfg.miss_penalty_m.value_or(sc.room.floor_diagonal());
  for (auto& r : out) {
    const auto t1 = std::chrono::steady_clock::now();
    r.b = sc.speaker_count();
    r.snr_db = sc.snr_db;
    r.t60 = sc.t60;
    r.truth = sc.speaker_positions;
    r.node_sentences = est.sentences;
    try {
      const Localization loc = fuse(sc, est, r.selection, cfg.fusion);
      r.selected = loc.selected;
      r.predicted = loc.positions;
      const MaeResult m = mae(sc.speaker_positions, loc.positions, penalty);
      r.mae_m = m.mae;
      r.per_speaker_errors = m.per_speaker;
      r.missed = m.missed_count;
    } catch (const std::exception& e) {
      r.failed = true;
      r.error = e.what();
    }
    const auto t2 = std::chrono::steady_clock::now();
    r.runtime_ms = std::chrono::duration<double, std::milli>((t_est - t0) + (t2 - t1)).count();
  }
  return out;
}

inline std::vector<AggregateRecord> aggregate(const ExperimentConfig& cfg,
                                              const std::vector<EvalRecord>& records) {
  std::vector<AggregateRecord> out;
  for (const auto& sel : cfg.selections) {
    AggregateRecord a;
    a.estimator = estimator_name(cfg.estimator.kind);
    a.selection = sel;
    double sum = 0.0, ok_sum = 0.0;
    for (const auto& r : records) {
      if (r.selection != sel) continue;
      ++a.trials;
      if (r.failed) {
        ++a.failed;
        continue;
      }
      a.missed += r.missed;
      sum += r.mae_m;
      if (r.success()) {
        ok_sum += r.mae_m;
        ++a.successes;
      }
    }
    const std::size_t n = a.trials - a.failed;
    a.mae_m = n ? sum / static_cast<double>(n) : 0.0;
    a.success_mae_m = a.successes ? ok_sum / static_cast<double>(a.successes) : 0.0;
    out.push_back(a);
  }
  return out;
}

/// Runs every trial (in parallel) and aggregates per selection. Records are
/// ordered by selection, then trial index, independent of scheduling.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg,
                                       unsigned threads = worker_count()) {
  if (cfg.trials < 1) throw ConfigError("trial count must be at least 1");
  std::vector<std::vector<EvalRecord>> per_trial(cfg.trials);
  parallel_for(cfg.trials, threads, [&](std::size_t t) { per_trial[t] = run_trial(cfg, t); });
  ExperimentResult res;
  for (std::size_t s = 0; s < cfg.selections.size(); ++s)
    for (std::size_t t = 0; t < cfg.trials; ++t) res.records.push_back(per_trial[t][s]);
  res.aggregates = aggregate(cfg, res.records);
  return res;
}

// -- CSV -------------------------------------------------------------------------

/// Fixed-point decimal, independent of the global locale.
inline std::string format_fixed(double v, int precision = 6) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::fixed, precision);
  return std::string(buf, r.ptr);
}

inline std::string csv_header(bool timing) {
  std::string h =
      "trial,seed,estimator,selection,b,snr_db,t60,status,mae_m,success_mae_m,missed,"
      "per_speaker_errors_m";
  if (timing) h += ",runtime_ms";
  return h;
}

inline void write_trial_row(std::ostream& os, const EvalRecord& r, bool timing) {
  os << r.trial << ',' << r.scenario_seed << ',' << r.estimator << ','
     << selection_label(r.selection) << ',';
  if (r.failed) {
    os << ",,,failed,,,,";
  } else {
    os << r.b << ',' << format_fixed(r.snr_db, 3) << ',' << format_fixed(r.t60, 3) << ",ok,"
       << format_fixed(r.mae_m) << ',' << (r.success() ? format_fixed(r.mae_m) : "") << ','
       << r.missed << ',';
    for (std::size_t i = 0; i < r.per_speaker_errors.size(); ++i)
      os << (i ? ";" : "") << format_fixed(r.per_speaker_errors[i]);
  }
  if (timing) os << ',' << format_fixed(r.runtime_ms, 3);
  os << '\n';
}

inline void write_aggregate_row(std::ostream& os, const AggregateRecord& a, std::uint64_t seed,
                                bool timing) {
  os << "aggregate," << seed << ',' << a.estimator << ',' << selection_label(a.selection)
     << ",,,," << (a.trials - a.failed) << '/' << a.trials << ',' << format_fixed(a.mae_m) << ','
     << format_fixed(a.success_mae_m) << ',' << a.missed << ',';
  if (timing) os << ',';
  os << '\n';
}

/// Header, trial rows (unless `aggregates_only`), then one aggregate row per
/// selection.
inline void write_results_csv(std::ostream& os, const ExperimentConfig& cfg,
                              const ExperimentResult& res, bool aggregates_only = false) {
  os << csv_header(cfg.record_timing) << '\n';
  if (!aggregates_only)
    for (const auto& r : res.records) write_trial_row(os, r, cfg.record_timing);
  for (const auto& a : res.aggregates) write_aggregate_row(os, a, cfg.seed, cfg.record_timing);
}

}  // namespace adhoc
