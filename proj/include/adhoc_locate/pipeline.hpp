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

// End-to-end localisation of one scenario: per-node DOA estimation followed
// by selection, triangulation and clustering.

#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "adhoc_locate/doa.hpp"
#include "adhoc_locate/fusion.hpp"
#include "adhoc_locate/nn.hpp"
#include "adhoc_locate/room_sim.hpp"
#include "adhoc_locate/sigproc.hpp"

namespace adhoc {

enum class EstimatorKind { kOracle, kSrpPhat, kMusic, kCnn };

inline EstimatorKind parse_estimator(const std::string& s) {
  if (s == "oracle") return EstimatorKind::kOracle;
  if (s == "srp-phat" || s == "srp") return EstimatorKind::kSrpPhat;
  if (s == "music") return EstimatorKind::kMusic;
  if (s == "cnn") return EstimatorKind::kCnn;
  throw ConfigError("unknown estimator '" + s + "'");
}

inline std::string estimator_name(EstimatorKind k) {
  switch (k) {
    case EstimatorKind::kOracle: return "oracle";
    case EstimatorKind::kSrpPhat: return "srp-phat";
    case EstimatorKind::kMusic: return "music";
    case EstimatorKind::kCnn: return "cnn";
  }
  return "unknown";
}

/// Ground-truth estimator settings. With `distance_confidence` a node's
/// angular noise grows and its posterior flattens with its mean distance d to
/// the speakers: sigma = angular_noise_deg + noise_per_meter_deg * d and
/// confidence = exp(-d / confidence_decay_m), floored at 0.05.
struct OracleOptions {
  double angular_noise_deg = 0.0;
  bool quantize = true;
  bool distance_confidence = false;
  double noise_per_meter_deg = 0.0;
  double confidence_decay_m = 3.0;
};

struct RenderConfig {
  int max_order = 6;
  double duration_s = 1.0;
  SnrReference snr_reference = SnrReference::kAtNode;
  std::size_t frame_size = 512;
  double overlap = 0.5;
  WindowKind window = WindowKind::kHann;
};

struct EstimatorConfig {
  EstimatorKind kind = EstimatorKind::kOracle;
  std::size_t grid_classes = 37;
  std::size_t peak_separation = 1;
  OracleOptions oracle;
  RenderConfig render;
  SpectralOptions spectral;
  std::shared_ptr<const nn::NetworkWeights> model;  // required for kCnn
};

struct FusionConfig {
  bool include_ghosts = true;
  CandidateWeighting weighting = CandidateWeighting::kPosteriorProduct;
  bool cull = true;
  double cull_margin = 1.0;
  MeanShiftParams mean_shift;
  std::size_t min_member_count = 2;
  /// Drops intersections this close to either generating node.
  double min_range = 0.3;
  SpeakerRanking ranking = SpeakerRanking::kDensity;

  /// Unit weights, every intersection kept, centres ranked by mass.
  static FusionConfig unweighted() {
    FusionConfig f;
    f.weighting = CandidateWeighting::kUnit;
    f.cull = false;
    f.min_range = 0.0;
    f.ranking = SpeakerRanking::kMass;
    return f;
  }
};

/// Per-node DOA output: sentence posteriors (for scoring) and peaks (for
/// triangulation), both indexed by node id.
struct NodeEstimates {
  std::vector<std::vector<double>> sentences;
  std::vector<DoaEstimate> estimates;
};

/// Supplies the recording of one node; the default renders it.
using AudioSource = std::function<MultichannelAudio(const Scenario&, NodeId)>;

inline AudioSource rendered_audio(const RenderConfig& cfg) {
  return [cfg](const Scenario& sc, NodeId id) {
    // Sources depend only on the scenario; cheap enough to regenerate.
    const auto sources = scenario_sources(sc, cfg.duration_s);
    RenderOptions ro;
    ro.noise_seed = mix_seed(sc.seed, 200 + id);
    ro.snr_reference = cfg.snr_reference;
    return render_node_audio(sc, sc.node_poses[id], sources, rir_for(sc, cfg.max_order), ro);
  };
}

inline std::size_t default_grid_classes(EstimatorKind k) {
  return k == EstimatorKind::kSrpPhat || k == EstimatorKind::kMusic ? 180 : 37;
}

inline NodeEstimates estimate_nodes(const Scenario& sc, const EstimatorConfig& cfg,
                                    const AudioSource& audio = {}) {
  const AzimuthGrid grid{cfg.grid_classes};
  grid.validate();
  const std::size_t b = sc.speaker_count();
  NodeEstimates out;
  const AudioSource source = audio ? audio : rendered_audio(cfg.render);
  if (cfg.kind == EstimatorKind::kCnn && !cfg.model)
    throw ConfigError("CNN estimator requires a loaded model");

  for (NodeId id = 0; id < sc.node_count(); ++id) {
    const NodePose& pose = sc.node_poses[id];
    DoaPosterior post;
    if (cfg.kind == EstimatorKind::kOracle) {
      double sigma = cfg.oracle.angular_noise_deg;
      double confidence = 1.0;
      if (cfg.oracle.distance_confidence) {
        double d = 0.0;
        for (const auto& s : sc.speaker_positions) d += distance(pose.position, s);
        d /= static_cast<double>(b);
        sigma += cfg.oracle.noise_per_meter_deg * d;
        confidence = std::max(0.05, std::exp(-d / cfg.oracle.confidence_decay_m));
      }
      post = oracle_posterior(sc, pose, grid, sigma, mix_seed(sc.seed, 100 + id), confidence);
      out.sentences.push_back(post.sentence);
      if (!cfg.oracle.quantize) {
        out.estimates.push_back(oracle_estimate_exact(sc, pose, id));
        continue;
      }
    } else {
      const MultichannelAudio rec = source(sc, id);
      if (rec.channel_count() != static_cast<std::size_t>(pose.mic_count))
        throw DomainError("node " + std::to_string(id) + ": recording has " +
                          std::to_string(rec.channel_count()) + " channels, expected " +
                          std::to_string(pose.mic_count));
      const StftTensor spec =
          stft(rec, cfg.render.frame_size, cfg.render.overlap, cfg.render.window);
      switch (cfg.kind) {
        case EstimatorKind::kSrpPhat: post = srp_phat(spec, pose, grid, cfg.spectral); break;
        case EstimatorKind::kMusic:
          post = music_broadband(spec, pose, grid, b, cfg.spectral);
          break;
        default: post = cnn_posterior(phase_map(spec, true), *cfg.model, grid); break;
      }
      out.sentences.push_back(post.sentence);
    }
    out.estimates.push_back(estimate_from_posterior(id, post, b, grid, cfg.peak_separation));
  }
  return out;
}

/// Uses externally computed sentence posteriors (one per node id).
inline NodeEstimates estimates_from_posteriors(const Scenario& sc, const PosteriorFile& pf,
                                               std::size_t peak_separation = 1) {
  NodeEstimates out;
  for (NodeId id = 0; id < sc.node_count(); ++id) {
    const auto it = pf.sentence.find(id);
    if (it == pf.sentence.end())
      throw FormatError("posterior file has no entry for node " + std::to_string(id));
    DoaPosterior post{{it->second}, it->second};
    out.sentences.push_back(it->second);
    out.estimates.push_back(
        estimate_from_posterior(id, post, sc.speaker_count(), pf.grid, peak_separation));
  }
  return out;
}

struct Localization {
  std::vector<NodeId> selected;
  CandidateCloud cloud;
  ClusterResult clusters;
  std::vector<Point2D> positions;
};

/// Selection (K nodes, or all when unset), candidate generation, clustering
/// and reduction to at most B positions. An empty cloud yields no positions.
inline Localization fuse(const Scenario& sc, const NodeEstimates& est,
                         std::optional<std::size_t> k, const FusionConfig& cfg) {
  Localization out;
  const std::size_t b = sc.speaker_count();
  out.selected = select_nodes(est.sentences, b, k.value_or(sc.node_count()));
  CandidateOptions co;
  co.include_ghosts = cfg.include_ghosts;
  co.weighting = cfg.weighting;
  if (cfg.cull) co.cull_room = sc.room;
  co.cull_margin = cfg.cull_margin;
  co.min_range = cfg.min_range;
  out.cloud = build_candidates(out.selected, est.estimates, sc.node_poses, co);
  if (out.cloud.points.empty()) return out;
  out.clusters = mean_shift(out.cloud, cfg.mean_shift);
  out.positions = resolve_speakers(out.clusters, b, cfg.min_member_count, cfg.ranking);
  return out;
}

}  // namespace adhoc
