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

// Fusion of per-node DOA estimates into speaker positions: confidence-based
// K-best node selection, pairwise triangulation of every bearing candidate
// (ghosts included), and Gaussian mean-shift clustering of the resulting
// point cloud.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "adhoc_locate/doa.hpp"
#include "adhoc_locate/errors.hpp"
#include "adhoc_locate/geometry.hpp"
#include "adhoc_locate/room_sim.hpp"

namespace adhoc {

struct NodeScore {
  NodeId node_id = 0;
  double score = 0.0;
};

/// Selection score of one node: its largest sentence posterior for B = 1,
/// the mean of its B largest values otherwise.
inline double node_score(std::span<const double> sentence, std::size_t b) {
  if (sentence.empty()) throw DomainError("empty posterior");
  if (b < 1) throw DomainError("B must be at least 1");
  std::vector<double> v(sentence.begin(), sentence.end());
  const std::size_t top = std::min(b, v.size());
  std::partial_sort(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(top), v.end(),
                    std::greater<>());
  return std::accumulate(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(top), 0.0) /
         static_cast<double>(top);
}

/// The K highest-scoring nodes, best first; ties go to the lower node id.
inline std::vector<NodeId> select_top_k(std::vector<NodeScore> scores, std::size_t k) {
  if (k < 2) throw DomainError("node selection needs K >= 2");
  if (k > scores.size()) throw DomainError("K exceeds the number of nodes");
  std::sort(scores.begin(), scores.end(), [](const NodeScore& a, const NodeScore& b) {
    return a.score != b.score ? a.score > b.score : a.node_id < b.node_id;
  });
  std::vector<NodeId> out;
  out.reserve(k);
  for (std::size_t i = 0; i < k; ++i) out.push_back(scores[i].node_id);
  return out;
}

/// Scores every node from its sentence posterior (indexed by node id) and
/// keeps the top K.
inline std::vector<NodeId> select_nodes(std::span<const std::vector<double>> sentences,
                                        std::size_t b, std::size_t k) {
  std::vector<NodeScore> scores;
  scores.reserve(sentences.size());
  for (std::size_t n = 0; n < sentences.size(); ++n)
    scores.push_back({static_cast<NodeId>(n), node_score(sentences[n], b)});
  return select_top_k(std::move(scores), k);
}

struct Candidate {
  Point2D point;
  double weight = 1.0;
  NodeId node_a = 0;
  NodeId node_b = 0;
  bool ghost_a = false;
  bool ghost_b = false;
};

struct CandidateCloud {
  std::vector<Candidate> points;

  double total_weight() const {
    double s = 0.0;
    for (const auto& c : points) s += c.weight;
    return s;
  }
};

enum class CandidateWeighting {
  kPosteriorProduct,  // product of the two peak posteriors
  kUnit,              // every intersection counts once
};

struct CandidateOptions {
  bool include_ghosts = true;
  CandidateWeighting weighting = CandidateWeighting::kPosteriorProduct;
  /// Intersections outside the room grown by `cull_margin` are dropped.
  std::optional<Room> cull_room;
  double cull_margin = 1.0;
  /// Intersections closer than this to either generating node are dropped.
  /// Every bearing line of a node passes through the node itself, so any
  /// foreign line grazing a node piles spurious crossings onto it.
  double min_range = 0.0;
};

/// Triangulates every cross-combination of bearing candidates for every
/// unordered pair of selected nodes. Parallel bearings are skipped. At most
/// (2B)^2 points come from one pair.
inline CandidateCloud build_candidates(std::span<const NodeId> selected,
                                       std::span<const DoaEstimate> estimates,
                                       std::span<const NodePose> poses,
                                       const CandidateOptions& opt = {}) {
  std::vector<NodeId> ids(selected.begin(), selected.end());
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  for (NodeId id : ids)
    if (id >= estimates.size() || id >= poses.size())
      throw DomainError("selected node " + std::to_string(id) + " has no estimate or pose");

  auto bearings = [&](NodeId id) {
    std::vector<BearingCandidate> out;
    for (const auto& peak : estimates[id].peaks)
      for (const auto& c : local_to_global_bearings(poses[id], peak.theta_deg, id, peak.value))
        if (opt.include_ghosts || !c.is_ghost) out.push_back(c);
    return out;
  };
  std::vector<std::vector<BearingCandidate>> per_node;
  per_node.reserve(ids.size());
  for (NodeId id : ids) per_node.push_back(bearings(id));

  auto inside = [&](Point2D p) {
    if (!opt.cull_room) return true;
    const double m = opt.cull_margin;
    return p.x >= -m && p.x <= opt.cull_room->width + m && p.y >= -m &&
           p.y <= opt.cull_room->depth + m;
  };

  CandidateCloud cloud;
  for (std::size_t i = 0; i < ids.size(); ++i)
    for (std::size_t j = i + 1; j < ids.size(); ++j) {
      if (poses[ids[i]].position == poses[ids[j]].position) continue;
      for (const auto& a : per_node[i])
        for (const auto& b : per_node[j]) {
          Point2D p;
          try {
            p = triangulate_pair(poses[ids[i]], a.alpha_deg, poses[ids[j]], b.alpha_deg);
          } catch (const NoIntersection&) {
            continue;
          }
          if (!is_finite(p) || !inside(p)) continue;
          if (distance(p, poses[ids[i]].position) < opt.min_range ||
              distance(p, poses[ids[j]].position) < opt.min_range)
            continue;
          const double w =
              opt.weighting == CandidateWeighting::kUnit ? 1.0 : a.weight * b.weight;
          if (!(w > 0.0)) continue;
          cloud.points.push_back({p, w, ids[i], ids[j], a.is_ghost, b.is_ghost});
        }
    }
  return cloud;
}

struct MeanShiftParams {
  double bandwidth = 0.18;
  double tol = 1e-4;
  int max_iter = 300;
  /// Negative means bandwidth / 2.
  double merge_radius = -1.0;
  /// Kernel terms beyond this many bandwidths are ignored (weight below
  /// exp(-cutoff^2 / 2)); 0 evaluates every point.
  double kernel_cutoff = 6.0;

  double effective_merge_radius() const { return merge_radius < 0.0 ? bandwidth / 2.0 : merge_radius; }
};

struct ClusterResult {
  std::vector<Point2D> centers;  // descending mass
  std::vector<double> masses;
  std::vector<std::size_t> member_counts;
  std::vector<std::size_t> assignment;  // cloud point -> center index
  /// Weighted kernel sum sum_i w_i exp(-|c - x_i|^2 / 2h^2) at each centre.
  std::vector<double> densities;
};

/// One Gaussian mean-shift update from x over every cloud point; returns x
/// when no kernel mass reaches it.
inline Point2D mean_shift_step(const CandidateCloud& cloud, Point2D x, double bandwidth) {
  const double inv = 1.0 / (2.0 * bandwidth * bandwidth);
  double sw = 0.0, sx = 0.0, sy = 0.0;
  for (const auto& c : cloud.points) {
    const double dx = x.x - c.point.x, dy = x.y - c.point.y;
    const double k = c.weight * std::exp(-(dx * dx + dy * dy) * inv);
    sw += k;
    sx += k * c.point.x;
    sy += k * c.point.y;
  }
  return sw > 0.0 ? Point2D{sx / sw, sy / sw} : x;
}

namespace fusion_detail {

/// Uniform bucket grid answering "points within one cell of x".
class NeighbourGrid {
 public:
  NeighbourGrid(const CandidateCloud& cloud, double cell) : cloud_(cloud), cell_(cell) {
    for (std::size_t i = 0; i < cloud.points.size(); ++i)
      cells_[key(cloud.points[i].point)].push_back(i);
  }

  template <typename Fn>
  void for_each_near(Point2D x, Fn&& fn) const {
    const auto [cx, cy] = coords(x);
    for (std::int64_t dx = -1; dx <= 1; ++dx)
      for (std::int64_t dy = -1; dy <= 1; ++dy) {
        const auto it = cells_.find(pack(cx + dx, cy + dy));
        if (it == cells_.end()) continue;
        for (std::size_t i : it->second) fn(cloud_.points[i]);
      }
  }

 private:
  std::pair<std::int64_t, std::int64_t> coords(Point2D p) const {
    auto c = [&](double v) {
      return static_cast<std::int64_t>(std::floor(std::clamp(v / cell_, -1e15, 1e15)));
    };
    return {c(p.x), c(p.y)};
  }
  static std::uint64_t pack(std::int64_t x, std::int64_t y) {
    return (static_cast<std::uint64_t>(x) * 0x9E3779B97F4A7C15ull) ^ static_cast<std::uint64_t>(y);
  }
  std::uint64_t key(Point2D p) const {
    const auto [x, y] = coords(p);
    return pack(x, y);
  }

  const CandidateCloud& cloud_;
  double cell_;
  std::unordered_map<std::uint64_t, std::vector<std::size_t>> cells_;
};

class Climber {
 public:
  Climber(const CandidateCloud& cloud, const MeanShiftParams& p) : cloud_(cloud), p_(p) {
    if (p.kernel_cutoff > 0.0) grid_.emplace(cloud, p.kernel_cutoff * p.bandwidth);
  }

  Point2D step(Point2D x) const {
    if (!grid_) return mean_shift_step(cloud_, x, p_.bandwidth);
    const double inv = 1.0 / (2.0 * p_.bandwidth * p_.bandwidth);
    const double r = p_.kernel_cutoff * p_.bandwidth;
    double sw = 0.0, sx = 0.0, sy = 0.0;
    grid_->for_each_near(x, [&](const Candidate& c) {
      const double dx = x.x - c.point.x, dy = x.y - c.point.y;
      if (dx * dx + dy * dy > r * r) return;
      const double k = c.weight * std::exp(-(dx * dx + dy * dy) * inv);
      sw += k;
      sx += k * c.point.x;
      sy += k * c.point.y;
    });
    return sw > 0.0 ? Point2D{sx / sw, sy / sw} : x;
  }

  double density(Point2D x) const {
    const double inv = 1.0 / (2.0 * p_.bandwidth * p_.bandwidth);
    double s = 0.0;
    auto add = [&](const Candidate& c) {
      const double dx = x.x - c.point.x, dy = x.y - c.point.y;
      s += c.weight * std::exp(-(dx * dx + dy * dy) * inv);
    };
    if (grid_) {
      grid_->for_each_near(x, add);
    } else {
      for (const auto& c : cloud_.points) add(c);
    }
    return s;
  }

  /// Iterates until a step is shorter than tol or max_iter is reached.
  Point2D climb(Point2D x) const {
    for (int it = 0; it < p_.max_iter; ++it) {
      const Point2D next = step(x);
      const double moved = distance(next, x);
      x = next;
      if (moved < p_.tol) break;
    }
    return x;
  }

 private:
  const CandidateCloud& cloud_;
  const MeanShiftParams& p_;
  std::optional<NeighbourGrid> grid_;
};

}  // namespace fusion_detail

/// Weighted Gaussian mean-shift clustering.
///
/// Every cloud point climbs to a mode. Converged points within the merge
/// radius of an existing centre join it; each centre is then re-climbed from
/// its members' mass-weighted mean, and centres closer than the merge radius
/// are fused until all are at least that far apart.
inline ClusterResult mean_shift(const CandidateCloud& cloud, const MeanShiftParams& p = {}) {
  if (cloud.points.empty()) throw DomainError("mean shift on an empty cloud");
  if (!(p.bandwidth > 0.0)) throw DomainError("bandwidth must be positive");
  const double radius = p.effective_merge_radius();
  const fusion_detail::Climber climber(cloud, p);

  std::vector<Point2D> modes(cloud.points.size());
  for (std::size_t i = 0; i < cloud.points.size(); ++i) modes[i] = climber.climb(cloud.points[i].point);

  struct Group {
    Point2D centre;
    std::vector<std::size_t> members;
  };
  std::vector<Group> groups;
  for (std::size_t i = 0; i < modes.size(); ++i) {
    auto it = std::find_if(groups.begin(), groups.end(), [&](const Group& g) {
      return distance(g.centre, modes[i]) < radius;
    });
    if (it == groups.end()) {
      groups.push_back({modes[i], {i}});
    } else {
      it->members.push_back(i);
    }
  }

  auto settle = [&](Group& g) {
    double w = 0.0, x = 0.0, y = 0.0;
    for (std::size_t i : g.members) {
      w += cloud.points[i].weight;
      x += cloud.points[i].weight * modes[i].x;
      y += cloud.points[i].weight * modes[i].y;
    }
    g.centre = climber.climb({x / w, y / w});
  };
  for (auto& g : groups) settle(g);

  for (bool merged = true; merged;) {
    merged = false;
    for (std::size_t a = 0; a < groups.size(); ++a)
      for (std::size_t b = a + 1; b < groups.size();) {
        if (distance(groups[a].centre, groups[b].centre) < radius) {
          groups[a].members.insert(groups[a].members.end(), groups[b].members.begin(),
                                   groups[b].members.end());
          groups.erase(groups.begin() + static_cast<std::ptrdiff_t>(b));
          settle(groups[a]);
          merged = true;
          b = a + 1;
        } else {
          ++b;
        }
      }
  }

  std::vector<double> mass(groups.size(), 0.0);
  for (std::size_t g = 0; g < groups.size(); ++g)
    for (std::size_t i : groups[g].members) mass[g] += cloud.points[i].weight;
  std::vector<std::size_t> order(groups.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return mass[a] > mass[b]; });

  ClusterResult out;
  out.assignment.assign(cloud.points.size(), 0);
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    const Group& g = groups[order[rank]];
    out.centers.push_back(g.centre);
    out.masses.push_back(mass[order[rank]]);
    out.member_counts.push_back(g.members.size());
    out.densities.push_back(climber.density(g.centre));
    for (std::size_t i : g.members) out.assignment[i] = rank;
  }
  return out;
}

enum class SpeakerRanking {
  kMass,     // total weight of the basin
  kDensity,  // kernel density at the centre
};

/// The B best centres under `ranking`. Clusters with fewer than
/// `min_member_count` members are skipped unless nothing else is left.
///
/// Basin mass favours wide, diffuse basins: with several speakers the ghost
/// lines spread a lot of weight thinly across the room, and one such basin
/// can outweigh a tight true cluster. Peak density does not have that bias.
inline std::vector<Point2D> resolve_speakers(const ClusterResult& clusters, std::size_t b,
                                             std::size_t min_member_count = 2,
                                             SpeakerRanking ranking = SpeakerRanking::kMass) {
  if (b < 1) throw DomainError("B must be at least 1");
  std::vector<std::size_t> order(clusters.centers.size());
  std::iota(order.begin(), order.end(), 0);
  if (ranking == SpeakerRanking::kDensity) {
    if (clusters.densities.size() != clusters.centers.size())
      throw DomainError("cluster result carries no densities");
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t c) {
      return clusters.densities[a] > clusters.densities[c];
    });
  }
  std::vector<Point2D> out;
  for (std::size_t i : order)
    if (out.size() < b && clusters.member_counts[i] >= min_member_count)
      out.push_back(clusters.centers[i]);
  if (out.empty())
    for (std::size_t i : order)
      if (out.size() < b) out.push_back(clusters.centers[i]);
  return out;
}

// -- Plot dumps ----------------------------------------------------------------

inline void write_cloud_csv(std::ostream& os, const CandidateCloud& cloud,
                            const ClusterResult* clusters = nullptr) {
  os << "x,y,weight,node_a,node_b,ghost_a,ghost_b,cluster\n";
  char buf[64];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return std::string(buf);
  };
  for (std::size_t i = 0; i < cloud.points.size(); ++i) {
    const auto& c = cloud.points[i];
    os << num(c.point.x) << ',' << num(c.point.y) << ',' << num(c.weight) << ',' << c.node_a << ','
       << c.node_b << ',' << int{c.ghost_a} << ',' << int{c.ghost_b} << ',';
    if (clusters) os << clusters->assignment[i];
    os << '\n';
  }
}

inline void write_clusters_csv(std::ostream& os, const ClusterResult& r) {
  os << "rank,x,y,mass,members,density\n";
  char buf[160];
  for (std::size_t i = 0; i < r.centers.size(); ++i) {
    const double d = i < r.densities.size() ? r.densities[i] : 0.0;
    std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g,%.9g,%zu,%.9g\n", i, r.centers[i].x,
                  r.centers[i].y, r.masses[i], r.member_counts[i], d);
    os << buf;
  }
}

}  // namespace adhoc
