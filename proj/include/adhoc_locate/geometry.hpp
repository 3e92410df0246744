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

// Planar geometry of ad-hoc nodes: angle conventions, local/global bearing
// conversion for uniform linear arrays, and two-node triangulation.
//
// Conventions
//   * All stored angles are degrees in [0, 360), counter-clockwise from +x.
//   * A node's linear array lies along the direction `orientation_beta`.
//     The local DOA theta in [0, 180] is the angle between that axis
//     direction and the direction towards the source, so theta = 0 is the
//     endfire on the axis side and theta = 90 is broadside.
//   * A linear array cannot tell the two half-planes apart, so a local
//     theta maps to the global pair beta + theta (reported as the true
//     candidate) and beta - theta (the mirror, or "ghost").

#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "adhoc_locate/errors.hpp"

namespace adhoc {

using NodeId = std::uint32_t;

struct Point2D {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Point2D&, const Point2D&) = default;
};

inline Point2D operator+(Point2D a, Point2D b) { return {a.x + b.x, a.y + b.y}; }
inline Point2D operator-(Point2D a, Point2D b) { return {a.x - b.x, a.y - b.y}; }
inline Point2D operator*(double s, Point2D p) { return {s * p.x, s * p.y}; }

inline double dot(Point2D a, Point2D b) { return a.x * b.x + a.y * b.y; }
inline double cross(Point2D a, Point2D b) { return a.x * b.y - a.y * b.x; }
inline double norm(Point2D p) { return std::hypot(p.x, p.y); }
inline double distance(Point2D a, Point2D b) { return norm(a - b); }
inline bool is_finite(Point2D p) { return std::isfinite(p.x) && std::isfinite(p.y); }

inline constexpr double deg_to_rad(double deg) { return deg * std::numbers::pi / 180.0; }
inline constexpr double rad_to_deg(double rad) { return rad * 180.0 / std::numbers::pi; }

/// Wraps an angle into [0, 360).
inline double normalize_deg(double deg) {
  double r = std::fmod(deg, 360.0);
  if (r < 0.0) r += 360.0;
  if (r >= 360.0) r -= 360.0;  // fmod(-tiny) + 360 rounds up to 360
  return r;
}

/// Wraps an angle difference into (-180, 180].
inline double wrap_deg_signed(double deg) {
  double r = normalize_deg(deg);
  return r > 180.0 ? r - 360.0 : r;
}

/// Shortest angular distance on the circle, in [0, 180].
inline double circular_distance_deg(double a, double b) {
  return std::abs(wrap_deg_signed(a - b));
}

/// Unit vector pointing along a global bearing.
inline Point2D direction(double bearing_deg) {
  const double r = deg_to_rad(bearing_deg);
  return {std::cos(r), std::sin(r)};
}

struct NodePose {
  Point2D position;
  double orientation_beta = 0.0;  // degrees, [0, 360)
  int mic_count = 4;
  double mic_spacing = 0.08;  // meters

  friend bool operator==(const NodePose&, const NodePose&) = default;
};

/// Builds a validated pose with the orientation wrapped into [0, 360).
inline NodePose make_pose(Point2D position, double beta_deg, int mic_count = 4,
                          double mic_spacing = 0.08) {
  if (!is_finite(position) || !std::isfinite(beta_deg))
    throw DomainError("node pose must be finite");
  if (mic_count < 2) throw DomainError("node needs at least two microphones");
  if (!(mic_spacing > 0.0)) throw DomainError("microphone spacing must be positive");
  return NodePose{position, normalize_deg(beta_deg), mic_count, mic_spacing};
}

/// Signed offset of microphone `m` from the array centre along the axis.
inline double mic_offset(const NodePose& pose, int m) {
  return (m - 0.5 * (pose.mic_count - 1)) * pose.mic_spacing;
}

inline std::vector<Point2D> mic_positions(const NodePose& pose) {
  const Point2D axis = direction(pose.orientation_beta);
  std::vector<Point2D> out;
  out.reserve(static_cast<std::size_t>(pose.mic_count));
  for (int m = 0; m < pose.mic_count; ++m)
    out.push_back(pose.position + mic_offset(pose, m) * axis);
  return out;
}

struct BearingCandidate {
  NodeId node_id = 0;
  double alpha_deg = 0.0;
  bool is_ghost = false;
  double weight = 1.0;
};

/// Up to two global bearings for one local DOA; `count` is 1 at endfire.
struct BearingPair {
  std::array<BearingCandidate, 2> items{};
  std::size_t count = 0;

  const BearingCandidate* begin() const { return items.data(); }
  const BearingCandidate* end() const { return items.data() + count; }
  std::size_t size() const { return count; }
  const BearingCandidate& operator[](std::size_t i) const { return items[i]; }
};

/// Converts a local DOA into global bearing candidates {beta + theta,
/// beta - theta}. The second is flagged as the ghost; at theta = 0 or 180 the
/// mirror coincides and a single candidate is returned.
inline BearingPair local_to_global_bearings(const NodePose& pose, double theta_deg,
                                            NodeId node_id = 0, double weight = 1.0) {
  if (!(theta_deg >= 0.0 && theta_deg <= 180.0))
    throw DomainError("local DOA " + std::to_string(theta_deg) + " outside [0, 180]");
  BearingPair out;
  out.items[0] = {node_id, normalize_deg(pose.orientation_beta + theta_deg), false, weight};
  out.count = 1;
  if (theta_deg != 0.0 && theta_deg != 180.0) {
    out.items[1] = {node_id, normalize_deg(pose.orientation_beta - theta_deg), true, weight};
    out.count = 2;
  }
  return out;
}

/// Local DOA in [0, 180] that a node reports for a global bearing.
inline double global_to_local_deg(const NodePose& pose, double alpha_deg) {
  return std::abs(wrap_deg_signed(alpha_deg - pose.orientation_beta));
}

/// Global bearing from `from` towards `to`, in [0, 360).
inline double bearing_of(Point2D from, Point2D to) {
  const Point2D d = to - from;
  if (d.x == 0.0 && d.y == 0.0) throw DegenerateError("bearing between identical points");
  return normalize_deg(rad_to_deg(std::atan2(d.y, d.x)));
}

/// Bearings closer to parallel than this (|sin| of their difference) do not
/// intersect.
inline constexpr double kParallelSinTolerance = 1e-9;

/// Intersection of the two bearing lines through the node positions.
///
/// Lines, not rays: an intersection behind either node is still returned.
/// Uses the direction-vector form, which stays well conditioned at 90 and 270
/// degrees where the tangent form blows up.
inline Point2D triangulate_pair(const NodePose& pose1, double alpha1_deg, const NodePose& pose2,
                                double alpha2_deg) {
  const Point2D p1 = pose1.position;
  const Point2D p2 = pose2.position;
  if (p1 == p2) throw DegenerateError("triangulation from coincident node positions");
  const Point2D u1 = direction(alpha1_deg);
  const Point2D u2 = direction(alpha2_deg);
  const double denom = cross(u1, u2);
  if (std::abs(denom) < kParallelSinTolerance)
    throw NoIntersection("bearing lines are parallel");
  const double t = cross(p2 - p1, u2) / denom;
  return p1 + t * u1;
}

}  // namespace adhoc
