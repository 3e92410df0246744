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

// Brute-force kernel density reference used by the tests: direct kernel sums
// and steepest ascent over a fixed square grid.

#pragma once

#include <cmath>

#include "adhoc_locate/fusion.hpp"

namespace adhoc::test_oracle {

inline double kde(const CandidateCloud& cloud, Point2D x, double h) {
  double s = 0.0;
  for (const auto& c : cloud.points) {
    const double dx = x.x - c.point.x, dy = x.y - c.point.y;
    s += c.weight * std::exp(-(dx * dx + dy * dy) / (2.0 * h * h));
  }
  return s;
}

/// Snaps `start` to the grid of pitch `step` and walks to the best of the
/// eight neighbours until none is higher: a local maximum of the gridded KDE.
inline Point2D grid_hill_climb(const CandidateCloud& cloud, Point2D start, double h, double step) {
  long ix = std::lround(start.x / step), iy = std::lround(start.y / step);
  auto at = [&](long x, long y) { return kde(cloud, {x * step, y * step}, h); };
  double here = at(ix, iy);
  for (int guard = 0; guard < 1000000; ++guard) {
    long bx = ix, by = iy;
    double best = here;
    for (long dx = -1; dx <= 1; ++dx)
      for (long dy = -1; dy <= 1; ++dy) {
        if (dx == 0 && dy == 0) continue;
        const double v = at(ix + dx, iy + dy);
        if (v > best) {
          best = v;
          bx = ix + dx;
          by = iy + dy;
        }
      }
    if (bx == ix && by == iy) break;
    ix = bx;
    iy = by;
    here = best;
  }
  return {ix * step, iy * step};
}

}  // namespace adhoc::test_oracle
