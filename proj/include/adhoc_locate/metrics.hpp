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

#pragma once

#include <algorithm>
#include <limits>
#include <numeric>
#include <vector>

#include "adhoc_locate/errors.hpp"
#include "adhoc_locate/geometry.hpp"

namespace adhoc {

struct MaeResult {
  double mae = 0.0;
  std::vector<double> per_speaker;  // indexed like `truth`
  std::vector<bool> missed;         // true where no prediction was assigned
  std::size_t missed_count = 0;
};

/// Mean Euclidean error under the truth/prediction assignment with the least
/// total error (exhaustive search). Speakers left without a prediction cost
/// `miss_penalty`.
inline MaeResult mae(const std::vector<Point2D>& truth, const std::vector<Point2D>& predicted,
                     double miss_penalty) {
  if (truth.empty()) throw DomainError("MAE needs at least one true position");
  if (predicted.size() > truth.size())
    throw DomainError("more predictions than true positions");
  if (truth.size() > 8) throw DomainError("exhaustive assignment limited to 8 speakers");

  std::vector<std::size_t> perm(truth.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::vector<std::size_t> best;
  double best_cost = std::numeric_limits<double>::infinity();
  do {
    double cost = 0.0;
    for (std::size_t i = 0; i < predicted.size(); ++i) cost += distance(predicted[i], truth[perm[i]]);
    if (cost < best_cost) {
      best_cost = cost;
      best = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));

  MaeResult r;
  r.per_speaker.assign(truth.size(), miss_penalty);
  r.missed.assign(truth.size(), true);
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    r.per_speaker[best[i]] = distance(predicted[i], truth[best[i]]);
    r.missed[best[i]] = false;
  }
  r.missed_count = truth.size() - predicted.size();
  r.mae = std::accumulate(r.per_speaker.begin(), r.per_speaker.end(), 0.0) /
          static_cast<double>(truth.size());
  return r;
}

}  // namespace adhoc
