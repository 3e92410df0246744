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

#include <gtest/gtest.h>

#include <random>
#include <set>
#include <sstream>

#include "adhoc_locate/fusion.hpp"
#include "adhoc_locate/pipeline.hpp"
#include "kde_oracle.hpp"

namespace adhoc {
namespace {

TEST(NodeScore, TopBAverage) {
  const std::vector<double> p{0.1, 0.6, 0.0, 0.4, 0.2};
  EXPECT_DOUBLE_EQ(node_score(p, 1), 0.6);
  EXPECT_DOUBLE_EQ(node_score(p, 2), 0.5);
  EXPECT_NEAR(node_score(p, 3), 0.4, 1e-15);
}

TEST(Selection, BestFirstWithLowIdTieBreak) {
  const std::vector<std::vector<double>> s{{0.9, 0.1}, {0.5, 0.5}, {0.7, 0.3}};
  EXPECT_EQ(select_nodes(s, 1, 2), (std::vector<NodeId>{0, 2}));
  const std::vector<std::vector<double>> tie{{0.5, 0.5}, {0.8, 0.2}, {0.5, 0.5}};
  EXPECT_EQ(select_nodes(tie, 1, 2), (std::vector<NodeId>{1, 0}));
}

TEST(Selection, KEqualToNKeepsEveryNode) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<std::vector<double>> s(9, std::vector<double>(37));
  for (auto& r : s)
    for (auto& v : r) v = u(rng);
  auto sel = select_nodes(s, 2, 9);
  std::sort(sel.begin(), sel.end());
  EXPECT_EQ(sel, (std::vector<NodeId>{0, 1, 2, 3, 4, 5, 6, 7, 8}));
}

TEST(Selection, InvalidK) {
  const std::vector<std::vector<double>> s{{1.0}, {1.0}, {1.0}};
  EXPECT_THROW(select_nodes(s, 1, 1), DomainError);
  EXPECT_THROW(select_nodes(s, 1, 4), DomainError);
}

DoaEstimate estimate(NodeId id, std::vector<double> thetas) {
  DoaEstimate e{id, {}, thetas.size()};
  for (double t : thetas) e.peaks.push_back({t, 1.0 / thetas.size(), 0});
  return e;
}

TEST(Candidates, EndfireNodesGiveOnePoint) {
  const std::vector<NodePose> poses{make_pose({0, 0}, 0.0), make_pose({1, 1}, 270.0)};
  const std::vector<DoaEstimate> est{estimate(0, {0.0}), estimate(1, {0.0})};
  const std::vector<NodeId> sel{0, 1};
  const auto cloud = build_candidates(sel, est, poses);
  ASSERT_EQ(cloud.points.size(), 1u);
  EXPECT_NEAR(cloud.points[0].point.x, 1.0, 1e-12);
  EXPECT_NEAR(cloud.points[0].point.y, 0.0, 1e-12);
}

TEST(Candidates, CountBoundedByTwoBSquaredPerPair) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> pos(0.3, 4.7), ang(0, 360), th(1, 179);
  for (std::size_t b = 1; b <= 3; ++b) {
    std::vector<NodePose> poses;
    std::vector<DoaEstimate> est;
    for (NodeId i = 0; i < 2; ++i) {
      poses.push_back(make_pose({pos(rng), pos(rng)}, ang(rng)));
      std::vector<double> t;
      for (std::size_t k = 0; k < b; ++k) t.push_back(th(rng));
      est.push_back(estimate(i, t));
    }
    const std::vector<NodeId> sel{0, 1};
    EXPECT_LE(build_candidates(sel, est, poses).points.size(), 4 * b * b);
    EXPECT_EQ(build_candidates(sel, est, poses, {.cull_room = std::nullopt}).points.size(),
              4 * b * b);
  }
}

TEST(Candidates, TwentyNodesSingleSpeakerAtMost760) {
  ScenarioConfig cfg;
  const auto sc = generate_scenario(cfg, 3);
  EstimatorConfig ec;
  const auto est = estimate_nodes(sc, ec);
  std::vector<NodeId> all(20);
  std::iota(all.begin(), all.end(), 0);
  const auto cloud = build_candidates(all, est.estimates, sc.node_poses);
  EXPECT_LE(cloud.points.size(), 760u);
  EXPECT_GT(cloud.points.size(), 100u);
}

TEST(Candidates, GhostFlagsAndWeights) {
  const std::vector<NodePose> poses{make_pose({0, 0}, 0.0), make_pose({4, 0}, 0.0)};
  // 90 degrees at node 1 keeps every true/ghost pairing non-parallel.
  std::vector<DoaEstimate> est{estimate(0, {45.0}), estimate(1, {90.0})};
  est[0].peaks[0].value = 0.5;
  est[1].peaks[0].value = 0.8;
  const std::vector<NodeId> sel{1, 0};
  const auto with = build_candidates(sel, est, poses, {.cull_room = std::nullopt});
  ASSERT_EQ(with.points.size(), 4u);
  for (const auto& c : with.points) EXPECT_DOUBLE_EQ(c.weight, 0.4);
  const auto real = std::find_if(with.points.begin(), with.points.end(),
                                 [](const Candidate& c) { return !c.ghost_a && !c.ghost_b; });
  ASSERT_NE(real, with.points.end());
  EXPECT_NEAR(real->point.x, 4.0, 1e-12);
  EXPECT_NEAR(real->point.y, 4.0, 1e-12);
  const auto without =
      build_candidates(sel, est, poses, {.include_ghosts = false, .cull_room = std::nullopt});
  EXPECT_EQ(without.points.size(), 1u);
}

TEST(Candidates, MinRangeDropsPointsNearTheirNodes) {
  const std::vector<NodePose> poses{make_pose({0, 0}, 0.0), make_pose({4, 0}, 0.0)};
  const std::vector<DoaEstimate> est{estimate(0, {45.0}), estimate(1, {170.0})};
  const std::vector<NodeId> sel{0, 1};
  CandidateOptions opt{.include_ghosts = false, .cull_room = std::nullopt};
  const auto all = build_candidates(sel, est, poses, opt);
  ASSERT_EQ(all.points.size(), 1u);
  opt.min_range = distance(all.points[0].point, poses[0].position) + 1e-6;
  EXPECT_TRUE(build_candidates(sel, est, poses, opt).points.empty());
}

CandidateCloud cloud_of(const std::vector<Point2D>& pts, const std::vector<double>& w = {}) {
  CandidateCloud c;
  for (std::size_t i = 0; i < pts.size(); ++i) c.points.push_back({pts[i], w.empty() ? 1.0 : w[i]});
  return c;
}

TEST(MeanShift, IdenticalPointsAreAFixedPoint) {
  const auto r = mean_shift(cloud_of(std::vector<Point2D>(7, {2, 3})));
  ASSERT_EQ(r.centers.size(), 1u);
  EXPECT_EQ(r.centers[0], (Point2D{2, 3}));
  EXPECT_DOUBLE_EQ(r.masses[0], 7.0);
}

TEST(MeanShift, FarApartGroupsStaySeparate) {
  std::vector<Point2D> pts(5, {0, 0});
  pts.insert(pts.end(), 5, {10, 10});
  const auto r = mean_shift(cloud_of(pts));
  ASSERT_EQ(r.centers.size(), 2u);
  std::set<std::pair<double, double>> got;
  for (const auto& c : r.centers) got.insert({std::round(c.x), std::round(c.y)});
  EXPECT_EQ(got, (std::set<std::pair<double, double>>{{0, 0}, {10, 10}}));
  for (const auto& c : r.centers)
    EXPECT_LT(std::min(distance(c, {0, 0}), distance(c, {10, 10})), 1e-6);
}

TEST(MeanShift, EmptyCloudIsAnError) {
  EXPECT_THROW(mean_shift(CandidateCloud{}), DomainError);
}

CandidateCloud random_cloud(std::uint64_t seed, std::size_t n = 50) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0, 1), w(0.1, 1.0);
  CandidateCloud c;
  for (std::size_t i = 0; i < n; ++i) c.points.push_back({{u(rng), u(rng)}, w(rng)});
  return c;
}

TEST(MeanShift, CentresAreKdeMaximaOnAMillimetreGrid) {
  const MeanShiftParams p;
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto cloud = random_cloud(s);
    const auto r = mean_shift(cloud, p);
    for (const auto& c : r.centers) {
      const Point2D peak = test_oracle::grid_hill_climb(cloud, c, p.bandwidth, 1e-3);
      EXPECT_LE(distance(c, peak), p.bandwidth / 2) << "seed " << s;
    }
  }
}

TEST(MeanShift, CentresAreFixedPoints) {
  const MeanShiftParams p;
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto cloud = random_cloud(100 + s, 80);
    for (const auto& c : mean_shift(cloud, p).centers)
      EXPECT_LT(distance(mean_shift_step(cloud, c, p.bandwidth), c), 5e-4);
  }
}

TEST(MeanShift, MassIsConservedAndSorted) {
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto cloud = random_cloud(200 + s, 120);
    const auto r = mean_shift(cloud);
    EXPECT_NEAR(std::accumulate(r.masses.begin(), r.masses.end(), 0.0), cloud.total_weight(),
                1e-9);
    EXPECT_TRUE(std::is_sorted(r.masses.rbegin(), r.masses.rend()));
    std::vector<std::size_t> counts(r.centers.size(), 0);
    std::vector<double> mass(r.centers.size(), 0.0);
    for (std::size_t i = 0; i < cloud.points.size(); ++i) {
      ++counts[r.assignment[i]];
      mass[r.assignment[i]] += cloud.points[i].weight;
    }
    EXPECT_EQ(counts, r.member_counts);
    for (std::size_t g = 0; g < mass.size(); ++g) EXPECT_NEAR(mass[g], r.masses[g], 1e-12);
  }
}

TEST(MeanShift, CentresAreSeparatedByTheMergeRadius) {
  const MeanShiftParams p;
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto r = mean_shift(random_cloud(300 + s, 150), p);
    for (std::size_t a = 0; a < r.centers.size(); ++a)
      for (std::size_t b = a + 1; b < r.centers.size(); ++b)
        EXPECT_GE(distance(r.centers[a], r.centers[b]), p.effective_merge_radius());
  }
}

TEST(MeanShift, CutoffDoesNotChangeTheAnswer) {
  MeanShiftParams exact;
  exact.kernel_cutoff = 0.0;
  for (std::uint64_t s = 0; s < 5; ++s) {
    const auto cloud = random_cloud(400 + s, 100);
    const auto a = mean_shift(cloud), b = mean_shift(cloud, exact);
    ASSERT_EQ(a.centers.size(), b.centers.size());
    for (std::size_t i = 0; i < a.centers.size(); ++i)
      EXPECT_LT(distance(a.centers[i], b.centers[i]), 1e-6);
  }
}

TEST(MeanShift, DensityMatchesKernelSum) {
  const auto cloud = random_cloud(500);
  const auto r = mean_shift(cloud);
  for (std::size_t i = 0; i < r.centers.size(); ++i)
    EXPECT_NEAR(r.densities[i], test_oracle::kde(cloud, r.centers[i], 0.18), 1e-9);
}

TEST(MeanShift, Deterministic) {
  const auto cloud = random_cloud(600, 200);
  const auto a = mean_shift(cloud), b = mean_shift(cloud);
  EXPECT_EQ(a.centers, b.centers);
  EXPECT_EQ(a.assignment, b.assignment);
}

ClusterResult clusters(std::vector<double> masses, std::vector<std::size_t> counts,
                       std::vector<double> densities = {}) {
  ClusterResult r;
  for (std::size_t i = 0; i < masses.size(); ++i) r.centers.push_back({double(i), 0.0});
  r.masses = masses;
  r.member_counts = counts;
  r.densities = densities;
  return r;
}

TEST(ResolveSpeakers, TopByMass) {
  EXPECT_EQ(resolve_speakers(clusters({4}, {4}), 1), (std::vector<Point2D>{{0, 0}}));
  EXPECT_EQ(resolve_speakers(clusters({5, 3, 1}, {5, 3, 1}), 2),
            (std::vector<Point2D>{{0, 0}, {1, 0}}));
}

TEST(ResolveSpeakers, SmallClustersSkippedUnlessNothingElse) {
  EXPECT_EQ(resolve_speakers(clusters({5, 3, 2}, {5, 1, 2}), 2),
            (std::vector<Point2D>{{0, 0}, {2, 0}}));
  EXPECT_EQ(resolve_speakers(clusters({1, 1}, {1, 1}), 2), (std::vector<Point2D>{{0, 0}, {1, 0}}));
}

TEST(ResolveSpeakers, DensityRanking) {
  const auto r = clusters({5, 3, 2}, {5, 3, 2}, {0.5, 2.0, 1.0});
  EXPECT_EQ(resolve_speakers(r, 2, 2, SpeakerRanking::kDensity),
            (std::vector<Point2D>{{1, 0}, {2, 0}}));
  EXPECT_THROW(resolve_speakers(clusters({1}, {1}), 1, 2, SpeakerRanking::kDensity), DomainError);
}

TEST(Dumps, CsvHeaders) {
  const auto cloud = random_cloud(700, 10);
  const auto r = mean_shift(cloud);
  std::ostringstream os_a, os_b;
  write_cloud_csv(os_a, cloud, &r);
  write_clusters_csv(os_b, r);
  const std::string a = os_a.str(), b = os_b.str();
  EXPECT_EQ(a.substr(0, a.find('\n')), "x,y,weight,node_a,node_b,ghost_a,ghost_b,cluster");
  EXPECT_EQ(std::count(a.begin(), a.end(), '\n'), 11);
  EXPECT_EQ(b.substr(0, b.find('\n')), "rank,x,y,mass,members,density");
}

}  // namespace
}  // namespace adhoc
