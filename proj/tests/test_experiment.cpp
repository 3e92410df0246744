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
#include <sstream>

#include "adhoc_locate/experiment.hpp"
#include "adhoc_locate/metrics.hpp"

namespace adhoc {
namespace {

TEST(Mae, Examples) {
  EXPECT_EQ(mae({{1, 1}}, {{1, 1}}, 10).mae, 0.0);
  EXPECT_DOUBLE_EQ(mae({{0, 0}}, {{3, 4}}, 10).mae, 5.0);
  EXPECT_EQ(mae({{0, 0}, {5, 5}}, {{5, 5}, {0, 0}}, 10).mae, 0.0);
  EXPECT_THROW(mae({}, {}, 1), DomainError);
  EXPECT_THROW(mae({{0, 0}}, {{0, 0}, {1, 1}}, 1), DomainError);
}

TEST(Mae, MissesCostThePenalty) {
  const auto r = mae({{0, 0}, {4, 0}}, {{4, 1}}, 8.6);
  EXPECT_EQ(r.missed_count, 1u);
  EXPECT_TRUE(r.missed[0]);
  EXPECT_FALSE(r.missed[1]);
  EXPECT_DOUBLE_EQ(r.mae, (8.6 + 1.0) / 2);
}

TEST(Mae, AssignmentIsOptimalAndSymmetric) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0, 5);
  for (int i = 0; i < 200; ++i) {
    std::vector<Point2D> a(3), b(3);
    for (auto& p : a) p = {u(rng), u(rng)};
    for (auto& p : b) p = {u(rng), u(rng)};
    const double ab = mae(a, b, 0).mae;
    EXPECT_NEAR(ab, mae(b, a, 0).mae, 1e-12);
    // No fixed pairing does better than the optimum.
    EXPECT_LE(ab, (distance(a[0], b[0]) + distance(a[1], b[1]) + distance(a[2], b[2])) / 3 + 1e-12);
    std::shuffle(b.begin(), b.end(), rng);
    EXPECT_NEAR(ab, mae(a, b, 0).mae, 1e-12);
  }
}

TEST(Selection, ParseAndLabel) {
  EXPECT_EQ(parse_selection("all"), std::nullopt);
  EXPECT_EQ(parse_selection("14"), Selection{14});
  EXPECT_EQ(selection_label(Selection{16}), "16");
  EXPECT_EQ(selection_label(std::nullopt), "all");
  EXPECT_THROW(parse_selection("1"), ConfigError);
  EXPECT_THROW(parse_selection("x"), ConfigError);
  EXPECT_THROW(parse_selection("12a"), ConfigError);
}

TEST(Config, ParsesNestedSettings) {
  const auto j = nlohmann::json::parse(R"({
    "scenario": {"rooms": [[6, 8, 3]], "speakers": [1, 2], "nodes": 12, "t60": [0.3, 0.5],
                 "orientation": "front-facing"},
    "estimator": "oracle",
    "oracle": {"angular_noise_deg": 2.5, "quantize": false},
    "fusion": {"mode": "unweighted", "bandwidth": 0.2, "rank": "density"},
    "selection": [14, "all"],
    "trials": 7, "seed": 99, "miss_penalty_m": 3.0
  })");
  const auto c = parse_experiment_config(j);
  EXPECT_EQ(c.scenario.rooms.size(), 1u);
  EXPECT_EQ(c.scenario.rooms[0].width, 6.0);
  EXPECT_EQ(c.scenario.speakers_max, 2);
  EXPECT_EQ(c.scenario.nodes_min, 12);
  EXPECT_EQ(c.scenario.orientation, OrientationMode::kFrontFacing);
  EXPECT_EQ(c.estimator.oracle.angular_noise_deg, 2.5);
  EXPECT_FALSE(c.estimator.oracle.quantize);
  EXPECT_EQ(c.fusion.weighting, CandidateWeighting::kUnit);
  EXPECT_FALSE(c.fusion.cull);
  EXPECT_EQ(c.fusion.ranking, SpeakerRanking::kDensity);
  EXPECT_EQ(c.fusion.mean_shift.bandwidth, 0.2);
  EXPECT_EQ(c.selections, (std::vector<Selection>{14, std::nullopt}));
  EXPECT_EQ(c.trials, 7u);
  EXPECT_EQ(c.seed, 99u);
  EXPECT_EQ(c.miss_penalty_m, 3.0);
}

TEST(Config, Errors) {
  EXPECT_THROW(parse_experiment_config(nlohmann::json::parse(R"({"estimator": "beamformer"})")),
               ConfigError);
  EXPECT_THROW(parse_experiment_config(nlohmann::json::parse(R"({"selection": [1]})")),
               ConfigError);
  EXPECT_THROW(parse_experiment_config(nlohmann::json::parse(R"({"trials": "many"})")),
               ConfigError);
  try {
    parse_experiment_config(nlohmann::json::parse(R"({"estimator": "cnn", "weights": "nope.adlw"})"),
                            "/tmp");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("nope.adlw"), std::string::npos);
  }
}

ExperimentConfig oracle_config(std::size_t trials) {
  ExperimentConfig c;
  c.trials = trials;
  c.seed = 17;
  c.scenario.speakers_min = 1;
  c.scenario.speakers_max = 2;
  c.selections = {Selection{4}, std::nullopt};
  c.estimator.oracle.angular_noise_deg = 2.0;
  return c;
}

TEST(Experiment, ExactBearingsWithoutGhostsAreExact) {
  ExperimentConfig c;
  c.trials = 3;
  c.scenario.orientation = OrientationMode::kFrontFacing;
  c.estimator.oracle.quantize = false;
  c.fusion.include_ghosts = false;
  for (const auto& r : run_experiment(c, 1).records) {
    ASSERT_FALSE(r.failed) << r.error;
    EXPECT_LT(r.mae_m, 1e-6);
  }
}

TEST(Experiment, CsvIsByteIdenticalAcrossRunsAndThreadCounts) {
  const auto c = oracle_config(6);
  std::ostringstream a, b;
  write_results_csv(a, c, run_experiment(c, 1));
  write_results_csv(b, c, run_experiment(c, 3));
  EXPECT_EQ(a.str(), b.str());
}

TEST(Experiment, CsvLayout) {
  const auto c = oracle_config(3);
  std::ostringstream os;
  write_results_csv(os, c, run_experiment(c, 1));
  std::vector<std::string> lines;
  std::istringstream in(os.str());
  for (std::string l; std::getline(in, l);) lines.push_back(l);
  ASSERT_EQ(lines.size(), 1u + 6u + 2u);
  EXPECT_EQ(lines[0], csv_header(false));
  EXPECT_EQ(lines[7].rfind("aggregate,17,oracle,4,", 0), 0u);
  EXPECT_EQ(lines[8].rfind("aggregate,17,oracle,all,", 0), 0u);
  for (const auto& l : lines)
    EXPECT_EQ(std::count(l.begin(), l.end(), ','), 11) << l;
  std::ostringstream timed;
  auto ct = c;
  ct.record_timing = true;
  write_results_csv(timed, ct, run_experiment(ct, 1));
  EXPECT_NE(timed.str().find("runtime_ms"), std::string::npos);
}

TEST(Experiment, SelectedSetsHaveSizeK) {
  const auto res = run_experiment(oracle_config(5), 1);
  for (const auto& r : res.records) {
    ASSERT_FALSE(r.failed);
    EXPECT_EQ(r.selected.size(), r.selection.value_or(20));
    for (NodeId id : r.selected) EXPECT_LT(id, 20u);
  }
}

TEST(Experiment, FailuresAreRecordedNotThrown) {
  auto c = oracle_config(2);
  c.scenario.wall_margin = 3.0;
  const auto res = run_experiment(c, 1);
  for (const auto& r : res.records) EXPECT_TRUE(r.failed);
  EXPECT_EQ(res.aggregates[0].failed, 2u);
  std::ostringstream os;
  write_results_csv(os, c, res);
  EXPECT_NE(os.str().find(",failed,"), std::string::npos);
  EXPECT_NE(os.str().find("0/2"), std::string::npos);
}

TEST(Experiment, ThreadCountFromEnvironment) {
  setenv("ADHOC_LOCATE_THREADS", "3", 1);
  EXPECT_EQ(worker_count(), 3u);
  setenv("ADHOC_LOCATE_THREADS", "zero", 1);
  EXPECT_GE(worker_count(), 1u);
  unsetenv("ADHOC_LOCATE_THREADS");
}

TEST(FormatFixed, LocaleIndependent) {
  EXPECT_EQ(format_fixed(0.5), "0.500000");
  EXPECT_EQ(format_fixed(-2.25, 2), "-2.25");
}

}  // namespace
}  // namespace adhoc
