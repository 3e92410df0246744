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

#include <cmath>
#include <filesystem>
#include <numbers>
#include <numeric>

#include "adhoc_locate/room_sim.hpp"

namespace adhoc {
namespace {

TEST(Scenario, SameSeedSameScenario) {
  ScenarioConfig cfg;
  cfg.speakers_min = 1;
  cfg.speakers_max = 3;
  const auto a = generate_scenario(cfg, 42), b = generate_scenario(cfg, 42);
  EXPECT_EQ(scenario_to_json(a), scenario_to_json(b));
  EXPECT_NE(scenario_to_json(a), scenario_to_json(generate_scenario(cfg, 43)));
}

TEST(Scenario, PlacementRespectsMarginsAndSpacing) {
  ScenarioConfig cfg;
  cfg.speakers_min = cfg.speakers_max = 3;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto sc = generate_scenario(cfg, seed);
    ASSERT_EQ(sc.node_count(), 20u);
    ASSERT_EQ(sc.speaker_count(), 3u);
    for (const auto& n : sc.node_poses) {
      EXPECT_GE(n.position.x, 0.3);
      EXPECT_LE(n.position.x, 4.7);
      EXPECT_GE(n.position.y, 0.3);
      EXPECT_LE(n.position.y, 6.7);
      EXPECT_GE(n.orientation_beta, 0.0);
      EXPECT_LT(n.orientation_beta, 360.0);
      for (const auto& s : sc.speaker_positions)
        EXPECT_GE(distance(n.position, s), cfg.min_node_speaker_distance);
    }
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = i + 1; j < 3; ++j)
        EXPECT_GE(distance(sc.speaker_positions[i], sc.speaker_positions[j]),
                  cfg.min_speaker_separation);
  }
}

TEST(Scenario, FrontFacingKeepsSpeakersOnTheNonGhostSide) {
  ScenarioConfig cfg;
  cfg.speakers_min = cfg.speakers_max = 2;
  cfg.orientation = OrientationMode::kFrontFacing;
  const auto sc = generate_scenario(cfg, 5);
  for (const auto& n : sc.node_poses)
    for (const auto& s : sc.speaker_positions) {
      const double rel = normalize_deg(bearing_of(n.position, s) - n.orientation_beta);
      EXPECT_GT(rel, 0.0);
      EXPECT_LT(rel, 180.0);
    }
}

TEST(Scenario, InfeasibleMarginIsAnError) {
  ScenarioConfig cfg;
  cfg.wall_margin = 3.0;
  EXPECT_THROW(generate_scenario(cfg, 1), ConfigError);
}

TEST(Scenario, JsonRoundTrip) {
  ScenarioConfig cfg;
  cfg.speakers_min = cfg.speakers_max = 2;
  const auto sc = generate_scenario(cfg, 9);
  const auto path = std::filesystem::temp_directory_path() / "adhoc_locate_scene_test.json";
  save_scenario(path, sc);
  const auto back = load_scenario(path);
  std::filesystem::remove(path);
  EXPECT_EQ(back.speaker_positions, sc.speaker_positions);
  EXPECT_EQ(back.node_poses, sc.node_poses);
  EXPECT_EQ(back.seed, sc.seed);
}

TEST(Reflection, EyringValueForReferenceRoom) {
  // Frozen from an independent evaluation of Eyring's formula:
  // a = 1 - exp(-24 ln10 V / (c S T60)), beta = sqrt(1 - a).
  EXPECT_NEAR(t60_to_reflection(0.4, Room{5, 7, 2.5}), 0.8732333190496134, 1e-12);
}

TEST(Reflection, FullAbsorptionAndMonotonicity) {
  EXPECT_EQ(absorption_to_reflection(1.0), 0.0);
  const Room r{5, 7, 2.5};
  double prev = 0.0;
  for (double t60 : {0.1, 0.2, 0.4, 0.8, 1.6}) {
    const double b = t60_to_reflection(t60, r);
    EXPECT_GT(b, prev);
    EXPECT_LT(b, 1.0);
    prev = b;
  }
  EXPECT_THROW(t60_to_reflection(0.0, r), DomainError);
  EXPECT_THROW(t60_to_reflection(-1.0, r), DomainError);
}

double dc_gain(const std::vector<double>& h) { return std::accumulate(h.begin(), h.end(), 0.0); }

TEST(ImageSource, DirectPathFallsOffSixDbPerDoubling) {
  const Room room{10, 10, 3};
  RirSpec spec;
  spec.max_reflection_order = 0;
  const Point3D mic{2, 5, 1.5};
  const double g1 = dc_gain(image_source_rir(room, {3.0, 5, 1.5}, mic, spec, 16000));
  const double g2 = dc_gain(image_source_rir(room, {4.0, 5, 1.5}, mic, spec, 16000));
  EXPECT_NEAR(20.0 * std::log10(g1 / g2), 20.0 * std::log10(2.0), 0.05);
  EXPECT_NEAR(g1, 1.0 / (4.0 * std::numbers::pi), 1e-3 / (4.0 * std::numbers::pi));
}

TEST(ImageSource, FirstOrderEnergyMatchesMirroredSources) {
  // Independent construction: mirror the source in each of the six walls.
  const Room room{5, 7, 2.5};
  const Point3D src{1.2, 2.5, 1.1}, mic{3.1, 4.4, 1.4};
  RirSpec spec;
  spec.max_reflection_order = 1;
  spec.reflection_coefficient = 0.7;
  std::vector<Point3D> images{src,
                              {-src.x, src.y, src.z},
                              {2 * room.width - src.x, src.y, src.z},
                              {src.x, -src.y, src.z},
                              {src.x, 2 * room.depth - src.y, src.z},
                              {src.x, src.y, -src.z},
                              {src.x, src.y, 2 * room.height - src.z}};
  double expected = 0.0;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const double r = std::hypot(images[i].x - mic.x, images[i].y - mic.y, images[i].z - mic.z);
    expected += (i == 0 ? 1.0 : 0.7) / (4.0 * std::numbers::pi * r);
  }
  EXPECT_NEAR(dc_gain(image_source_rir(room, src, mic, spec, 16000)), expected, 2e-3 * expected);
}

/// Lag (samples) maximising the cross-correlation of a and b, found on a
/// 0.01-sample grid by phase-shifting the cross spectrum.
double fractional_lag(const std::vector<double>& a, const std::vector<double>& b) {
  std::size_t n = 1;
  while (n < 2 * a.size()) n <<= 1;
  std::vector<double> pa(a), pb(b);
  pa.resize(n, 0.0);
  pb.resize(n, 0.0);
  Eigen::FFT<double> fft;
  std::vector<Complex> fa, fb;
  fft.fwd(fa, pa);
  fft.fwd(fb, pb);
  double best = -1e300, best_lag = 0.0;
  for (double lag = -8.0; lag <= 8.0; lag += 0.01) {
    double acc = 0.0;
    for (std::size_t k = 1; k < n / 2; ++k)
      acc += (fa[k] * std::conj(fb[k]) *
              std::polar(1.0, 2.0 * std::numbers::pi * double(k) * lag / double(n)))
                 .real();
    if (acc > best) {
      best = acc;
      best_lag = lag;
    }
  }
  return best_lag;
}

Scenario two_mic_scene(Point2D speaker) {
  Scenario sc;
  sc.room = {5, 7, 2.5};
  sc.t60 = 0.4;
  sc.snr_db = 30;
  sc.speaker_positions = {speaker};
  sc.node_poses = {make_pose({1.0, 3.5}, 0.0, 2, 0.08)};
  return sc;
}

TEST(Render, BroadsideSourceArrivesSimultaneously) {
  const auto sc = two_mic_scene({1.0, 6.0});
  const auto src = std::vector<std::vector<double>>{bandlimited_noise(4096, 16000, 100, 7000, 1)};
  RenderOptions ro;
  ro.add_noise = false;
  const auto audio = render_node_audio(sc, sc.node_poses[0], src, RirSpec{0, 0.0}, ro);
  EXPECT_NEAR(fractional_lag(audio.channels[0], audio.channels[1]), 0.0, 0.011);
}

TEST(Render, EndfireSourceDelayMatchesSpacing) {
  const auto sc = two_mic_scene({4.0, 3.5});
  const auto src = std::vector<std::vector<double>>{bandlimited_noise(4096, 16000, 100, 7000, 2)};
  RenderOptions ro;
  ro.add_noise = false;
  const auto audio = render_node_audio(sc, sc.node_poses[0], src, RirSpec{0, 0.0}, ro);
  // Microphone 0 sits 8 cm further from the source.
  EXPECT_NEAR(fractional_lag(audio.channels[0], audio.channels[1]), 0.08 / 343.0 * 16000.0, 0.1);
}

TEST(Render, ZeroDbSnrGivesEqualNoisePower) {
  auto sc = two_mic_scene({3.0, 5.0});
  sc.snr_db = 0.0;
  const auto src = std::vector<std::vector<double>>{bandlimited_noise(160000, 16000, 100, 7000, 3)};
  RenderOptions quiet, noisy;
  quiet.add_noise = false;
  noisy.noise_seed = 77;
  const auto clean = render_node_audio(sc, sc.node_poses[0], src, rir_for(sc, 2), quiet);
  const auto dirty = render_node_audio(sc, sc.node_poses[0], src, rir_for(sc, 2), noisy);
  double speech = 0.0, noise = 0.0;
  for (std::size_t c = 0; c < clean.channel_count(); ++c)
    for (std::size_t i = 0; i < clean.length(); ++i) {
      speech += clean.channels[c][i] * clean.channels[c][i];
      const double d = dirty.channels[c][i] - clean.channels[c][i];
      noise += d * d;
    }
  EXPECT_NEAR(noise / speech, 1.0, 0.02);
}

TEST(Render, BitIdenticalForSameInputs) {
  ScenarioConfig cfg;
  cfg.nodes_min = cfg.nodes_max = 3;
  const auto sc = generate_scenario(cfg, 21);
  const auto src = scenario_sources(sc, 0.25);
  RenderOptions ro;
  ro.noise_seed = 5;
  const auto a = render_node_audio(sc, sc.node_poses[1], src, rir_for(sc, 3), ro);
  const auto b = render_node_audio(sc, sc.node_poses[1], src, rir_for(sc, 3), ro);
  EXPECT_EQ(a.channels, b.channels);
}

TEST(Render, RejectsMismatchedSources) {
  const auto sc = two_mic_scene({3.0, 5.0});
  EXPECT_THROW(render_node_audio(sc, sc.node_poses[0], {}, RirSpec{}), DomainError);
  EXPECT_THROW(render_node_audio(sc, sc.node_poses[0], {{1.0}, {1.0}}, RirSpec{}), DomainError);
}

TEST(BandlimitedNoise, UnitPowerAndDeterministic) {
  const auto x = bandlimited_noise(8000, 16000, 100, 7000, 4);
  double p = 0.0;
  for (double v : x) p += v * v;
  EXPECT_NEAR(p / x.size(), 1.0, 1e-12);
  EXPECT_EQ(x, bandlimited_noise(8000, 16000, 100, 7000, 4));
}

}  // namespace
}  // namespace adhoc
