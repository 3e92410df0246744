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

// Scenario generation and multichannel rendering for shoebox rooms.
//
// Reverberation uses the Allen-Berkley image-source construction with one
// frequency-independent reflection coefficient for all six walls. Every
// image contributes a 1/(4 pi r) attenuated, fractionally delayed impulse
// (Hann-windowed sinc). Additive noise is independent white Gaussian noise
// per microphone.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>
#include <unsupported/Eigen/FFT>

#include "adhoc_locate/errors.hpp"
#include "adhoc_locate/geometry.hpp"
#include "adhoc_locate/sigproc.hpp"

namespace adhoc {

inline constexpr double kSpeedOfSound = 343.0;

struct Room {
  double width = 5.0;   // x extent, meters
  double depth = 7.0;   // y extent, meters
  double height = 2.5;  // z extent, meters

  friend bool operator==(const Room&, const Room&) = default;

  double volume() const { return width * depth * height; }
  double surface() const { return 2.0 * (width * depth + width * height + depth * height); }
  double floor_diagonal() const { return std::hypot(width, depth); }
  bool contains(Point2D p) const { return p.x > 0.0 && p.x < width && p.y > 0.0 && p.y < depth; }
};

struct Scenario {
  Room room;
  double t60 = 0.4;
  std::vector<NodePose> node_poses;
  std::vector<Point2D> speaker_positions;
  double snr_db = 30.0;
  std::uint64_t seed = 0;
  double array_height = 1.25;
  double source_height = 1.25;

  std::size_t speaker_count() const { return speaker_positions.size(); }
  std::size_t node_count() const { return node_poses.size(); }

  friend bool operator==(const Scenario&, const Scenario&) = default;

  void validate() const {
    if (speaker_positions.empty()) throw DomainError("scenario needs at least one speaker");
    if (node_poses.size() < 2) throw DomainError("scenario needs at least two nodes");
    for (const auto& n : node_poses)
      if (!room.contains(n.position)) throw DomainError("node outside the room footprint");
    for (const auto& s : speaker_positions)
      if (!room.contains(s)) throw DomainError("speaker outside the room footprint");
  }
};

enum class OrientationMode {
  kRandom,       // uniform in [0, 360)
  kFrontFacing,  // every speaker lies strictly in front of every array
};

/// Parameter ranges for random scenarios. Each [lo, hi] range is sampled
/// uniformly; rooms are picked uniformly from `rooms`.
struct ScenarioConfig {
  std::vector<Room> rooms{Room{}};
  double t60_min = 0.4, t60_max = 0.4;
  double snr_min_db = 30.0, snr_max_db = 30.0;
  int speakers_min = 1, speakers_max = 1;
  int nodes_min = 20, nodes_max = 20;
  int mic_count = 4;
  double mic_spacing = 0.08;
  double wall_margin = 0.3;
  double min_node_speaker_distance = 0.5;
  double min_speaker_separation = 1.0;
  double min_node_separation = 0.2;
  OrientationMode orientation = OrientationMode::kRandom;
  /// Front-facing mode keeps speakers at least this far from either endfire.
  double front_margin_deg = 5.0;
};

namespace sim_detail {

/// Mixes a seed with a stream index (splitmix64 finaliser).
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
  if (hi <= lo) return lo;
  // 53-bit mantissa draw; avoids implementation-defined distributions.
  const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
  return lo + (hi - lo) * u;
}

inline int uniform_int(std::mt19937_64& rng, int lo, int hi) {
  if (hi <= lo) return lo;
  const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
  return lo + static_cast<int>(rng() % span);
}

/// Standard normal via Box-Muller on the same 53-bit draws.
inline double gaussian(std::mt19937_64& rng) {
  double u1 = 0.0;
  while (u1 <= 0.0) u1 = uniform(rng, 0.0, 1.0);
  const double u2 = uniform(rng, 0.0, 1.0);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace sim_detail

using sim_detail::mix_seed;

/// Draws a scenario; identical (config, seed) pairs give identical scenarios.
inline Scenario generate_scenario(const ScenarioConfig& cfg, std::uint64_t seed) {
  using namespace sim_detail;
  if (cfg.rooms.empty()) throw ConfigError("no rooms configured");
  if (cfg.speakers_min < 1 || cfg.speakers_max < cfg.speakers_min)
    throw ConfigError("invalid speaker count range");
  if (cfg.nodes_min < 2 || cfg.nodes_max < cfg.nodes_min)
    throw ConfigError("invalid node count range");
  if (cfg.t60_min <= 0.0 || cfg.t60_max < cfg.t60_min) throw ConfigError("invalid T60 range");
  if (cfg.snr_max_db < cfg.snr_min_db) throw ConfigError("invalid SNR range");
  if (cfg.wall_margin < 0.0) throw ConfigError("wall margin must be non-negative");
  for (const auto& r : cfg.rooms)
    if (2.0 * cfg.wall_margin >= std::min(r.width, r.depth) || r.height <= 0.0)
      throw ConfigError("wall margin leaves no room for placement");

  std::mt19937_64 rng(mix_seed(seed, 0));
  Scenario sc;
  sc.seed = seed;
  sc.room = cfg.rooms[static_cast<std::size_t>(
      uniform_int(rng, 0, static_cast<int>(cfg.rooms.size()) - 1))];
  sc.t60 = uniform(rng, cfg.t60_min, cfg.t60_max);
  sc.snr_db = uniform(rng, cfg.snr_min_db, cfg.snr_max_db);
  sc.array_height = std::min(1.25, 0.5 * sc.room.height);
  sc.source_height = sc.array_height;
  const int speakers = uniform_int(rng, cfg.speakers_min, cfg.speakers_max);
  const int nodes = uniform_int(rng, cfg.nodes_min, cfg.nodes_max);

  const double m = cfg.wall_margin;
  constexpr int kMaxAttempts = 10000;
  auto draw_point = [&](auto&& accept) {
    for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
      const Point2D p{uniform(rng, m, sc.room.width - m), uniform(rng, m, sc.room.depth - m)};
      if (accept(p)) return p;
    }
    throw ConfigError("could not satisfy placement constraints");
  };

  for (int b = 0; b < speakers; ++b)
    sc.speaker_positions.push_back(draw_point([&](Point2D p) {
      return std::all_of(sc.speaker_positions.begin(), sc.speaker_positions.end(),
                         [&](Point2D q) { return distance(p, q) >= cfg.min_speaker_separation; });
    }));

  for (int n = 0; n < nodes; ++n) {
    const Point2D pos = draw_point([&](Point2D p) {
      for (const auto& s : sc.speaker_positions)
        if (distance(p, s) < cfg.min_node_speaker_distance) return false;
      for (const auto& q : sc.node_poses)
        if (distance(p, q.position) < cfg.min_node_separation) return false;
      return true;
    });
    double beta = uniform(rng, 0.0, 360.0);
    if (cfg.orientation == OrientationMode::kFrontFacing) {
      auto in_front = [&](double b) {
        return std::all_of(sc.speaker_positions.begin(), sc.speaker_positions.end(),
                           [&](Point2D s) {
                             const double rel = normalize_deg(bearing_of(pos, s) - b);
                             return rel > cfg.front_margin_deg &&
                                    rel < 180.0 - cfg.front_margin_deg;
                           });
      };
      int attempt = 0;
      while (!in_front(beta)) {
        if (++attempt > kMaxAttempts) throw ConfigError("no front-facing orientation exists");
        beta = uniform(rng, 0.0, 360.0);
      }
    }
    sc.node_poses.push_back(make_pose(pos, beta, cfg.mic_count, cfg.mic_spacing));
  }
  return sc;
}

// -- Reverberation -------------------------------------------------------------

struct RirSpec {
  int max_reflection_order = 6;
  double reflection_coefficient = 0.0;
  double speed_of_sound = kSpeedOfSound;
  int sinc_half_width = 32;  // taps on each side of a fractional delay
};

/// Pressure reflection coefficient of a wall with energy absorption `a`.
inline double absorption_to_reflection(double absorption) {
  if (!(absorption >= 0.0 && absorption <= 1.0)) throw DomainError("absorption outside [0, 1]");
  return std::sqrt(1.0 - absorption);
}

/// Uniform wall reflection coefficient reproducing `t60` in `room` under
/// Eyring's reverberation formula T60 = 24 ln(10) V / (-c S ln(1 - a)).
inline double t60_to_reflection(double t60, const Room& room,
                                double speed_of_sound = kSpeedOfSound) {
  if (!(t60 > 0.0)) throw DomainError("T60 must be positive");
  const double sabine_const = 24.0 * std::numbers::ln10 / speed_of_sound;
  const double neg_log = sabine_const * room.volume() / (room.surface() * t60);
  return absorption_to_reflection(1.0 - std::exp(-neg_log));
}

inline RirSpec rir_for(const Scenario& sc, int max_order = 6) {
  RirSpec r;
  r.max_reflection_order = max_order;
  r.reflection_coefficient = max_order == 0 ? 0.0 : t60_to_reflection(sc.t60, sc.room);
  return r;
}

struct Point3D {
  double x = 0.0, y = 0.0, z = 0.0;
};

/// Image-source impulse response from `src` to `mic` at `fs` Hz.
inline std::vector<double> image_source_rir(const Room& room, Point3D src, Point3D mic,
                                            const RirSpec& spec, int fs) {
  if (spec.max_reflection_order < 0) throw DomainError("negative reflection order");
  const int order = spec.max_reflection_order;
  const int hw = spec.sinc_half_width;

  struct Tap {
    double delay;  // samples
    double gain;
  };
  std::vector<Tap> taps;
  // Along one axis of length L, image k sits at k*L + s (k even) or
  // (k+1)*L - s (k odd) and has undergone |k| reflections.
  auto image = [](int k, double L, double s) {
    return (k % 2 == 0) ? k * L + s : (k + 1) * L - s;
  };
  double max_delay = 0.0;
  for (int kx = -order; kx <= order; ++kx)
    for (int ky = -(order - std::abs(kx)); ky <= order - std::abs(kx); ++ky) {
      const int rem = order - std::abs(kx) - std::abs(ky);
      for (int kz = -rem; kz <= rem; ++kz) {
        const double dx = image(kx, room.width, src.x) - mic.x;
        const double dy = image(ky, room.depth, src.y) - mic.y;
        const double dz = image(kz, room.height, src.z) - mic.z;
        const double r = std::sqrt(dx * dx + dy * dy + dz * dz);
        const int refl = std::abs(kx) + std::abs(ky) + std::abs(kz);
        const double g = std::pow(spec.reflection_coefficient, refl) / (4.0 * std::numbers::pi * r);
        if (g == 0.0) continue;
        const double d = r / spec.speed_of_sound * fs;
        taps.push_back({d, g});
        max_delay = std::max(max_delay, d);
      }
    }

  std::vector<double> h(static_cast<std::size_t>(std::ceil(max_delay)) + hw + 2, 0.0);
  for (const auto& tap : taps) {
    const auto centre = static_cast<long>(std::floor(tap.delay));
    for (long n = centre - hw + 1; n <= centre + hw; ++n) {
      if (n < 0) continue;
      const double x = static_cast<double>(n) - tap.delay;
      if (std::abs(x) >= hw) continue;
      const double sinc = x == 0.0 ? 1.0 : std::sin(std::numbers::pi * x) / (std::numbers::pi * x);
      const double win = 0.5 + 0.5 * std::cos(std::numbers::pi * x / hw);
      h[static_cast<std::size_t>(n)] += tap.gain * sinc * win;
    }
  }
  return h;
}

/// Linear convolution truncated to `out_len` samples.
inline std::vector<double> fft_convolve(const std::vector<double>& a, const std::vector<double>& b,
                                        std::size_t out_len) {
  if (a.empty() || b.empty()) return std::vector<double>(out_len, 0.0);
  std::size_t n = 1;
  while (n < a.size() + b.size() - 1) n <<= 1;
  Eigen::FFT<double> fft;
  std::vector<double> pa(a), pb(b);
  pa.resize(n, 0.0);
  pb.resize(n, 0.0);
  std::vector<Complex> fa, fb;
  fft.fwd(fa, pa);
  fft.fwd(fb, pb);
  for (std::size_t i = 0; i < fa.size(); ++i) fa[i] *= fb[i];
  std::vector<double> out;
  fft.inv(out, fa);
  out.resize(out_len, 0.0);
  return out;
}

/// Unit-power Gaussian noise restricted to [lo_hz, hi_hz].
inline std::vector<double> bandlimited_noise(std::size_t length, int fs, double lo_hz,
                                             double hi_hz, std::uint64_t seed) {
  std::mt19937_64 rng(mix_seed(seed, 0x5157));
  std::size_t n = 1;
  while (n < length) n <<= 1;
  std::vector<double> x(n);
  for (auto& v : x) v = sim_detail::gaussian(rng);
  Eigen::FFT<double> fft;
  std::vector<Complex> spec;
  fft.fwd(spec, x);
  for (std::size_t k = 0; k < spec.size(); ++k) {
    const std::size_t kk = std::min(k, n - k);
    const double f = static_cast<double>(kk) * fs / static_cast<double>(n);
    if (f < lo_hz || f > hi_hz) spec[k] = 0.0;
  }
  fft.inv(x, spec);
  x.resize(length);
  double power = 0.0;
  for (double v : x) power += v * v;
  power /= static_cast<double>(length);
  if (power > 0.0)
    for (auto& v : x) v /= std::sqrt(power);
  return x;
}

enum class SnrReference {
  kAtNode,    // reverberant speech power summed over speakers, at the microphones
  kAtSource,  // dry source power referenced to 1 m free-field propagation
};

struct RenderOptions {
  std::uint64_t noise_seed = 0;
  SnrReference snr_reference = SnrReference::kAtNode;
  bool add_noise = true;
};

/// Renders the microphone signals of one node: every source convolved with
/// its image-source response, summed, then white noise at the scenario SNR.
/// Output length equals the source length.
inline MultichannelAudio render_node_audio(const Scenario& sc, const NodePose& node,
                                           const std::vector<std::vector<double>>& sources,
                                           const RirSpec& rir, const RenderOptions& opt = {}) {
  if (sources.empty()) throw DomainError("no source signals to render");
  if (sources.size() != sc.speaker_positions.size())
    throw DomainError("source count does not match speaker count");
  const std::size_t len = sources.front().size();
  if (len == 0) throw DomainError("empty source signal");
  for (const auto& s : sources)
    if (s.size() != len) throw DomainError("source signals differ in length");
  if (!sc.room.contains(node.position)) throw DomainError("node outside the room");

  MultichannelAudio out;
  out.sample_rate = kPipelineSampleRate;
  const auto mics = mic_positions(node);
  out.channels.assign(mics.size(), std::vector<double>(len, 0.0));
  for (std::size_t b = 0; b < sources.size(); ++b) {
    const Point2D sp = sc.speaker_positions[b];
    for (std::size_t m = 0; m < mics.size(); ++m) {
      const auto h = image_source_rir(sc.room, {sp.x, sp.y, sc.source_height},
                                      {mics[m].x, mics[m].y, sc.array_height}, rir,
                                      out.sample_rate);
      const auto y = fft_convolve(sources[b], h, len);
      for (std::size_t n = 0; n < len; ++n) out.channels[m][n] += y[n];
    }
  }
  if (!opt.add_noise) return out;

  double ref_power = 0.0;
  if (opt.snr_reference == SnrReference::kAtNode) {
    for (const auto& c : out.channels)
      for (double v : c) ref_power += v * v;
    ref_power /= static_cast<double>(len * out.channels.size());
  } else {
    for (const auto& s : sources)
      for (double v : s) ref_power += v * v;
    ref_power /= static_cast<double>(len * sources.size());
    ref_power /= std::pow(4.0 * std::numbers::pi, 2);
  }
  const double sigma = std::sqrt(ref_power / std::pow(10.0, sc.snr_db / 10.0));
  std::mt19937_64 rng(mix_seed(opt.noise_seed, 0x401));
  for (auto& c : out.channels)
    for (auto& v : c) v += sigma * sim_detail::gaussian(rng);
  return out;
}

/// Source signals used by simulated scenes: one band-limited noise signal
/// per speaker, derived from the scenario seed.
inline std::vector<std::vector<double>> scenario_sources(const Scenario& sc,
                                                         double duration_s = 1.0) {
  const auto len = static_cast<std::size_t>(duration_s * kPipelineSampleRate);
  std::vector<std::vector<double>> out;
  for (std::size_t b = 0; b < sc.speaker_count(); ++b)
    out.push_back(bandlimited_noise(len, kPipelineSampleRate, 100.0, 7000.0,
                                    mix_seed(sc.seed, 1000 + b)));
  return out;
}

// -- Scenario files -------------------------------------------------------------

inline nlohmann::json scenario_to_json(const Scenario& sc) {
  nlohmann::json j;
  j["room"] = {sc.room.width, sc.room.depth, sc.room.height};
  j["t60"] = sc.t60;
  j["snr_db"] = sc.snr_db;
  j["seed"] = sc.seed;
  j["array_height"] = sc.array_height;
  j["source_height"] = sc.source_height;
  j["speaker_count"] = sc.speaker_count();
  j["speakers"] = nlohmann::json::array();
  for (const auto& s : sc.speaker_positions) j["speakers"].push_back({s.x, s.y});
  j["nodes"] = nlohmann::json::array();
  for (const auto& n : sc.node_poses)
    j["nodes"].push_back({{"position", {n.position.x, n.position.y}},
                          {"orientation_deg", n.orientation_beta},
                          {"mic_count", n.mic_count},
                          {"mic_spacing", n.mic_spacing}});
  return j;
}

inline Scenario scenario_from_json(const nlohmann::json& j) {
  try {
    Scenario sc;
    const auto& room = j.at("room");
    sc.room = {room.at(0).get<double>(), room.at(1).get<double>(), room.at(2).get<double>()};
    sc.t60 = j.at("t60").get<double>();
    sc.snr_db = j.at("snr_db").get<double>();
    sc.seed = j.value("seed", std::uint64_t{0});
    sc.array_height = j.value("array_height", 1.25);
    sc.source_height = j.value("source_height", 1.25);
    for (const auto& s : j.at("speakers"))
      sc.speaker_positions.push_back({s.at(0).get<double>(), s.at(1).get<double>()});
    for (const auto& n : j.at("nodes"))
      sc.node_poses.push_back(make_pose(
          {n.at("position").at(0).get<double>(), n.at("position").at(1).get<double>()},
          n.at("orientation_deg").get<double>(), n.value("mic_count", 4),
          n.value("mic_spacing", 0.08)));
    if (j.contains("speaker_count") && j["speaker_count"].get<std::size_t>() != sc.speaker_count())
      throw FormatError("speaker_count does not match the speaker list");
    sc.validate();
    return sc;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("invalid scenario: ") + e.what());
  }
}

inline void save_scenario(const std::filesystem::path& path, const Scenario& sc) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write scenario file " + path.string());
  out << scenario_to_json(sc).dump(2) << '\n';
}

inline Scenario load_scenario(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open scenario file " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  return scenario_from_json(j);
}

}  // namespace adhoc
