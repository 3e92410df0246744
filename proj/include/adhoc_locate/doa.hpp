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

// Per-node direction-of-arrival estimation over a discrete azimuth grid.
//
// Every estimator returns a DoaPosterior: per-frame probability rows over the
// grid classes and their time average (the sentence-level posterior). Beam
// and subspace spectra are turned into rows by flooring at zero and dividing
// by their sum, so all estimators share one output contract.

#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "adhoc_locate/errors.hpp"
#include "adhoc_locate/geometry.hpp"
#include "adhoc_locate/nn.hpp"
#include "adhoc_locate/room_sim.hpp"
#include "adhoc_locate/sigproc.hpp"

namespace adhoc {

/// L equally spaced local azimuths spanning [0, 180] inclusively.
struct AzimuthGrid {
  std::size_t class_count = 37;

  double class_width() const { return 180.0 / static_cast<double>(class_count - 1); }
  double angle(std::size_t l) const { return static_cast<double>(l) * class_width(); }

  /// Nearest class; an exact half-way angle goes to the lower index.
  std::size_t nearest_class(double theta_deg) const {
    const double x = std::clamp(theta_deg, 0.0, 180.0) / class_width();
    const auto l = static_cast<std::size_t>(std::max(0.0, std::ceil(x - 0.5)));
    return std::min(l, class_count - 1);
  }

  void validate() const {
    if (class_count < 2) throw DomainError("azimuth grid needs at least two classes");
  }
};

struct DoaPosterior {
  std::vector<std::vector<double>> per_frame;  // [frame][class]
  std::vector<double> sentence;                // [class]
};

struct DoaPeak {
  double theta_deg = 0.0;
  double value = 0.0;
  std::size_t class_index = 0;
};

struct DoaEstimate {
  NodeId node_id = 0;
  std::vector<DoaPeak> peaks;  // descending by value
  std::size_t requested_b = 1;
};

/// Unweighted mean of per-frame rows.
inline std::vector<double> average_posterior(std::span<const std::vector<double>> per_frame) {
  if (per_frame.empty()) throw DomainError("no frames to average");
  const std::size_t L = per_frame.front().size();
  std::vector<double> out(L, 0.0);
  for (const auto& row : per_frame) {
    if (row.size() != L) throw DomainError("posterior rows differ in length");
    for (std::size_t l = 0; l < L; ++l) out[l] += row[l];
  }
  for (auto& v : out) v /= static_cast<double>(per_frame.size());
  return out;
}

/// Floors at zero and divides by the sum; an all-zero row becomes uniform.
inline std::vector<double> normalize_row(std::vector<double> row) {
  double sum = 0.0;
  for (auto& v : row) {
    v = std::max(v, 0.0);
    sum += v;
  }
  if (sum > 0.0 && std::isfinite(sum)) {
    for (auto& v : row) v /= sum;
  } else {
    std::fill(row.begin(), row.end(), 1.0 / static_cast<double>(row.size()));
  }
  return row;
}

/// Greedy top-B with non-maximum suppression of `min_separation` classes on
/// each side of every pick. Ties go to the lower class index. Zero-valued
/// classes are never picked, so fewer than B peaks may come back.
inline std::vector<DoaPeak> pick_peaks(std::span<const double> sentence, std::size_t b,
                                       std::size_t min_separation, const AzimuthGrid& grid) {
  if (b < 1) throw DomainError("B must be at least 1");
  if (sentence.size() != grid.class_count) throw DomainError("posterior does not match grid");
  std::vector<bool> suppressed(sentence.size(), false);
  std::vector<DoaPeak> peaks;
  while (peaks.size() < b) {
    std::size_t best = sentence.size();
    for (std::size_t l = 0; l < sentence.size(); ++l)
      if (!suppressed[l] && sentence[l] > 0.0 && (best == sentence.size() || sentence[l] > sentence[best]))
        best = l;
    if (best == sentence.size()) break;
    peaks.push_back({grid.angle(best), sentence[best], best});
    const std::size_t lo = best >= min_separation ? best - min_separation : 0;
    const std::size_t hi = std::min(sentence.size() - 1, best + min_separation);
    for (std::size_t l = lo; l <= hi; ++l) suppressed[l] = true;
  }
  return peaks;
}

inline DoaEstimate estimate_from_posterior(NodeId id, const DoaPosterior& post, std::size_t b,
                                           const AzimuthGrid& grid,
                                           std::size_t min_separation = 1) {
  return {id, pick_peaks(post.sentence, b, min_separation, grid), b};
}

/// Relative delay tau_m(theta) of microphone m (seconds, relative to the
/// array centre) for a far-field plane wave from local azimuth theta.
inline double steering_delay(const NodePose& pose, int m, double theta_deg,
                             double speed_of_sound = kSpeedOfSound) {
  return -mic_offset(pose, m) * std::cos(deg_to_rad(theta_deg)) / speed_of_sound;
}

struct SpectralOptions {
  bool drop_dc = true;
  double min_hz = 0.0;
  double max_hz = 1e9;
  double speed_of_sound = kSpeedOfSound;

  bool keep(const StftTensor& s, std::size_t f) const {
    if (drop_dc && f == 0) return false;
    const double hz = s.bin_frequency(f);
    return hz >= min_hz && hz <= max_hz;
  }
};

/// Steered response power with phase transform, evaluated per frame over all
/// microphone pairs and retained bins.
inline DoaPosterior srp_phat(const StftTensor& spec, const NodePose& pose,
                             const AzimuthGrid& grid, const SpectralOptions& opt = {}) {
  grid.validate();
  if (spec.channels < 2) throw DomainError("SRP-PHAT needs at least two channels");
  if (spec.channels != static_cast<std::size_t>(pose.mic_count))
    throw DomainError("STFT channel count does not match the node's microphones");

  std::vector<std::size_t> bins;
  for (std::size_t f = 0; f < spec.bins; ++f)
    if (opt.keep(spec, f)) bins.push_back(f);
  std::vector<std::pair<int, int>> pairs;
  for (int i = 0; i < pose.mic_count; ++i)
    for (int j = i + 1; j < pose.mic_count; ++j) pairs.emplace_back(i, j);

  const std::size_t L = grid.class_count, F = bins.size();
  // phasor[(p * L + l) * F + k] = exp(j w (tau_i - tau_j)(theta_l))
  std::vector<Complex> phasor(pairs.size() * L * F);
  for (std::size_t p = 0; p < pairs.size(); ++p)
    for (std::size_t l = 0; l < L; ++l) {
      const double dtau = steering_delay(pose, pairs[p].first, grid.angle(l), opt.speed_of_sound) -
                          steering_delay(pose, pairs[p].second, grid.angle(l), opt.speed_of_sound);
      for (std::size_t k = 0; k < F; ++k)
        phasor[(p * L + l) * F + k] =
            std::polar(1.0, 2.0 * std::numbers::pi * spec.bin_frequency(bins[k]) * dtau);
    }

  DoaPosterior out;
  out.per_frame.reserve(spec.frames);
  std::vector<Complex> gcc(F);
  for (std::size_t t = 0; t < spec.frames; ++t) {
    std::vector<double> power(L, 0.0);
    for (std::size_t p = 0; p < pairs.size(); ++p) {
      for (std::size_t k = 0; k < F; ++k) {
        const Complex c = spec.at(pairs[p].first, t, bins[k]) *
                          std::conj(spec.at(pairs[p].second, t, bins[k]));
        const double mag = std::abs(c);
        gcc[k] = mag > 0.0 ? c / mag : Complex{};
      }
      for (std::size_t l = 0; l < L; ++l) {
        const Complex* ph = &phasor[(p * L + l) * F];
        double acc = 0.0;
        for (std::size_t k = 0; k < F; ++k)
          acc += gcc[k].real() * ph[k].real() - gcc[k].imag() * ph[k].imag();
        power[l] += acc;
      }
    }
    out.per_frame.push_back(normalize_row(std::move(power)));
  }
  out.sentence = average_posterior(out.per_frame);
  return out;
}

/// Far-field steering vector a_m = exp(-j w tau_m(theta)).
inline Eigen::VectorXcd steering_vector(const NodePose& pose, double theta_deg, double hz,
                                        double speed_of_sound = kSpeedOfSound) {
  Eigen::VectorXcd a(pose.mic_count);
  for (int m = 0; m < pose.mic_count; ++m)
    a(m) = std::polar(1.0, -2.0 * std::numbers::pi * hz *
                               steering_delay(pose, m, theta_deg, speed_of_sound));
  return a;
}

/// Incoherent broadband MUSIC from per-bin spatial covariances. Each bin's
/// pseudo-spectrum is scaled to unit peak before averaging so that no single
/// bin dominates. Returns an unnormalised spectrum over the grid.
inline std::vector<double> music_spectrum(std::span<const Eigen::MatrixXcd> covariances,
                                          std::span<const double> frequencies,
                                          const NodePose& pose, const AzimuthGrid& grid,
                                          std::size_t source_count,
                                          double speed_of_sound = kSpeedOfSound) {
  const auto M = static_cast<std::size_t>(pose.mic_count);
  if (source_count < 1 || source_count >= M)
    throw DomainError("MUSIC needs 1 <= source count < channel count");
  std::vector<double> total(grid.class_count, 0.0);
  std::vector<double> bin_spec(grid.class_count);
  for (std::size_t k = 0; k < covariances.size(); ++k) {
    Eigen::MatrixXcd r = covariances[k];
    const double trace = r.trace().real();
    if (!(trace > 0.0)) continue;
    r.diagonal().array() += 1e-6 * trace / static_cast<double>(M);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> eig(r);
    // Eigenvalues ascend: the first M - K vectors span the noise subspace.
    const Eigen::MatrixXcd noise = eig.eigenvectors().leftCols(static_cast<Eigen::Index>(M - source_count));
    double peak = 0.0;
    for (std::size_t l = 0; l < grid.class_count; ++l) {
      const auto a = steering_vector(pose, grid.angle(l), frequencies[k], speed_of_sound);
      const double proj = (noise.adjoint() * a).squaredNorm();
      bin_spec[l] = 1.0 / std::max(proj, 1e-12);
      peak = std::max(peak, bin_spec[l]);
    }
    for (std::size_t l = 0; l < grid.class_count; ++l) total[l] += bin_spec[l] / peak;
  }
  return total;
}

/// Broadband MUSIC over the retained bins. The covariance of each bin averages
/// all frames, so `per_frame` carries a single row equal to the sentence.
inline DoaPosterior music_broadband(const StftTensor& spec, const NodePose& pose,
                                    const AzimuthGrid& grid, std::size_t source_count,
                                    const SpectralOptions& opt = {}) {
  grid.validate();
  if (spec.channels != static_cast<std::size_t>(pose.mic_count))
    throw DomainError("STFT channel count does not match the node's microphones");
  if (source_count >= spec.channels)
    throw DomainError("MUSIC source count must be below the channel count");
  const auto M = static_cast<Eigen::Index>(spec.channels);
  std::vector<Eigen::MatrixXcd> covs;
  std::vector<double> freqs;
  Eigen::VectorXcd x(M);
  for (std::size_t f = 0; f < spec.bins; ++f) {
    if (!opt.keep(spec, f)) continue;
    Eigen::MatrixXcd r = Eigen::MatrixXcd::Zero(M, M);
    for (std::size_t t = 0; t < spec.frames; ++t) {
      for (Eigen::Index c = 0; c < M; ++c) x(c) = spec.at(static_cast<std::size_t>(c), t, f);
      r.noalias() += x * x.adjoint();
    }
    covs.push_back(r / static_cast<double>(spec.frames));
    freqs.push_back(spec.bin_frequency(f));
  }
  DoaPosterior out;
  out.sentence = normalize_row(music_spectrum(covs, freqs, pose, grid, source_count, opt.speed_of_sound));
  out.per_frame = {out.sentence};
  return out;
}

/// Per-frame CNN posteriors on a phase map. Each frame is fed as a
/// (1, channels, bins) tensor.
inline DoaPosterior cnn_posterior(const PhaseMap& phases, const nn::NetworkWeights& model,
                                  const AzimuthGrid& grid) {
  const nn::Shape frame_shape{1, phases.channels, phases.bins};
  if (!(model.input_shape == frame_shape))
    throw ShapeError("model expects " + nn::to_string(model.input_shape) +
                     " but phase frames are " + nn::to_string(frame_shape));
  if (phases.frames == 0) throw DomainError("phase map has no frames");
  DoaPosterior out;
  for (std::size_t t = 0; t < phases.frames; ++t) {
    auto row = nn::forward(model, nn::Tensor(frame_shape, phases.frame(t)));
    if (row.size() != grid.class_count)
      throw ShapeError("model emits " + std::to_string(row.size()) + " classes, grid has " +
                       std::to_string(grid.class_count));
    out.per_frame.push_back(std::move(row));
  }
  out.sentence = average_posterior(out.per_frame);
  return out;
}

/// True local azimuth of every speaker as seen from `node`.
inline std::vector<double> true_local_angles(const Scenario& sc, const NodePose& node) {
  std::vector<double> out;
  for (const auto& s : sc.speaker_positions)
    out.push_back(global_to_local_deg(node, bearing_of(node.position, s)));
  return out;
}

/// Ground-truth posterior: each speaker's local angle plus Gaussian noise,
/// quantised to the nearest class, carrying mass 1/B (colliding classes
/// merge). `confidence` < 1 blends the result with a uniform row, which lowers
/// the node's selection score without moving its peaks.
inline DoaPosterior oracle_posterior(const Scenario& sc, const NodePose& node,
                                     const AzimuthGrid& grid, double angular_noise_deg,
                                     std::uint64_t seed, double confidence = 1.0) {
  grid.validate();
  if (!(confidence > 0.0 && confidence <= 1.0)) throw DomainError("confidence outside (0, 1]");
  std::mt19937_64 rng(mix_seed(seed, 0x0DA));
  const auto angles = true_local_angles(sc, node);
  std::vector<double> row(grid.class_count, (1.0 - confidence) / static_cast<double>(grid.class_count));
  for (double theta : angles) {
    const double noisy = theta + angular_noise_deg * sim_detail::gaussian(rng);
    row[grid.nearest_class(noisy)] += confidence / static_cast<double>(angles.size());
  }
  return {{row}, row};
}

/// Unquantised ground truth: exact local angles with weight 1/B each.
inline DoaEstimate oracle_estimate_exact(const Scenario& sc, const NodePose& node, NodeId id) {
  DoaEstimate e{id, {}, sc.speaker_count()};
  for (double theta : true_local_angles(sc, node))
    e.peaks.push_back({theta, 1.0 / static_cast<double>(sc.speaker_count()), 0});
  return e;
}

// -- Posterior files ------------------------------------------------------------

/// External sentence posteriors keyed by node id:
///   {"grid_L": 37, "nodes": {"0": [p_0, ..., p_{L-1}], ...}}
struct PosteriorFile {
  AzimuthGrid grid;
  std::map<NodeId, std::vector<double>> sentence;
};

inline void save_posteriors(const std::filesystem::path& path, const PosteriorFile& pf) {
  nlohmann::json j;
  j["grid_L"] = pf.grid.class_count;
  j["nodes"] = nlohmann::json::object();
  for (const auto& [id, row] : pf.sentence) j["nodes"][std::to_string(id)] = row;
  std::ofstream out(path);
  if (!out) throw IoError("cannot write posterior file " + path.string());
  out << j.dump(2) << '\n';
}

inline PosteriorFile load_posteriors(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open posterior file " + path.string());
  try {
    nlohmann::json j;
    in >> j;
    PosteriorFile pf;
    pf.grid.class_count = j.at("grid_L").get<std::size_t>();
    pf.grid.validate();
    for (const auto& [key, row] : j.at("nodes").items()) {
      auto values = row.get<std::vector<double>>();
      if (values.size() != pf.grid.class_count)
        throw FormatError("node " + key + ": posterior length does not match grid_L");
      pf.sentence[static_cast<NodeId>(std::stoul(key))] = std::move(values);
    }
    return pf;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  } catch (const std::logic_error& e) {
    throw FormatError(path.string() + ": bad node id");
  }
}

}  // namespace adhoc
