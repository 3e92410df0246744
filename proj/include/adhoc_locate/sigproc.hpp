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

// Framing, STFT and phase-map features for multichannel recordings, plus a
// small 16-bit PCM WAV reader/writer.

#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include <unsupported/Eigen/FFT>

#include "adhoc_locate/errors.hpp"

namespace adhoc {

using Complex = std::complex<double>;

inline constexpr int kPipelineSampleRate = 16000;

struct MultichannelAudio {
  std::vector<std::vector<double>> channels;
  int sample_rate = kPipelineSampleRate;

  std::size_t channel_count() const { return channels.size(); }
  std::size_t length() const { return channels.empty() ? 0 : channels.front().size(); }

  void validate() const {
    if (channels.empty()) throw DomainError("audio has no channels");
    if (sample_rate <= 0) throw DomainError("sample rate must be positive");
    for (const auto& c : channels)
      if (c.size() != channels.front().size())
        throw DomainError("audio channels differ in length");
  }
};

enum class WindowKind { kHann, kRectangular };

inline WindowKind parse_window(const std::string& name) {
  if (name == "hann") return WindowKind::kHann;
  if (name == "rect" || name == "rectangular") return WindowKind::kRectangular;
  throw ConfigError("unknown window '" + name + "'");
}

/// Periodic window of length n (periodic Hann sums to a constant at 50% hop).
inline std::vector<double> make_window(WindowKind kind, std::size_t n) {
  std::vector<double> w(n, 1.0);
  if (kind == WindowKind::kHann)
    for (std::size_t i = 0; i < n; ++i)
      w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) /
                                  static_cast<double>(n));
  return w;
}

/// Complex STFT, indexed [channel][frame][bin], stored contiguously.
struct StftTensor {
  std::vector<Complex> values;
  std::size_t channels = 0;
  std::size_t frames = 0;
  std::size_t bins = 0;
  std::size_t frame_size = 0;
  std::size_t hop = 0;
  int sample_rate = kPipelineSampleRate;

  Complex& at(std::size_t c, std::size_t t, std::size_t f) {
    return values[(c * frames + t) * bins + f];
  }
  const Complex& at(std::size_t c, std::size_t t, std::size_t f) const {
    return values[(c * frames + t) * bins + f];
  }
  /// Centre frequency of bin f in Hz.
  double bin_frequency(std::size_t f) const {
    return static_cast<double>(f) * sample_rate / static_cast<double>(frame_size);
  }
};

inline std::size_t frame_count(std::size_t length, std::size_t frame_size, std::size_t hop) {
  if (length < frame_size) return 0;
  return (length - frame_size) / hop + 1;
}

/// Windowed DFT of every full frame of every channel. Trailing samples that do
/// not fill a frame are dropped.
inline StftTensor stft(const MultichannelAudio& audio, std::size_t frame_size = 512,
                       double overlap = 0.5, WindowKind window = WindowKind::kHann) {
  audio.validate();
  if (frame_size < 2 || !std::has_single_bit(frame_size))
    throw DomainError("STFT frame size must be a power of two");
  if (!(overlap >= 0.0 && overlap < 1.0)) throw DomainError("overlap must lie in [0, 1)");
  const auto hop = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(static_cast<double>(frame_size) * (1.0 - overlap))));
  if (audio.length() < frame_size) throw DomainError("audio shorter than one STFT frame");

  StftTensor out;
  out.channels = audio.channel_count();
  out.frames = frame_count(audio.length(), frame_size, hop);
  out.bins = frame_size / 2 + 1;
  out.frame_size = frame_size;
  out.hop = hop;
  out.sample_rate = audio.sample_rate;
  out.values.resize(out.channels * out.frames * out.bins);

  const auto win = make_window(window, frame_size);
  Eigen::FFT<double> fft;
  std::vector<double> buf(frame_size);
  std::vector<Complex> spec;
  for (std::size_t c = 0; c < out.channels; ++c) {
    const auto& x = audio.channels[c];
    for (std::size_t t = 0; t < out.frames; ++t) {
      const std::size_t start = t * hop;
      for (std::size_t n = 0; n < frame_size; ++n) buf[n] = x[start + n] * win[n];
      fft.fwd(spec, buf);
      std::copy_n(spec.begin(), out.bins, &out.at(c, t, 0));
    }
  }
  return out;
}

/// Phase features indexed [channel][bin][frame], values in (-pi, pi].
struct PhaseMap {
  std::vector<double> phases;
  std::size_t channels = 0;
  std::size_t bins = 0;
  std::size_t frames = 0;

  double at(std::size_t c, std::size_t f, std::size_t t) const {
    return phases[(c * bins + f) * frames + t];
  }
  double& at(std::size_t c, std::size_t f, std::size_t t) {
    return phases[(c * bins + f) * frames + t];
  }

  /// One frame as a row-major channels x bins matrix.
  std::vector<double> frame(std::size_t t) const {
    std::vector<double> out(channels * bins);
    for (std::size_t c = 0; c < channels; ++c)
      for (std::size_t f = 0; f < bins; ++f) out[c * bins + f] = at(c, f, t);
    return out;
  }
};

/// arg() of every STFT coefficient in (-pi, pi]; the DC bin is removed when
/// `drop_lowest_subband` is set.
inline PhaseMap phase_map(const StftTensor& spec, bool drop_lowest_subband = true) {
  if (spec.values.empty()) throw DomainError("empty STFT");
  const std::size_t first = drop_lowest_subband ? 1 : 0;
  PhaseMap out;
  out.channels = spec.channels;
  out.bins = spec.bins - first;
  out.frames = spec.frames;
  out.phases.resize(out.channels * out.bins * out.frames);
  for (std::size_t c = 0; c < out.channels; ++c)
    for (std::size_t f = 0; f < out.bins; ++f)
      for (std::size_t t = 0; t < out.frames; ++t) {
        double p = std::arg(spec.at(c, t, f + first));
        if (p <= -std::numbers::pi) p = std::numbers::pi;  // arg(-1 - 0j) == -pi
        out.at(c, f, t) = p;
      }
  return out;
}

// -- WAV ---------------------------------------------------------------------

namespace wav_detail {

inline void put_u32(std::vector<char>& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline void put_u16(std::vector<char>& b, std::uint16_t v) {
  b.push_back(static_cast<char>(v & 0xFF));
  b.push_back(static_cast<char>((v >> 8) & 0xFF));
}
inline std::uint32_t get_u32(const unsigned char* p) {
  return std::uint32_t{p[0]} | std::uint32_t{p[1]} << 8 | std::uint32_t{p[2]} << 16 |
         std::uint32_t{p[3]} << 24;
}
inline std::uint16_t get_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | p[1] << 8);
}

}  // namespace wav_detail

/// Reads 16-bit signed little-endian PCM, scaled to [-1, 1).
inline MultichannelAudio read_wav(const std::filesystem::path& path) {
  using namespace wav_detail;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open WAV file " + path.string());
  std::vector<unsigned char> data((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (data.size() < 12 || std::memcmp(data.data(), "RIFF", 4) != 0 ||
      std::memcmp(data.data() + 8, "WAVE", 4) != 0)
    throw FormatError(path.string() + ": not a RIFF/WAVE file");

  int channels = 0, rate = 0, bits = 0;
  const unsigned char* pcm = nullptr;
  std::size_t pcm_bytes = 0;
  std::size_t pos = 12;
  while (pos + 8 <= data.size()) {
    const unsigned char* chunk = data.data() + pos;
    const std::uint32_t size = get_u32(chunk + 4);
    const std::size_t body = pos + 8;
    if (body + size > data.size()) throw FormatError(path.string() + ": truncated chunk");
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (size < 16) throw FormatError(path.string() + ": short fmt chunk");
      const std::uint16_t format = get_u16(data.data() + body);
      if (format != 1 && format != 0xFFFE)
        throw FormatError(path.string() + ": only PCM WAV is supported");
      channels = get_u16(data.data() + body + 2);
      rate = static_cast<int>(get_u32(data.data() + body + 4));
      bits = get_u16(data.data() + body + 14);
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      pcm = data.data() + body;
      pcm_bytes = size;
    }
    pos = body + size + (size & 1u);
  }
  if (channels <= 0 || pcm == nullptr) throw FormatError(path.string() + ": missing fmt/data");
  if (bits != 16) throw FormatError(path.string() + ": only 16-bit PCM is supported");

  const std::size_t frames = pcm_bytes / (2u * static_cast<std::size_t>(channels));
  MultichannelAudio audio;
  audio.sample_rate = rate;
  audio.channels.assign(static_cast<std::size_t>(channels), std::vector<double>(frames));
  for (std::size_t n = 0; n < frames; ++n)
    for (int c = 0; c < channels; ++c) {
      const auto v = static_cast<std::int16_t>(get_u16(pcm + 2 * (n * channels + c)));
      audio.channels[static_cast<std::size_t>(c)][n] = v / 32768.0;
    }
  return audio;
}

/// Writes 16-bit PCM after multiplying by `gain`; samples are clipped.
inline void write_wav(const std::filesystem::path& path, const MultichannelAudio& audio,
                      double gain = 1.0) {
  using namespace wav_detail;
  audio.validate();
  const auto channels = static_cast<std::uint16_t>(audio.channel_count());
  const auto frames = audio.length();
  const auto data_bytes = static_cast<std::uint32_t>(frames * channels * 2);
  std::vector<char> b;
  b.reserve(44 + data_bytes);
  b.insert(b.end(), {'R', 'I', 'F', 'F'});
  put_u32(b, 36 + data_bytes);
  b.insert(b.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  put_u32(b, 16);
  put_u16(b, 1);
  put_u16(b, channels);
  put_u32(b, static_cast<std::uint32_t>(audio.sample_rate));
  put_u32(b, static_cast<std::uint32_t>(audio.sample_rate) * channels * 2);
  put_u16(b, static_cast<std::uint16_t>(channels * 2));
  put_u16(b, 16);
  b.insert(b.end(), {'d', 'a', 't', 'a'});
  put_u32(b, data_bytes);
  for (std::size_t n = 0; n < frames; ++n)
    for (std::size_t c = 0; c < channels; ++c) {
      const double s = std::clamp(audio.channels[c][n] * gain * 32768.0, -32768.0, 32767.0);
      put_u16(b, static_cast<std::uint16_t>(static_cast<std::int16_t>(std::lround(s))));
    }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write WAV file " + path.string());
  out.write(b.data(), static_cast<std::streamsize>(b.size()));
}

}  // namespace adhoc
