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

// Inference-only feed-forward network: Conv2D (valid, stride 1), ReLU,
// Flatten, Dense and Softmax, plus the "ADLW" weights file.
//
// ADLW layout (all integers u32 little-endian, all floats IEEE-754 binary32
// little-endian, tensors row-major):
//
//   "ADLW" | version (=1) | layer_count | input C | input H | input W
//   then per layer: u8 kind tag followed by
//     1 Conv2D : out_channels, in_channels, kernel_h, kernel_w,
//                weights[out][in][kh][kw], bias[out]
//     2 ReLU   : -
//     3 Flatten: -
//     4 Dense  : out_dim, in_dim, weights[out][in], bias[out]
//     5 Softmax: -

#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "adhoc_locate/errors.hpp"
#include "json.hpp"

namespace adhoc::nn {

struct Shape {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;

  std::size_t size() const { return channels * height * width; }
  friend bool operator==(const Shape&, const Shape&) = default;
};

inline std::string to_string(const Shape& s) {
  return "(" + std::to_string(s.channels) + ", " + std::to_string(s.height) + ", " +
         std::to_string(s.width) + ")";
}

struct Tensor {
  Shape shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(Shape s) : shape(s), data(s.size(), 0.0) {}
  Tensor(Shape s, std::vector<double> values) : shape(s), data(std::move(values)) {
    if (data.size() != shape.size()) throw ShapeError("tensor data does not match its shape");
  }

  double& at(std::size_t c, std::size_t y, std::size_t x) {
    return data[(c * shape.height + y) * shape.width + x];
  }
  double at(std::size_t c, std::size_t y, std::size_t x) const {
    return data[(c * shape.height + y) * shape.width + x];
  }
};

struct Conv2D {
  std::uint32_t out_channels = 0;
  std::uint32_t in_channels = 0;
  std::uint32_t kernel_h = 0;
  std::uint32_t kernel_w = 0;
  std::vector<float> weights;  // [out][in][kh][kw]
  std::vector<float> bias;     // [out]

  float weight(std::size_t o, std::size_t i, std::size_t ky, std::size_t kx) const {
    return weights[((o * in_channels + i) * kernel_h + ky) * kernel_w + kx];
  }
  friend bool operator==(const Conv2D&, const Conv2D&) = default;
};
struct ReLU {
  friend bool operator==(const ReLU&, const ReLU&) = default;
};
struct Flatten {
  friend bool operator==(const Flatten&, const Flatten&) = default;
};
struct Dense {
  std::uint32_t out_dim = 0;
  std::uint32_t in_dim = 0;
  std::vector<float> weights;  // [out][in]
  std::vector<float> bias;     // [out]
  friend bool operator==(const Dense&, const Dense&) = default;
};
struct Softmax {
  friend bool operator==(const Softmax&, const Softmax&) = default;
};

using Layer = std::variant<Conv2D, ReLU, Flatten, Dense, Softmax>;

inline const char* layer_name(const Layer& l) {
  static constexpr std::array<const char*, 5> names{"Conv2D", "ReLU", "Flatten", "Dense",
                                                    "Softmax"};
  return names[l.index()];
}

/// Output shape of one layer, or ShapeError naming the layer.
inline Shape output_shape(const Layer& layer, const Shape& in, std::size_t index) {
  auto fail = [&](const std::string& why) -> ShapeError {
    return ShapeError("layer " + std::to_string(index) + " (" + layer_name(layer) +
                      "): " + why + ", input " + to_string(in));
  };
  return std::visit(
      [&](const auto& l) -> Shape {
        using T = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<T, Conv2D>) {
          if (l.in_channels != in.channels) throw fail("channel mismatch");
          if (l.kernel_h == 0 || l.kernel_w == 0 || l.kernel_h > in.height ||
              l.kernel_w > in.width)
            throw fail("kernel does not fit");
          if (l.weights.size() !=
                  std::size_t{l.out_channels} * l.in_channels * l.kernel_h * l.kernel_w ||
              l.bias.size() != l.out_channels)
            throw fail("parameter count mismatch");
          return {l.out_channels, in.height - l.kernel_h + 1, in.width - l.kernel_w + 1};
        } else if constexpr (std::is_same_v<T, Dense>) {
          if (in.height != 1 || in.width != 1) throw fail("dense input must be flat");
          if (l.in_dim != in.channels) throw fail("dimension mismatch");
          if (l.weights.size() != std::size_t{l.out_dim} * l.in_dim || l.bias.size() != l.out_dim)
            throw fail("parameter count mismatch");
          return {l.out_dim, 1, 1};
        } else if constexpr (std::is_same_v<T, Flatten>) {
          return {in.size(), 1, 1};
        } else if constexpr (std::is_same_v<T, Softmax>) {
          if (in.height != 1 || in.width != 1) throw fail("softmax input must be flat");
          return in;
        } else {
          return in;
        }
      },
      layer);
}

struct NetworkWeights {
  Shape input_shape;
  std::vector<Layer> layers;

  friend bool operator==(const NetworkWeights&, const NetworkWeights&) = default;

  /// Checks shape composition, finiteness, and the trailing Softmax. Returns
  /// the number of output classes.
  std::size_t validate() const {
    if (input_shape.size() == 0) throw ShapeError("empty input shape");
    Shape s = input_shape;
    for (std::size_t i = 0; i < layers.size(); ++i) {
      s = output_shape(layers[i], s, i);
      std::visit(
          [&](const auto& l) {
            using T = std::decay_t<decltype(l)>;
            if constexpr (std::is_same_v<T, Conv2D> || std::is_same_v<T, Dense>) {
              auto finite = [](float v) { return std::isfinite(v); };
              if (!std::all_of(l.weights.begin(), l.weights.end(), finite) ||
                  !std::all_of(l.bias.begin(), l.bias.end(), finite))
                throw ShapeError("layer " + std::to_string(i) + " has non-finite parameters");
            }
          },
          layers[i]);
    }
    if (layers.empty() || !std::holds_alternative<Softmax>(layers.back()))
      throw ShapeError("network must end with a Softmax layer");
    return s.channels;
  }
};

namespace detail {

inline Tensor conv2d(const Conv2D& l, const Tensor& in, const Shape& out_shape) {
  Tensor out(out_shape);
  for (std::size_t o = 0; o < l.out_channels; ++o)
    for (std::size_t y = 0; y < out_shape.height; ++y)
      for (std::size_t x = 0; x < out_shape.width; ++x) {
        double acc = l.bias[o];
        for (std::size_t i = 0; i < l.in_channels; ++i)
          for (std::size_t ky = 0; ky < l.kernel_h; ++ky) {
            const double* row = &in.data[(i * in.shape.height + y + ky) * in.shape.width + x];
            const float* w = &l.weights[((o * l.in_channels + i) * l.kernel_h + ky) * l.kernel_w];
            for (std::size_t kx = 0; kx < l.kernel_w; ++kx) acc += w[kx] * row[kx];
          }
        out.at(o, y, x) = acc;
      }
  return out;
}

inline Tensor dense(const Dense& l, const Tensor& in) {
  Tensor out(Shape{l.out_dim, 1, 1});
  for (std::size_t o = 0; o < l.out_dim; ++o) {
    double acc = l.bias[o];
    const float* w = &l.weights[o * l.in_dim];
    for (std::size_t i = 0; i < l.in_dim; ++i) acc += w[i] * in.data[i];
    out.data[o] = acc;
  }
  return out;
}

}  // namespace detail

/// Numerically stable softmax (max subtraction).
inline std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> out(logits.begin(), logits.end());
  if (out.empty()) return out;
  const double mx = *std::max_element(out.begin(), out.end());
  double sum = 0.0;
  for (auto& v : out) sum += (v = std::exp(v - mx));
  for (auto& v : out) v /= sum;
  return out;
}

/// Applies layers [0, stop) to the input; `stop` defaults to all layers.
inline Tensor forward_partial(const NetworkWeights& model, const Tensor& input,
                              std::size_t stop = static_cast<std::size_t>(-1)) {
  if (!(input.shape == model.input_shape))
    throw ShapeError("input shape " + to_string(input.shape) + " does not match model input " +
                     to_string(model.input_shape));
  stop = std::min(stop, model.layers.size());
  Tensor x = input;
  for (std::size_t i = 0; i < stop; ++i) {
    const Shape next = output_shape(model.layers[i], x.shape, i);
    x = std::visit(
        [&](const auto& l) -> Tensor {
          using T = std::decay_t<decltype(l)>;
          if constexpr (std::is_same_v<T, Conv2D>) {
            return detail::conv2d(l, x, next);
          } else if constexpr (std::is_same_v<T, Dense>) {
            return detail::dense(l, x);
          } else if constexpr (std::is_same_v<T, ReLU>) {
            Tensor y = x;
            for (auto& v : y.data) v = std::max(v, 0.0);
            return y;
          } else if constexpr (std::is_same_v<T, Flatten>) {
            return Tensor(next, x.data);
          } else {
            return Tensor(next, softmax(x.data));
          }
        },
        model.layers[i]);
  }
  return x;
}

/// Full forward pass; returns the class probabilities.
inline std::vector<double> forward(const NetworkWeights& model, const Tensor& input) {
  return forward_partial(model, input).data;
}

// -- ADLW file ----------------------------------------------------------------

inline constexpr std::array<char, 4> kMagic{'A', 'D', 'L', 'W'};
inline constexpr std::uint32_t kFormatVersion = 1;

enum class LayerTag : std::uint8_t { kConv2D = 1, kReLU = 2, kFlatten = 3, kDense = 4, kSoftmax = 5 };

namespace detail {

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void floats(const std::vector<float>& v) {
    for (float f : v) u32(std::bit_cast<std::uint32_t>(f));
  }
  const std::vector<char>& buffer() const { return buf_; }

 private:
  std::vector<char> buf_;
};

class Reader {
 public:
  explicit Reader(std::vector<unsigned char> data) : data_(std::move(data)) {}

  void need(std::size_t n) const {
    if (pos_ + n > data_.size()) throw FormatError("truncated ADLW file");
  }
  std::uint8_t u8() {
    need(1);
    return data_[pos_++];
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t{data_[pos_ + i]} << (8 * i);
    pos_ += 4;
    return v;
  }
  std::vector<float> floats(std::size_t n) {
    need(4 * n);  // also rejects absurd counts before allocating
    std::vector<float> out(n);
    for (auto& f : out) f = std::bit_cast<float>(u32());
    return out;
  }
  void magic() {
    need(4);
    if (std::memcmp(&data_[pos_], kMagic.data(), 4) != 0) throw FormatError("bad ADLW magic");
    pos_ += 4;
  }
  bool at_end() const { return pos_ == data_.size(); }

 private:
  std::vector<unsigned char> data_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<char> serialize_weights(const NetworkWeights& model) {
  detail::Writer w;
  w.bytes(kMagic.data(), kMagic.size());
  w.u32(kFormatVersion);
  w.u32(static_cast<std::uint32_t>(model.layers.size()));
  w.u32(static_cast<std::uint32_t>(model.input_shape.channels));
  w.u32(static_cast<std::uint32_t>(model.input_shape.height));
  w.u32(static_cast<std::uint32_t>(model.input_shape.width));
  for (const auto& layer : model.layers)
    std::visit(
        [&](const auto& l) {
          using T = std::decay_t<decltype(l)>;
          if constexpr (std::is_same_v<T, Conv2D>) {
            w.u8(static_cast<std::uint8_t>(LayerTag::kConv2D));
            w.u32(l.out_channels);
            w.u32(l.in_channels);
            w.u32(l.kernel_h);
            w.u32(l.kernel_w);
            w.floats(l.weights);
            w.floats(l.bias);
          } else if constexpr (std::is_same_v<T, Dense>) {
            w.u8(static_cast<std::uint8_t>(LayerTag::kDense));
            w.u32(l.out_dim);
            w.u32(l.in_dim);
            w.floats(l.weights);
            w.floats(l.bias);
          } else if constexpr (std::is_same_v<T, ReLU>) {
            w.u8(static_cast<std::uint8_t>(LayerTag::kReLU));
          } else if constexpr (std::is_same_v<T, Flatten>) {
            w.u8(static_cast<std::uint8_t>(LayerTag::kFlatten));
          } else {
            w.u8(static_cast<std::uint8_t>(LayerTag::kSoftmax));
          }
        },
        layer);
  return w.buffer();
}

/// Parses and validates an ADLW image. Throws FormatError, UnsupportedVersion
/// or ShapeError; never returns a partially read model.
inline NetworkWeights parse_weights(std::vector<unsigned char> bytes) {
  detail::Reader r(std::move(bytes));
  r.magic();
  const std::uint32_t version = r.u32();
  if (version != kFormatVersion)
    throw UnsupportedVersion("unsupported ADLW version " + std::to_string(version));
  const std::uint32_t count = r.u32();
  NetworkWeights model;
  model.input_shape = {r.u32(), r.u32(), r.u32()};
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto tag = static_cast<LayerTag>(r.u8());
    switch (tag) {
      case LayerTag::kConv2D: {
        Conv2D c;
        c.out_channels = r.u32();
        c.in_channels = r.u32();
        c.kernel_h = r.u32();
        c.kernel_w = r.u32();
        c.weights = r.floats(std::size_t{c.out_channels} * c.in_channels * c.kernel_h * c.kernel_w);
        c.bias = r.floats(c.out_channels);
        model.layers.emplace_back(std::move(c));
        break;
      }
      case LayerTag::kDense: {
        Dense d;
        d.out_dim = r.u32();
        d.in_dim = r.u32();
        d.weights = r.floats(std::size_t{d.out_dim} * d.in_dim);
        d.bias = r.floats(d.out_dim);
        model.layers.emplace_back(std::move(d));
        break;
      }
      case LayerTag::kReLU: model.layers.emplace_back(ReLU{}); break;
      case LayerTag::kFlatten: model.layers.emplace_back(Flatten{}); break;
      case LayerTag::kSoftmax: model.layers.emplace_back(Softmax{}); break;
      default:
        throw FormatError("unknown layer tag " + std::to_string(static_cast<int>(tag)) +
                          " at layer " + std::to_string(i));
    }
  }
  if (!r.at_end()) throw FormatError("trailing bytes after last ADLW layer");
  model.validate();
  return model;
}

inline void save_weights(const std::filesystem::path& path, const NetworkWeights& model) {
  model.validate();
  const auto buf = serialize_weights(model);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write weights file " + path.string());
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

inline NetworkWeights load_weights(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open weights file " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  return parse_weights(std::move(bytes));
}

// -- Manifest -------------------------------------------------------------------

/// Plain-text companion of a weights file: one `key = value` per line, `#`
/// starts a comment. Recognised keys include `input_shape` (C,H,W) and
/// `grid_L`; anything else is carried as training metadata.
using Manifest = std::map<std::string, std::string>;

inline Manifest parse_manifest(std::istream& in) {
  Manifest m;
  std::string line;
  while (std::getline(in, line)) {
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
    };
    m[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return m;
}

inline Manifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  return parse_manifest(in);
}

inline void save_manifest(const std::filesystem::path& path, const Manifest& m) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write manifest " + path.string());
  for (const auto& [k, v] : m) out << k << " = " << v << '\n';
}

// -- Reference fixtures -----------------------------------------------------------

/// One (input, expected output) pair exported by the trainer from its own
/// forward pass. JSON: {"input_shape": [C, H, W], "input": [...], "output": [...]}.
struct Fixture {
  Tensor input;
  std::vector<double> output;
};

inline Fixture load_fixture(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open fixture " + path.string());
  try {
    nlohmann::json j;
    in >> j;
    const auto dims = j.at("input_shape").get<std::vector<std::size_t>>();
    if (dims.size() != 3) throw FormatError(path.string() + ": input_shape needs three entries");
    Fixture f;
    f.input = Tensor({dims[0], dims[1], dims[2]}, j.at("input").get<std::vector<double>>());
    f.output = j.at("output").get<std::vector<double>>();
    return f;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  } catch (const ShapeError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

struct FixtureReport {
  std::size_t count = 0;
  double max_abs_error = 0.0;
  std::string worst;  // file name of the worst fixture
};

/// Runs every `*.json` fixture in `dir` (sorted by name) through `model`.
inline FixtureReport check_fixtures(const NetworkWeights& model, const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  FixtureReport r;
  for (const auto& path : files) {
    const Fixture f = load_fixture(path);
    const auto out = forward(model, f.input);
    if (out.size() != f.output.size())
      throw ShapeError(path.filename().string() + ": model emits " + std::to_string(out.size()) +
                       " values, fixture has " + std::to_string(f.output.size()));
    for (std::size_t i = 0; i < out.size(); ++i) {
      const double err = std::abs(out[i] - f.output[i]);
      if (!(err <= r.max_abs_error)) {
        r.max_abs_error = err;
        r.worst = path.filename().string();
      }
    }
    ++r.count;
  }
  return r;
}

}  // namespace adhoc::nn
