/*
 * Copyright 2026 The ClonalNet Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "clonalnet/error.hpp"
#include "clonalnet/numerics.hpp"

namespace clonalnet {

struct MlpConfig {
  std::size_t input_dim = 0;
  std::vector<std::size_t> hidden_dims;
  std::size_t n_classes = 0;
  std::uint64_t seed = 0;
};

template <std::floating_point T = double>
struct Layer {
  Matrix<T> weights;  // out x in
  Vector<T> biases;   // out

  bool operator==(const Layer&) const = default;
};

/// Multilayer perceptron parameters. Hidden layers use ReLU; the last layer
/// is the affine classifier producing logits.
template <std::floating_point T = double>
struct MlpParams {
  std::vector<Layer<T>> layers;

  std::size_t input_dim() const { return layers.front().weights.cols(); }
  std::size_t n_classes() const { return layers.back().weights.rows(); }
  std::vector<std::size_t> hidden_dims() const {
    std::vector<std::size_t> dims;
    for (std::size_t l = 0; l + 1 < layers.size(); ++l) dims.push_back(layers[l].weights.rows());
    return dims;
  }
  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.weights.size() + l.biases.size();
    return n;
  }

  bool operator==(const MlpParams&) const = default;
};

/// Forward trace. inputs[l] is the vector entering layer l (inputs[0] is x);
/// pre[l] is W_l inputs[l] + b_l. The last pre-activation is the logit vector.
template <std::floating_point T = double>
struct MlpActivations {
  std::vector<Vector<T>> inputs;
  std::vector<Vector<T>> pre;

  const Vector<T>& penultimate() const { return inputs.back(); }
  const Vector<T>& logits() const { return pre.back(); }
};

template <std::floating_point T>
void validate_shapes(const MlpParams<T>& params) {
  if (params.layers.empty()) throw Error(ErrorCode::invalid_argument, "network has no layers");
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const auto& layer = params.layers[l];
    if (layer.biases.size() != layer.weights.rows() || layer.weights.rows() == 0 ||
        layer.weights.cols() == 0) {
      throw Error(ErrorCode::dimension_mismatch,
                  "layer " + std::to_string(l) + ": weights " +
                      shape_string(layer.weights.rows(), layer.weights.cols()) + ", biases " +
                      std::to_string(layer.biases.size()));
    }
    if (l > 0 && params.layers[l - 1].weights.rows() != layer.weights.cols()) {
      throw Error(ErrorCode::dimension_mismatch,
                  "layer " + std::to_string(l) + " expects input " +
                      std::to_string(layer.weights.cols()) + ", previous layer emits " +
                      std::to_string(params.layers[l - 1].weights.rows()));
    }
  }
}

/// He-uniform weights, U(-sqrt(6/fan_in), sqrt(6/fan_in)), zero biases.
inline MlpParams<double> init(const MlpConfig& config) {
  if (config.input_dim == 0 || config.n_classes == 0) {
    throw Error(ErrorCode::invalid_argument, "input_dim and n_classes must be >= 1");
  }
  std::vector<std::size_t> dims{config.input_dim};
  for (auto h : config.hidden_dims) {
    if (h == 0) throw Error(ErrorCode::invalid_argument, "hidden layer width must be >= 1");
    dims.push_back(h);
  }
  dims.push_back(config.n_classes);

  Rng rng(config.seed);
  MlpParams<double> params;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    Layer<double> layer{Matrix<double>(dims[l + 1], dims[l]), Vector<double>(dims[l + 1])};
    const double limit = std::sqrt(6.0 / static_cast<double>(dims[l]));
    for (auto& w : layer.weights.span()) w = rng.uniform(-limit, limit);
    params.layers.push_back(std::move(layer));
  }
  return params;
}

template <std::floating_point T>
MlpActivations<T> forward(const MlpParams<T>& params, std::span<const T> x) {
  if (x.size() != params.input_dim()) {
    throw Error(ErrorCode::dimension_mismatch, "forward: input of length " +
                                                   std::to_string(x.size()) + ", network expects " +
                                                   std::to_string(params.input_dim()));
  }
  MlpActivations<T> act;
  act.inputs.reserve(params.layers.size());
  act.pre.reserve(params.layers.size());
  act.inputs.emplace_back(x);
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const auto& layer = params.layers[l];
    Vector<T> z = matvec(layer.weights, act.inputs.back().span());
    for (std::size_t i = 0; i < z.size(); ++i) z[i] += layer.biases[i];
    if (l + 1 < params.layers.size()) {
      Vector<T> a(z.size());
      for (std::size_t i = 0; i < z.size(); ++i) a[i] = z[i] > T(0) ? z[i] : T(0);
      act.inputs.push_back(std::move(a));
    }
    act.pre.push_back(std::move(z));
  }
  return act;
}

template <std::floating_point T>
MlpActivations<T> forward(const MlpParams<T>& params, const Vector<T>& x) {
  return forward(params, x.span());
}

template <std::floating_point T>
Vector<T> logits(const MlpParams<T>& params, std::span<const T> x) {
  return forward(params, x).logits();
}

/// Final-layer weights with the bias appended as an extra column: row n is
/// the category template w_n acting on the augmented feature [h; 1].
template <std::floating_point T>
Matrix<T> augmented_classifier(const MlpParams<T>& params) {
  const auto& last = params.layers.back();
  Matrix<T> out(last.weights.rows(), last.weights.cols() + 1);
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto src = last.weights.row(r);
    std::copy(src.begin(), src.end(), out.row(r).begin());
    out(r, last.weights.cols()) = last.biases[r];
  }
  return out;
}

/// Arg-max of the logits; ties go to the lowest index.
template <std::floating_point T>
std::size_t predict(const MlpParams<T>& params, std::span<const T> x) {
  const auto z = logits(params, x);
  return argmax(z.span());
}

template <std::floating_point U, std::floating_point T>
MlpParams<U> cast_params(const MlpParams<T>& params) {
  MlpParams<U> out;
  for (const auto& layer : params.layers) {
    Layer<U> l{Matrix<U>(layer.weights.rows(), layer.weights.cols()), Vector<U>(layer.biases.size())};
    for (std::size_t i = 0; i < layer.weights.size(); ++i) l.weights.data()[i] = static_cast<U>(layer.weights.data()[i]);
    for (std::size_t i = 0; i < layer.biases.size(); ++i) l.biases[i] = static_cast<U>(layer.biases[i]);
    out.layers.push_back(std::move(l));
  }
  return out;
}

// Checkpoint text format:
//   CLONAL-CKPT v1
//   <rows>x<cols> <rows>x<cols> ...      (one entry per layer)
//   weights of layer 0, one matrix row per line, then its biases, then layer 1 ...
// Values are written with 17 significant digits so they round-trip exactly.
inline constexpr const char* kCheckpointMagic = "CLONAL-CKPT v1";

inline std::string format_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string checkpoint_string(const MlpParams<double>& params) {
  std::string out = kCheckpointMagic;
  out += '\n';
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    if (l) out += ' ';
    out += shape_string(params.layers[l].weights.rows(), params.layers[l].weights.cols());
  }
  out += '\n';
  for (const auto& layer : params.layers) {
    for (std::size_t r = 0; r < layer.weights.rows(); ++r) {
      const auto row = layer.weights.row(r);
      for (std::size_t c = 0; c < row.size(); ++c) {
        if (c) out += ' ';
        out += format_real(row[c]);
      }
      out += '\n';
    }
    for (std::size_t i = 0; i < layer.biases.size(); ++i) {
      if (i) out += ' ';
      out += format_real(layer.biases[i]);
    }
    out += '\n';
  }
  return out;
}

inline MlpParams<double> parse_checkpoint(const std::string& text, const std::string& origin = "checkpoint") {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kCheckpointMagic) {
    throw Error(ErrorCode::parse, origin + ": missing '" + kCheckpointMagic + "' header");
  }
  if (!std::getline(in, line)) throw Error(ErrorCode::parse, origin + ": missing shape line");
  MlpParams<double> params;
  std::istringstream shapes(line);
  std::string token;
  while (shapes >> token) {
    std::size_t rows = 0, cols = 0;
    const auto x = token.find('x');
    const char* begin = token.data();
    const char* end = token.data() + token.size();
    if (x == std::string::npos ||
        std::from_chars(begin, begin + x, rows).ec != std::errc{} ||
        std::from_chars(begin + x + 1, end, cols).ec != std::errc{} || rows == 0 || cols == 0) {
      throw Error(ErrorCode::parse, origin + ": bad layer shape '" + token + "'");
    }
    params.layers.push_back({Matrix<double>(rows, cols), Vector<double>(rows)});
  }
  auto read_value = [&](double& v) {
    std::string tok;
    if (!(in >> tok)) throw Error(ErrorCode::truncated, origin + ": fewer values than shapes declare");
    char* endp = nullptr;
    v = std::strtod(tok.c_str(), &endp);
    if (endp != tok.c_str() + tok.size()) throw Error(ErrorCode::parse, origin + ": bad number '" + tok + "'");
  };
  for (auto& layer : params.layers) {
    for (auto& w : layer.weights.span()) read_value(w);
    for (auto& b : layer.biases) read_value(b);
  }
  std::string extra;
  if (in >> extra) throw Error(ErrorCode::parse, origin + ": trailing data after parameters");
  validate_shapes(params);
  return params;
}

inline void save_checkpoint(const MlpParams<double>& params, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::io, "cannot write " + path.string());
  out << checkpoint_string(params);
  if (!out) throw Error(ErrorCode::io, "write failed for " + path.string());
}

inline MlpParams<double> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io, "cannot open checkpoint " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_checkpoint(buf.str(), path.string());
}

/// FNV-1a over the raw bytes of every parameter in layer order.
template <std::floating_point T>
std::uint64_t params_hash(const MlpParams<T>& params) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&](std::span<const T> values) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(values.data());
    for (std::size_t i = 0; i < values.size_bytes(); ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& layer : params.layers) {
    mix(layer.weights.span());
    mix(layer.biases.span());
  }
  return h;
}

}  // namespace clonalnet
