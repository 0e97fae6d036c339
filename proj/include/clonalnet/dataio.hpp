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

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <vector>

#include "clonalnet/error.hpp"
#include "clonalnet/numerics.hpp"

namespace clonalnet {

/// Labelled examples stored as one feature row per example.
struct Dataset {
  Matrix<double> features;  // examples x feature_dim
  std::vector<std::size_t> labels;
  std::size_t n_classes = 0;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t feature_dim() const noexcept { return features.cols(); }
  std::span<const double> x(std::size_t i) const { return features.row(i); }
  std::size_t y(std::size_t i) const { return labels[i]; }

  std::vector<std::size_t> class_counts() const {
    std::vector<std::size_t> counts(n_classes, 0);
    for (auto y : labels) ++counts[y];
    return counts;
  }

  Dataset subset(std::span<const std::size_t> indices) const {
    Dataset out;
    out.n_classes = n_classes;
    out.features = Matrix<double>(indices.size(), feature_dim());
    out.labels.reserve(indices.size());
    for (std::size_t k = 0; k < indices.size(); ++k) {
      const auto src = x(indices[k]);
      std::copy(src.begin(), src.end(), out.features.row(k).begin());
      out.labels.push_back(labels[indices[k]]);
    }
    return out;
  }

  bool operator==(const Dataset&) const = default;
};

namespace idx {

inline constexpr std::uint32_t kImageMagic = 2051;
inline constexpr std::uint32_t kLabelMagic = 2049;

inline std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::uint32_t read_be32(std::span<const unsigned char> bytes, std::size_t offset,
                               const std::filesystem::path& path) {
  if (offset + 4 > bytes.size()) {
    throw Error(ErrorCode::truncated, path.string() + ": header truncated");
  }
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

}  // namespace idx

/// Reads an IDX image/label file pair (MNIST layout). Pixels are scaled to
/// [0, 1]; n_classes is one more than the largest label present.
inline Dataset load_idx(const std::filesystem::path& images_path,
                        const std::filesystem::path& labels_path) {
  const auto img = idx::read_file(images_path);
  const auto lbl = idx::read_file(labels_path);

  const auto img_magic = idx::read_be32(img, 0, images_path);
  if (img_magic != idx::kImageMagic) {
    throw Error(ErrorCode::bad_magic, images_path.string() + ": image magic " +
                                          std::to_string(img_magic) + ", expected 2051");
  }
  const auto lbl_magic = idx::read_be32(lbl, 0, labels_path);
  if (lbl_magic != idx::kLabelMagic) {
    throw Error(ErrorCode::bad_magic, labels_path.string() + ": label magic " +
                                          std::to_string(lbl_magic) + ", expected 2049");
  }

  const std::size_t n_images = idx::read_be32(img, 4, images_path);
  const std::size_t rows = idx::read_be32(img, 8, images_path);
  const std::size_t cols = idx::read_be32(img, 12, images_path);
  const std::size_t n_labels = idx::read_be32(lbl, 4, labels_path);

  if (n_images != n_labels) {
    throw Error(ErrorCode::count_mismatch, "image file has " + std::to_string(n_images) +
                                               " entries, label file has " +
                                               std::to_string(n_labels));
  }
  if (n_images == 0) {
    throw Error(ErrorCode::empty_dataset, images_path.string() + ": zero examples");
  }
  const std::size_t dim = rows * cols;
  if (dim == 0) throw Error(ErrorCode::empty_dataset, images_path.string() + ": zero-size images");
  if (img.size() < 16 + n_images * dim) {
    throw Error(ErrorCode::truncated, images_path.string() + ": expected " +
                                          std::to_string(n_images * dim) + " pixel bytes");
  }
  if (lbl.size() < 8 + n_labels) {
    throw Error(ErrorCode::truncated, labels_path.string() + ": expected " +
                                          std::to_string(n_labels) + " label bytes");
  }

  Dataset ds;
  ds.features = Matrix<double>(n_images, dim);
  const unsigned char* px = img.data() + 16;
  double* out = ds.features.data();
  for (std::size_t i = 0; i < n_images * dim; ++i) out[i] = static_cast<double>(px[i]) / 255.0;
  ds.labels.assign(lbl.begin() + 8, lbl.begin() + 8 + static_cast<std::ptrdiff_t>(n_labels));
  ds.n_classes = *std::max_element(ds.labels.begin(), ds.labels.end()) + 1;
  return ds;
}

struct SyntheticSpec {
  std::size_t n_pairs = 3;
  double pair_overlap = 0.7;
  std::size_t dim = 10;
  std::size_t per_class = 500;
  std::uint64_t seed = 0;
};

/// Gaussian clusters arranged as confusable pairs. Classes 2i and 2i+1 form
/// pair i; their means sit on either side of the pair centre along a random
/// axis, at half-distance (1 - pair_overlap) * (R + 0.5) where R = sqrt(dim) + 3
/// bounds the noise norm (samples beyond R are redrawn). At zero overlap every
/// point is strictly closer to its own class mean than to any other.
inline Dataset generate_synthetic(const SyntheticSpec& spec) {
  if (spec.n_pairs == 0 || spec.dim == 0 || spec.per_class == 0) {
    throw Error(ErrorCode::invalid_argument, "synthetic spec needs n_pairs, dim, per_class >= 1");
  }
  if (!(spec.pair_overlap >= 0.0 && spec.pair_overlap < 1.0)) {
    throw Error(ErrorCode::invalid_argument, "pair_overlap must lie in [0, 1)");
  }
  Rng rng(spec.seed);
  const std::size_t n_classes = 2 * spec.n_pairs;
  const double radius = std::sqrt(static_cast<double>(spec.dim)) + 3.0;
  const double half_gap = (1.0 - spec.pair_overlap) * (radius + 0.5);
  const double spacing = 3.0 * (2.0 * radius + 1.0);

  auto random_unit = [&] {
    std::vector<double> u(spec.dim);
    double norm = 0.0;
    while (norm == 0.0) {
      for (auto& v : u) v = rng.normal();
      norm = std::sqrt(dot<double>(u, u));
    }
    for (auto& v : u) v /= norm;
    return u;
  };

  std::vector<std::vector<double>> means;
  for (std::size_t p = 0; p < spec.n_pairs; ++p) {
    std::vector<double> center(spec.dim, 0.0);
    center[p % spec.dim] = spacing * static_cast<double>(p / spec.dim + 1);
    const auto axis = random_unit();
    for (double sign : {-1.0, 1.0}) {
      std::vector<double> m(spec.dim);
      for (std::size_t j = 0; j < spec.dim; ++j) m[j] = center[j] + sign * half_gap * axis[j];
      means.push_back(std::move(m));
    }
  }

  Dataset ds;
  ds.n_classes = n_classes;
  ds.features = Matrix<double>(n_classes * spec.per_class, spec.dim);
  ds.labels.reserve(n_classes * spec.per_class);
  std::vector<double> noise(spec.dim);
  std::size_t row = 0;
  for (std::size_t c = 0; c < n_classes; ++c) {
    for (std::size_t k = 0; k < spec.per_class; ++k, ++row) {
      do {
        for (auto& v : noise) v = rng.normal();
      } while (std::sqrt(dot<double>(noise, noise)) > radius);
      auto out = ds.features.row(row);
      for (std::size_t j = 0; j < spec.dim; ++j) out[j] = means[c][j] + noise[j];
      ds.labels.push_back(c);
    }
  }
  return ds;
}

struct CenteredSplits {
  Dataset train;
  std::vector<Dataset> others;
  Vector<double> mean;
};

inline void subtract_mean(Dataset& ds, std::span<const double> mean) {
  if (ds.feature_dim() != mean.size()) {
    throw Error(ErrorCode::dimension_mismatch, "feature_dim " + std::to_string(ds.feature_dim()) +
                                                   " vs mean of length " +
                                                   std::to_string(mean.size()));
  }
  for (std::size_t i = 0; i < ds.size(); ++i) {
    auto row = ds.features.row(i);
    for (std::size_t j = 0; j < row.size(); ++j) row[j] -= mean[j];
  }
}

/// Per-feature mean of `train`, subtracted from every split.
inline CenteredSplits mean_center(Dataset train, std::vector<Dataset> others) {
  for (const auto& o : others) {
    if (o.feature_dim() != train.feature_dim()) {
      throw Error(ErrorCode::dimension_mismatch,
                  "mean_center: train feature_dim " + std::to_string(train.feature_dim()) +
                      " vs " + std::to_string(o.feature_dim()));
    }
  }
  if (train.size() == 0) throw Error(ErrorCode::empty_dataset, "mean_center: empty train split");
  Vector<double> mean(train.feature_dim());
  for (std::size_t i = 0; i < train.size(); ++i) {
    const auto row = train.x(i);
    for (std::size_t j = 0; j < row.size(); ++j) mean[j] += row[j];
  }
  for (auto& m : mean) m /= static_cast<double>(train.size());
  subtract_mean(train, mean.span());
  for (auto& o : others) subtract_mean(o, mean.span());
  return {std::move(train), std::move(others), std::move(mean)};
}

/// Shuffle-then-split. Shuffled examples are interleaved round-robin by class
/// and the holdout takes the first round(M * fraction) of that order, so every
/// class with enough examples lands in both parts. Each part keeps the input's
/// relative order.
inline std::pair<Dataset, Dataset> split(const Dataset& ds, double holdout_fraction,
                                         std::uint64_t seed) {
  if (!(holdout_fraction > 0.0 && holdout_fraction < 1.0)) {
    throw Error(ErrorCode::invalid_argument, "holdout_fraction must lie in (0, 1)");
  }
  const std::size_t m = ds.size();
  std::vector<std::size_t> order(m);
  for (std::size_t i = 0; i < m; ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order.begin(), order.end());

  std::vector<std::vector<std::size_t>> by_class(ds.n_classes);
  for (auto i : order) by_class[ds.y(i)].push_back(i);
  std::vector<std::size_t> interleaved;
  interleaved.reserve(m);
  for (std::size_t round = 0; interleaved.size() < m; ++round) {
    for (const auto& members : by_class) {
      if (round < members.size()) interleaved.push_back(members[round]);
    }
  }

  auto k = static_cast<std::size_t>(std::llround(static_cast<double>(m) * holdout_fraction));
  if (m >= 2) k = std::clamp<std::size_t>(k, 1, m - 1);
  std::vector<std::size_t> holdout(interleaved.begin(), interleaved.begin() + static_cast<std::ptrdiff_t>(k));
  std::vector<std::size_t> keep(interleaved.begin() + static_cast<std::ptrdiff_t>(k), interleaved.end());
  std::sort(holdout.begin(), holdout.end());
  std::sort(keep.begin(), keep.end());
  return {ds.subset(keep), ds.subset(holdout)};
}

}  // namespace clonalnet
