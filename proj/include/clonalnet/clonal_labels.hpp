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

#include <cstdint>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "clonalnet/dataio.hpp"
#include "clonalnet/error.hpp"
#include "clonalnet/model.hpp"
#include "clonalnet/numerics.hpp"

namespace clonalnet {

/// Confusing-category label for one example: the categories the baseline
/// scores strictly positively, plus the ground truth, weighted uniformly.
template <std::floating_point T = double>
struct MultiWarmLabel {
  std::vector<std::uint8_t> raw_positive;  // 1 where the baseline logit is > 0
  std::vector<std::uint8_t> clipped;       // raw_positive with the ground truth forced on
  Vector<T> normalized;                    // clipped / support_size
  std::size_t support_size = 0;

  bool operator==(const MultiWarmLabel&) const = default;
};

namespace detail {

template <std::floating_point T>
MultiWarmLabel<T> finish_label(std::vector<std::uint8_t> raw, std::size_t gt_index) {
  MultiWarmLabel<T> label;
  label.clipped = raw;
  label.clipped[gt_index] = 1;
  for (auto v : label.clipped) label.support_size += v;
  label.normalized = Vector<T>(raw.size());
  const T weight = T(1) / static_cast<T>(label.support_size);
  for (std::size_t n = 0; n < raw.size(); ++n) {
    if (label.clipped[n]) label.normalized[n] = weight;
  }
  label.raw_positive = std::move(raw);
  return label;
}

inline void check_gt(std::size_t gt_index, std::size_t n_classes) {
  if (gt_index >= n_classes) {
    throw Error(ErrorCode::invalid_argument, "ground-truth index " + std::to_string(gt_index) +
                                                 " out of range for " +
                                                 std::to_string(n_classes) + " classes");
  }
}

}  // namespace detail

template <std::floating_point T>
MultiWarmLabel<T> multi_warm(std::span<const T> baseline_logits, std::size_t gt_index) {
  detail::check_gt(gt_index, baseline_logits.size());
  std::vector<std::uint8_t> raw(baseline_logits.size());
  for (std::size_t n = 0; n < raw.size(); ++n) raw[n] = baseline_logits[n] > T(0) ? 1 : 0;
  return detail::finish_label<T>(std::move(raw), gt_index);
}

template <std::floating_point T>
MultiWarmLabel<T> multi_warm(const Vector<T>& baseline_logits, std::size_t gt_index) {
  return multi_warm(baseline_logits.span(), gt_index);
}

/// Same label computed from the sign of the cosine between each augmented
/// classifier row and the augmented penultimate activation [h; 1].
template <std::floating_point T>
MultiWarmLabel<T> multi_warm_via_cosine(const MlpParams<T>& baseline, std::span<const T> x,
                                        std::size_t gt_index) {
  detail::check_gt(gt_index, baseline.n_classes());
  const auto act = forward(baseline, x);
  const auto& h = act.penultimate();
  std::vector<T> h_aug(h.begin(), h.end());
  h_aug.push_back(T(1));
  const auto templates = augmented_classifier(baseline);
  std::vector<std::uint8_t> raw(templates.rows());
  for (std::size_t n = 0; n < templates.rows(); ++n) {
    try {
      raw[n] = cosine_similarity(templates.row(n), std::span<const T>(h_aug)) > T(0) ? 1 : 0;
    } catch (const Error& e) {
      throw Error(e.code(), "classifier row " + std::to_string(n) +
                                " has zero magnitude; degenerate baseline network");
    }
  }
  return detail::finish_label<T>(std::move(raw), gt_index);
}

struct LabelStats {
  std::size_t n_classes = 0;
  // histogram[c][s - 1] counts class-c examples whose support size is s.
  std::vector<std::vector<std::size_t>> histogram;
  std::vector<std::size_t> class_count;
  // cooccurrence[c][k]: fraction of class-c examples whose support contains k.
  std::vector<std::vector<double>> cooccurrence;
  double mean_support = 0.0;
  double frac_multi = 0.0;

  double class_mean_support(std::size_t c) const {
    if (class_count[c] == 0) return 0.0;
    double sum = 0.0;
    for (std::size_t s = 0; s < n_classes; ++s) sum += static_cast<double>((s + 1) * histogram[c][s]);
    return sum / static_cast<double>(class_count[c]);
  }
  double class_frac_multi(std::size_t c) const {
    if (class_count[c] == 0) return 0.0;
    return 1.0 - static_cast<double>(histogram[c][0]) / static_cast<double>(class_count[c]);
  }
};

inline LabelStats label_stats(const Dataset& dataset, const MlpParams<double>& baseline) {
  if (baseline.input_dim() != dataset.feature_dim() || baseline.n_classes() != dataset.n_classes) {
    throw Error(ErrorCode::dimension_mismatch, "baseline shape does not match dataset");
  }
  const std::size_t n = dataset.n_classes;
  LabelStats stats;
  stats.n_classes = n;
  stats.histogram.assign(n, std::vector<std::size_t>(n, 0));
  stats.class_count.assign(n, 0);
  std::vector<std::vector<std::size_t>> co(n, std::vector<std::size_t>(n, 0));
  std::size_t total_support = 0, multi = 0;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const auto y = dataset.y(i);
    const auto label = multi_warm(logits(baseline, dataset.x(i)).span(), y);
    ++stats.class_count[y];
    ++stats.histogram[y][label.support_size - 1];
    for (std::size_t k = 0; k < n; ++k) co[y][k] += label.clipped[k];
    total_support += label.support_size;
    multi += label.support_size > 1;
  }
  stats.cooccurrence.assign(n, std::vector<double>(n, 0.0));
  for (std::size_t c = 0; c < n; ++c) {
    for (std::size_t k = 0; k < n; ++k) {
      if (stats.class_count[c]) {
        stats.cooccurrence[c][k] = static_cast<double>(co[c][k]) / static_cast<double>(stats.class_count[c]);
      }
    }
  }
  if (dataset.size()) {
    stats.mean_support = static_cast<double>(total_support) / static_cast<double>(dataset.size());
    stats.frac_multi = static_cast<double>(multi) / static_cast<double>(dataset.size());
  }
  return stats;
}

struct PairRates {
  double partner = 0.0;
  double non_partner = 0.0;
};

/// Co-occurrence rates for datasets built from confusable pairs (2i, 2i+1).
inline PairRates pair_cooccurrence(const LabelStats& stats) {
  PairRates r;
  std::size_t n_partner = 0, n_other = 0;
  for (std::size_t c = 0; c < stats.n_classes; ++c) {
    for (std::size_t k = 0; k < stats.n_classes; ++k) {
      if (k == c) continue;
      if (k == (c ^ 1U)) {
        r.partner += stats.cooccurrence[c][k];
        ++n_partner;
      } else {
        r.non_partner += stats.cooccurrence[c][k];
        ++n_other;
      }
    }
  }
  if (n_partner) r.partner /= static_cast<double>(n_partner);
  if (n_other) r.non_partner /= static_cast<double>(n_other);
  return r;
}

/// CSV: class_index,mean_support,frac_multi,hist_1..hist_N, then an "all" row.
inline void write_label_stats_csv(std::ostream& out, const LabelStats& stats) {
  out << "class_index,mean_support,frac_multi";
  for (std::size_t s = 1; s <= stats.n_classes; ++s) out << ",hist_" << s;
  out << '\n';
  std::vector<std::size_t> overall(stats.n_classes, 0);
  for (std::size_t c = 0; c < stats.n_classes; ++c) {
    out << c << ',' << format_real(stats.class_mean_support(c)) << ','
        << format_real(stats.class_frac_multi(c));
    for (std::size_t s = 0; s < stats.n_classes; ++s) {
      out << ',' << stats.histogram[c][s];
      overall[s] += stats.histogram[c][s];
    }
    out << '\n';
  }
  out << "all," << format_real(stats.mean_support) << ',' << format_real(stats.frac_multi);
  for (auto v : overall) out << ',' << v;
  out << '\n';
}

}  // namespace clonalnet
