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

#include <cmath>
#include <span>
#include <string>

#include "clonalnet/clonal_labels.hpp"
#include "clonalnet/error.hpp"
#include "clonalnet/numerics.hpp"

namespace clonalnet {

struct FocusConfig {
  double alpha = 0.1;  // attention regularizer weight
  double beta = 1.0;   // entropy regularizer weight
};

struct KdConfig {
  double temperature = 2.5;
  double weight = 0.6;  // share of the softened-teacher term
};

template <std::floating_point T = double>
struct LossBreakdown {
  T l_cls = 0;
  T r_attention = 0;
  T r_entropy = 0;
  T total = 0;
  Vector<T> d;                 // softmax(z) - softmax(z_b)
  Vector<T> reweighted_probs;  // softmax(z + d)
};

namespace detail {

inline void require_same_length(std::size_t a, std::size_t b, const char* who) {
  if (a != b) {
    throw Error(ErrorCode::dimension_mismatch,
                std::string(who) + ": lengths " + std::to_string(a) + " and " + std::to_string(b));
  }
}

inline void require_index(std::size_t gt, std::size_t n, const char* who) {
  if (gt >= n) {
    throw Error(ErrorCode::invalid_argument, std::string(who) + ": class index " +
                                                 std::to_string(gt) + " out of range");
  }
}

template <std::floating_point T>
Vector<T> scaled(std::span<const T> z, T factor) {
  Vector<T> out(z.size());
  for (std::size_t n = 0; n < z.size(); ++n) out[n] = z[n] * factor;
  return out;
}

/// -sum target_n * log_probs_n, skipping zero-weight entries.
template <std::floating_point T>
T weighted_nll(std::span<const T> log_probs, std::span<const T> target) {
  T sum = 0;
  for (std::size_t n = 0; n < target.size(); ++n) {
    if (target[n] != T(0)) sum += target[n] * log_probs[n];
  }
  return -sum;
}

/// Entropy of softmax(z) from its log-probabilities.
template <std::floating_point T>
T softmax_entropy(const Vector<T>& log_probs) {
  T h = 0;
  for (T lp : log_probs) h -= std::exp(lp) * lp;
  return h;
}

}  // namespace detail

template <std::floating_point T>
T cross_entropy(std::span<const T> probs, std::span<const T> target) {
  detail::require_same_length(probs.size(), target.size(), "cross_entropy");
  T sum = 0;
  for (std::size_t n = 0; n < probs.size(); ++n) {
    if (target[n] == T(0)) continue;
    if (!(probs[n] > T(0))) {
      throw Error(ErrorCode::zero_probability,
                  "cross_entropy: zero probability at supported index " + std::to_string(n));
    }
    sum -= target[n] * std::log(probs[n]);
  }
  return sum;
}

template <std::floating_point T>
T cross_entropy(const Vector<T>& probs, const Vector<T>& target) {
  return cross_entropy(probs.span(), target.span());
}

/// Plain softmax cross-entropy against a one-hot label.
template <std::floating_point T>
T softmax_ce(std::span<const T> z, std::size_t gt_index) {
  detail::require_index(gt_index, z.size(), "softmax_ce");
  return -log_softmax(z)[gt_index];
}

template <std::floating_point T>
struct Reweighted {
  Vector<T> probs;
  Vector<T> d;
};

/// d = softmax(z) - softmax(z_b); probs = softmax(z + d).
template <std::floating_point T>
Reweighted<T> reweighted_probs(std::span<const T> z, std::span<const T> z_b) {
  detail::require_same_length(z.size(), z_b.size(), "reweighted_probs");
  const auto p = softmax(z);
  const auto q = softmax(z_b);
  Vector<T> d(z.size());
  Vector<T> shifted(z.size());
  for (std::size_t n = 0; n < z.size(); ++n) {
    d[n] = p[n] - q[n];
    shifted[n] = d[n] + z[n];
  }
  return {softmax(shifted.span()), std::move(d)};
}

/// -log softmax(d + z)[gt] with d supplied directly.
template <std::floating_point T>
T classification_loss_free_d(std::span<const T> z, std::span<const T> d, std::size_t gt_index) {
  detail::require_same_length(z.size(), d.size(), "classification_loss_free_d");
  detail::require_index(gt_index, z.size(), "classification_loss_free_d");
  Vector<T> shifted(z.size());
  for (std::size_t n = 0; n < z.size(); ++n) shifted[n] = d[n] + z[n];
  return -log_softmax(shifted.span())[gt_index];
}

/// L = L_cls + alpha * R_attention - beta * R_entropy. Only L_cls sees the
/// re-weighted distribution; both regularizers use the plain softmax.
template <std::floating_point T>
LossBreakdown<T> focusing_picking(std::span<const T> z, std::span<const T> z_b, std::size_t gt_index,
                                  const MultiWarmLabel<T>& label, const FocusConfig& cfg) {
  detail::require_same_length(z.size(), z_b.size(), "focusing_picking");
  detail::require_same_length(z.size(), label.normalized.size(), "focusing_picking label");
  detail::require_index(gt_index, z.size(), "focusing_picking");
  LossBreakdown<T> out;
  auto rw = reweighted_probs(z, z_b);
  out.l_cls = classification_loss_free_d(z, rw.d.span(), gt_index);
  const auto log_p = log_softmax(z);
  out.r_attention = detail::weighted_nll(log_p.span(), label.normalized.span());
  out.r_entropy = detail::softmax_entropy(log_p);
  out.total = out.l_cls + static_cast<T>(cfg.alpha) * out.r_attention -
              static_cast<T>(cfg.beta) * out.r_entropy;
  out.d = std::move(rw.d);
  out.reweighted_probs = std::move(rw.probs);
  return out;
}

template <std::floating_point T>
Vector<T> smoothed_target(std::size_t n_classes, std::size_t gt_index, T eps) {
  Vector<T> target(n_classes, eps / static_cast<T>(n_classes));
  target[gt_index] = (T(1) - eps) + eps / static_cast<T>(n_classes);
  return target;
}

inline void check_smoothing(double eps) {
  if (!(eps >= 0.0 && eps < 1.0)) {
    throw Error(ErrorCode::invalid_argument, "label smoothing eps must lie in [0, 1)");
  }
}

/// Cross-entropy against (1 - eps) * onehot + eps * uniform.
template <std::floating_point T>
T label_smoothing_ce(std::span<const T> z, std::size_t gt_index, double eps) {
  check_smoothing(eps);
  detail::require_index(gt_index, z.size(), "label_smoothing_ce");
  const auto target = smoothed_target<T>(z.size(), gt_index, static_cast<T>(eps));
  return detail::weighted_nll(log_softmax(z).span(), target.span());
}

inline void check_kd(const KdConfig& cfg) {
  if (!(cfg.temperature > 0.0)) throw Error(ErrorCode::invalid_argument, "KD temperature must be > 0");
  if (!(cfg.weight >= 0.0 && cfg.weight <= 1.0)) {
    throw Error(ErrorCode::invalid_argument, "KD weight must lie in [0, 1]");
  }
}

/// (1 - w) * CE(softmax(z), onehot) + w * T^2 * CE(softmax(z/T), softmax(z_teacher/T)).
template <std::floating_point T>
T kd_loss(std::span<const T> z, std::span<const T> z_teacher, std::size_t gt_index, const KdConfig& cfg) {
  check_kd(cfg);
  detail::require_same_length(z.size(), z_teacher.size(), "kd_loss");
  detail::require_index(gt_index, z.size(), "kd_loss");
  const T w = static_cast<T>(cfg.weight);
  T loss = (T(1) - w) * -log_softmax(z)[gt_index];
  if (cfg.weight > 0.0) {
    const T temp = static_cast<T>(cfg.temperature);
    const auto soft_target = softmax(detail::scaled(z_teacher, T(1) / temp).span());
    const auto log_soft = log_softmax(detail::scaled(z, T(1) / temp).span());
    loss += w * temp * temp * detail::weighted_nll(log_soft.span(), soft_target.span());
  }
  return loss;
}

}  // namespace clonalnet
