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
#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "clonalnet/clonal_labels.hpp"
#include "clonalnet/dataio.hpp"
#include "clonalnet/error.hpp"
#include "clonalnet/losses.hpp"
#include "clonalnet/model.hpp"
#include "clonalnet/numerics.hpp"

namespace clonalnet {

enum class LossKind { baseline_ce, focusing_picking, label_smoothing, kd };

constexpr std::string_view loss_name(LossKind kind) {
  switch (kind) {
    case LossKind::baseline_ce: return "baseline_ce";
    case LossKind::focusing_picking: return "focusing_picking";
    case LossKind::label_smoothing: return "label_smoothing";
    case LossKind::kd: return "kd";
  }
  return "unknown";
}

inline LossKind parse_loss_kind(std::string_view name) {
  for (auto k : {LossKind::baseline_ce, LossKind::focusing_picking, LossKind::label_smoothing,
                 LossKind::kd}) {
    if (loss_name(k) == name) return k;
  }
  throw Error(ErrorCode::usage, "unknown loss '" + std::string(name) + "'");
}

constexpr bool needs_aux(LossKind kind) {
  return kind == LossKind::focusing_picking || kind == LossKind::kd;
}

struct LossSettings {
  LossKind kind = LossKind::baseline_ce;
  FocusConfig focus;
  KdConfig kd;
  double ls_eps = 0.1;
  // Treat d as a constant in the classification term (stop-gradient ablation).
  bool detach_d = false;
};

/// Per-example loss value, its focusing-picking components (zero for the
/// other losses, except l_cls which then holds the loss itself) and dL/dz.
template <std::floating_point T>
struct LogitTerms {
  T loss = 0;
  T l_cls = 0;
  T r_attention = 0;
  T r_entropy = 0;
  Vector<T> grad;
};

/// Gradients of the three focusing-picking components with respect to z.
template <std::floating_point T>
struct FocusGradients {
  LossBreakdown<T> values;
  Vector<T> cls;
  Vector<T> attention;
  Vector<T> entropy;
};

template <std::floating_point T>
FocusGradients<T> focusing_picking_gradients(std::span<const T> z, std::span<const T> z_b,
                                             std::size_t gt, const MultiWarmLabel<T>& label,
                                             const FocusConfig& cfg, bool detach_d) {
  FocusGradients<T> out;
  out.values = focusing_picking(z, z_b, gt, label, cfg);
  const std::size_t n = z.size();
  const auto p = softmax(z);
  const auto log_p = log_softmax(z);

  // Upstream gradient at u = z + d, then through d = softmax(z) - const.
  Vector<T> g_u(n);
  for (std::size_t k = 0; k < n; ++k) g_u[k] = out.values.reweighted_probs[k];
  g_u[gt] -= T(1);
  out.cls = g_u;
  if (!detach_d) {
    const T pg = dot(p.span(), g_u.span());
    for (std::size_t k = 0; k < n; ++k) out.cls[k] += p[k] * (g_u[k] - pg);
  }

  out.attention = Vector<T>(n);
  for (std::size_t k = 0; k < n; ++k) out.attention[k] = p[k] - label.normalized[k];

  out.entropy = Vector<T>(n);
  const T h = out.values.r_entropy;
  for (std::size_t k = 0; k < n; ++k) out.entropy[k] = -p[k] * (log_p[k] + h);
  return out;
}

/// Loss and dL/dz for one example. `aux_logits` holds the frozen baseline
/// (focusing-picking) or teacher (kd) logits and is ignored otherwise.
template <std::floating_point T>
LogitTerms<T> logit_terms(const LossSettings& s, std::span<const T> z,
                          std::span<const T> aux_logits, std::size_t gt) {
  const std::size_t n = z.size();
  detail::require_index(gt, n, "logit_terms");
  LogitTerms<T> out;
  switch (s.kind) {
    case LossKind::baseline_ce: {
      out.grad = softmax(z);
      out.grad[gt] -= T(1);
      out.loss = out.l_cls = -log_softmax(z)[gt];
      break;
    }
    case LossKind::label_smoothing: {
      check_smoothing(s.ls_eps);
      const auto target = smoothed_target<T>(n, gt, static_cast<T>(s.ls_eps));
      out.grad = softmax(z);
      for (std::size_t k = 0; k < n; ++k) out.grad[k] -= target[k];
      out.loss = out.l_cls = detail::weighted_nll(log_softmax(z).span(), target.span());
      break;
    }
    case LossKind::kd: {
      check_kd(s.kd);
      detail::require_same_length(n, aux_logits.size(), "kd teacher logits");
      const T w = static_cast<T>(s.kd.weight);
      const auto p = softmax(z);
      out.grad = Vector<T>(n);
      for (std::size_t k = 0; k < n; ++k) out.grad[k] = (T(1) - w) * (p[k] - (k == gt ? T(1) : T(0)));
      if (s.kd.weight > 0.0) {
        const T temp = static_cast<T>(s.kd.temperature);
        const auto ps = softmax(detail::scaled(z, T(1) / temp).span());
        const auto qs = softmax(detail::scaled(aux_logits, T(1) / temp).span());
        for (std::size_t k = 0; k < n; ++k) out.grad[k] += w * temp * (ps[k] - qs[k]);
      }
      out.loss = out.l_cls = kd_loss(z, aux_logits, gt, s.kd);
      break;
    }
    case LossKind::focusing_picking: {
      detail::require_same_length(n, aux_logits.size(), "baseline logits");
      const auto label = multi_warm(aux_logits, gt);
      auto fg = focusing_picking_gradients(z, aux_logits, gt, label, s.focus, s.detach_d);
      const T alpha = static_cast<T>(s.focus.alpha);
      const T beta = static_cast<T>(s.focus.beta);
      out.grad = std::move(fg.cls);
      for (std::size_t k = 0; k < n; ++k) {
        out.grad[k] = out.grad[k] + alpha * fg.attention[k] - beta * fg.entropy[k];
      }
      out.loss = fg.values.total;
      out.l_cls = fg.values.l_cls;
      out.r_attention = fg.values.r_attention;
      out.r_entropy = fg.values.r_entropy;
      break;
    }
  }
  return out;
}

/// Gradient of the mean batch loss with respect to the student parameters.
/// Sums of the per-example loss terms are kept for metric logging.
template <std::floating_point T = double>
struct GradBundle {
  MlpParams<T> grads;
  T loss_value = 0;  // mean over the batch
  T sum_loss = 0;
  T sum_l_cls = 0;
  T sum_r_attention = 0;
  T sum_r_entropy = 0;
  std::size_t n_correct = 0;
  std::size_t batch_size = 0;
};

template <std::floating_point T>
MlpParams<T> zeros_like(const MlpParams<T>& params) {
  MlpParams<T> z;
  for (const auto& l : params.layers) {
    z.layers.push_back({Matrix<T>(l.weights.rows(), l.weights.cols()), Vector<T>(l.biases.size())});
  }
  return z;
}

/// Example features converted to the working precision.
template <std::floating_point T>
Vector<T> example_input(const Dataset& data, std::size_t i) {
  const auto x = data.x(i);
  Vector<T> out(x.size());
  for (std::size_t j = 0; j < x.size(); ++j) out[j] = static_cast<T>(x[j]);
  return out;
}

/// Backpropagates per-example logit gradients produced by `terms(z, x, y)`
/// through the network, in index order, and averages over the batch.
template <std::floating_point T, typename TermsFn>
GradBundle<T> accumulate_gradients(const MlpParams<T>& params, const Dataset& data,
                                   std::span<const std::size_t> indices, TermsFn&& terms) {
  GradBundle<T> out;
  out.grads = zeros_like(params);
  out.batch_size = indices.size();
  const std::size_t n_layers = params.layers.size();
  for (auto i : indices) {
    const auto x = example_input<T>(data, i);
    const auto act = forward(params, x.span());
    const auto& z = act.logits();
    LogitTerms<T> t = terms(z.span(), x.span(), data.y(i));
    out.sum_loss += t.loss;
    out.sum_l_cls += t.l_cls;
    out.sum_r_attention += t.r_attention;
    out.sum_r_entropy += t.r_entropy;
    out.n_correct += argmax(z.span()) == data.y(i);

    Vector<T> delta = std::move(t.grad);
    for (std::size_t l = n_layers; l-- > 0;) {
      auto& g = out.grads.layers[l];
      const auto& in = act.inputs[l];
      for (std::size_t r = 0; r < delta.size(); ++r) {
        const T dr = delta[r];
        g.biases[r] += dr;
        if (dr == T(0)) continue;
        auto grow = g.weights.row(r);
        for (std::size_t c = 0; c < in.size(); ++c) grow[c] += dr * in[c];
      }
      if (l == 0) break;
      const auto& w = params.layers[l].weights;
      Vector<T> prev(w.cols());
      for (std::size_t r = 0; r < w.rows(); ++r) {
        const T dr = delta[r];
        if (dr == T(0)) continue;
        const auto wrow = w.row(r);
        for (std::size_t c = 0; c < prev.size(); ++c) prev[c] += dr * wrow[c];
      }
      // ReLU derivative, taken as 0 at the kink.
      const auto& pre = act.pre[l - 1];
      for (std::size_t c = 0; c < prev.size(); ++c) {
        if (!(pre[c] > T(0))) prev[c] = T(0);
      }
      delta = std::move(prev);
    }
  }
  if (!indices.empty()) {
    const T scale = T(1) / static_cast<T>(indices.size());
    for (auto& l : out.grads.layers) {
      for (auto& w : l.weights.span()) w *= scale;
      for (auto& b : l.biases) b *= scale;
    }
    out.loss_value = out.sum_loss * scale;
  }
  return out;
}

inline void require_aux(const LossSettings& s, bool have_aux) {
  if (needs_aux(s.kind) && !have_aux) {
    throw Error(s.kind == LossKind::kd ? ErrorCode::missing_teacher : ErrorCode::missing_baseline,
                std::string(loss_name(s.kind)) + " needs frozen " +
                    (s.kind == LossKind::kd ? "teacher" : "baseline") + " parameters");
  }
}

/// Analytic gradient of the mean batch loss. `aux` is the frozen baseline
/// (focusing_picking) or teacher (kd); it is read, never differentiated.
template <std::floating_point T>
GradBundle<T> backward(const MlpParams<T>& params, const Dataset& data,
                       std::span<const std::size_t> indices, const LossSettings& settings,
                       const MlpParams<T>* aux = nullptr) {
  require_aux(settings, aux != nullptr);
  return accumulate_gradients(params, data, indices,
                              [&](std::span<const T> z, std::span<const T> x, std::size_t y) {
                                if (needs_aux(settings.kind)) {
                                  const auto z_aux = logits(*aux, x);
                                  return logit_terms(settings, z, z_aux.span(), y);
                                }
                                return logit_terms(settings, z, std::span<const T>{}, y);
                              });
}

/// Mean batch loss only.
template <std::floating_point T>
T batch_loss(const MlpParams<T>& params, const Dataset& data, std::span<const std::size_t> indices,
             const LossSettings& settings, const MlpParams<T>* aux = nullptr) {
  require_aux(settings, aux != nullptr);
  T sum = 0;
  for (auto i : indices) {
    const auto x = example_input<T>(data, i);
    const auto z = logits(params, x.span());
    if (needs_aux(settings.kind)) {
      const auto z_aux = logits(*aux, x.span());
      sum += logit_terms(settings, z.span(), z_aux.span(), data.y(i)).loss;
    } else {
      sum += logit_terms(settings, z.span(), std::span<const T>{}, data.y(i)).loss;
    }
  }
  return indices.empty() ? T(0) : sum / static_cast<T>(indices.size());
}

struct ParamCoord {
  std::size_t layer = 0;
  std::size_t row = 0;
  std::size_t col = 0;  // == weights.cols() addresses the bias of `row`
};

struct FdReport {
  double max_rel_error = 0.0;
  ParamCoord worst;
  std::size_t n_checked = 0;
  std::size_t n_skipped = 0;
  double step = 0.0;
};

template <std::floating_point T>
T& coord_ref(MlpParams<T>& p, const ParamCoord& c) {
  auto& layer = p.layers[c.layer];
  return c.col == layer.weights.cols() ? layer.biases[c.row] : layer.weights(c.row, c.col);
}

template <std::floating_point T>
const T& coord_ref(const MlpParams<T>& p, const ParamCoord& c) {
  const auto& layer = p.layers[c.layer];
  return c.col == layer.weights.cols() ? layer.biases[c.row] : layer.weights(c.row, c.col);
}

template <std::floating_point T>
std::vector<ParamCoord> all_coords(const MlpParams<T>& p) {
  std::vector<ParamCoord> coords;
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    const auto& w = p.layers[l].weights;
    for (std::size_t r = 0; r < w.rows(); ++r) {
      for (std::size_t c = 0; c <= w.cols(); ++c) coords.push_back({l, r, c});
    }
  }
  return coords;
}

using ExtendedParams = MlpParams<long double>;
using ExtendedLossFn = std::function<long double(const ExtendedParams&)>;
// Returns true when the perturbation from `base` to `moved` should not be
// trusted (for example, it crosses a ReLU kink).
using SkipFn = std::function<bool(const ExtendedParams& base, const ExtendedParams& plus,
                                  const ExtendedParams& minus)>;

/// Central-difference check of `analytic` against `loss`, evaluated in
/// extended precision on up to `n_coords` coordinates drawn without
/// replacement. Relative error is |a - f| / max(|a|, |f|, 1e-8).
inline FdReport fd_check_function(const MlpParams<double>& params, const MlpParams<double>& analytic,
                                  const ExtendedLossFn& loss, std::size_t n_coords, double step,
                                  std::uint64_t seed, const SkipFn& skip = {}) {
  if (!(step > 0.0)) throw Error(ErrorCode::invalid_argument, "fd step must be > 0");
  FdReport report;
  report.step = step;
  auto coords = all_coords(params);
  Rng rng(seed);
  rng.shuffle(coords.begin(), coords.end());
  const auto base = cast_params<long double>(params);
  const long double h = step;
  for (const auto& c : coords) {
    if (report.n_checked >= n_coords) break;
    auto plus = base;
    auto minus = base;
    coord_ref(plus, c) += h;
    coord_ref(minus, c) -= h;
    if (skip && skip(base, plus, minus)) {
      ++report.n_skipped;
      continue;
    }
    const long double fd = (loss(plus) - loss(minus)) / (2.0L * h);
    const double f = static_cast<double>(fd);
    const double a = coord_ref(analytic, c);
    const double rel = std::abs(a - f) / std::max({std::abs(a), std::abs(f), 1e-8});
    if (report.n_checked == 0 || rel > report.max_rel_error) {
      report.max_rel_error = rel;
      report.worst = c;
    }
    ++report.n_checked;
  }
  return report;
}

/// True if moving from `base` to either perturbed network flips any hidden
/// ReLU, or changes a hidden pre-activation that sits within 1e-4 of zero.
inline bool crosses_relu_kink(const ExtendedParams& base, const ExtendedParams& plus,
                              const ExtendedParams& minus, const Dataset& data,
                              std::span<const std::size_t> indices) {
  for (auto i : indices) {
    const auto x = example_input<long double>(data, i);
    const auto a0 = forward(base, x.span());
    for (const auto* moved : {&plus, &minus}) {
      const auto a1 = forward(*moved, x.span());
      for (std::size_t l = 0; l + 1 < a0.pre.size(); ++l) {
        for (std::size_t k = 0; k < a0.pre[l].size(); ++k) {
          const long double p0 = a0.pre[l][k];
          const long double p1 = a1.pre[l][k];
          if ((p0 > 0) != (p1 > 0)) return true;
          if (p0 != p1 && std::abs(p0) < 1e-4L) return true;
        }
      }
    }
  }
  return false;
}

/// Finite-difference verification of `backward` for an MLP loss.
inline FdReport fd_check(const MlpParams<double>& params, const Dataset& data,
                         std::span<const std::size_t> indices, const LossSettings& settings,
                         const MlpParams<double>* aux, std::size_t n_coords, double step,
                         std::uint64_t seed) {
  const auto analytic = backward(params, data, indices, settings, aux);
  std::optional<ExtendedParams> aux_ext;
  if (aux) aux_ext = cast_params<long double>(*aux);
  ExtendedLossFn loss = [&](const ExtendedParams& p) {
    return batch_loss(p, data, indices, settings, aux_ext ? &*aux_ext : nullptr);
  };
  if (settings.kind == LossKind::focusing_picking && settings.detach_d) {
    // Stop-gradient objective: d is pinned at its value for the unperturbed
    // parameters, so the check differentiates only the explicit z path.
    const auto base = cast_params<long double>(params);
    std::vector<Vector<long double>> frozen_d, z_aux;
    for (auto i : indices) {
      const auto x = example_input<long double>(data, i);
      z_aux.push_back(logits(*aux_ext, x.span()));
      const auto z = logits(base, x.span());
      frozen_d.push_back(reweighted_probs(z.span(), z_aux.back().span()).d);
    }
    loss = [&settings, &data, indices, frozen_d, z_aux](const ExtendedParams& p) {
      long double sum = 0;
      for (std::size_t b = 0; b < indices.size(); ++b) {
        const auto x = example_input<long double>(data, indices[b]);
        const auto z = logits(p, x.span());
        const auto gt = data.y(indices[b]);
        const auto fp = focusing_picking(z.span(), z_aux[b].span(), gt, multi_warm(z_aux[b], gt), settings.focus);
        sum += classification_loss_free_d(z.span(), frozen_d[b].span(), gt) +
               static_cast<long double>(settings.focus.alpha) * fp.r_attention -
               static_cast<long double>(settings.focus.beta) * fp.r_entropy;
      }
      return indices.empty() ? 0.0L : sum / static_cast<long double>(indices.size());
    };
  }
  const SkipFn skip = [&](const ExtendedParams& b, const ExtendedParams& p, const ExtendedParams& m) {
    return crosses_relu_kink(b, p, m, data, indices);
  };
  return fd_check_function(params, analytic.grads, loss, n_coords, step, seed, skip);
}

/// CSV row: loss_kind,max_rel_error,n_checked,step,seed
inline void write_fd_row(std::ostream& out, LossKind kind, const FdReport& r, std::uint64_t seed) {
  out << loss_name(kind) << ',' << format_real(r.max_rel_error) << ',' << r.n_checked << ','
      << format_real(r.step) << ',' << seed << '\n';
}

/// Small random problem used by the gradient checks: a student and an
/// auxiliary (baseline/teacher) network with random non-zero biases, plus a
/// batch of standard-normal inputs with uniformly drawn labels.
struct GradcheckInstance {
  MlpParams<double> student;
  MlpParams<double> aux;
  Dataset batch;
  std::vector<std::size_t> indices;
};

inline GradcheckInstance random_gradcheck_instance(std::uint64_t seed, std::size_t input_dim = 6,
                                                   std::vector<std::size_t> hidden = {8},
                                                   std::size_t n_classes = 5, std::size_t batch_size = 4) {
  Rng rng(seed ^ 0x5eedULL);
  GradcheckInstance g;
  g.student = init({input_dim, hidden, n_classes, seed});
  g.aux = init({input_dim, hidden, n_classes, seed + 0x9e37ULL});
  for (auto* net : {&g.student, &g.aux}) {
    for (auto& layer : net->layers) {
      for (auto& b : layer.biases) b = rng.uniform(-0.5, 0.5);
    }
  }
  g.batch.n_classes = n_classes;
  g.batch.features = Matrix<double>(batch_size, input_dim);
  for (auto& v : g.batch.features.span()) v = rng.normal();
  for (std::size_t i = 0; i < batch_size; ++i) {
    g.batch.labels.push_back(static_cast<std::size_t>(rng.below(n_classes)));
    g.indices.push_back(i);
  }
  return g;
}

}  // namespace clonalnet
