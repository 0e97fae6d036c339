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
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "clonalnet/autograd.hpp"
#include "clonalnet/clonal_labels.hpp"
#include "clonalnet/dataio.hpp"
#include "clonalnet/error.hpp"
#include "clonalnet/losses.hpp"
#include "clonalnet/model.hpp"

namespace clonalnet {

enum class DatasetKind { mnist, synthetic };

struct DataConfig {
  DatasetKind kind = DatasetKind::synthetic;
  std::filesystem::path idx_images, idx_labels;
  std::filesystem::path idx_test_images, idx_test_labels;
  double val_fraction = 0.0;   // carved out of the training file/split
  double test_fraction = 0.2;  // synthetic only
  SyntheticSpec synthetic;
  std::optional<std::uint64_t> data_seed;  // defaults to the run seed
};

struct TrainConfig {
  LossSettings loss;
  double lr = 0.01;
  double momentum = 0.9;
  std::size_t batch_size = 64;
  std::size_t epochs = 10;
  std::uint64_t seed = 0;
  std::vector<std::size_t> hidden{256};
  std::vector<std::size_t> lr_decay_epochs;  // multiply lr by lr_decay_factor from these epochs on
  double lr_decay_factor = 0.1;
  std::optional<std::filesystem::path> baseline_checkpoint;
  DataConfig data;
  bool wall_clock = false;  // fill wall_seconds; off keeps metrics byte-reproducible
  bool loss_explicit = false;  // `loss` was given by a config file or flag

  void validate() const {
    if (!(lr > 0.0)) throw Error(ErrorCode::invalid_argument, "lr must be > 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw Error(ErrorCode::invalid_argument, "momentum must lie in [0, 1)");
    if (batch_size == 0) throw Error(ErrorCode::invalid_argument, "batch_size must be >= 1");
    if (loss.focus.alpha < 0.0 || loss.focus.beta < 0.0) {
      throw Error(ErrorCode::invalid_argument, "alpha and beta must be >= 0");
    }
    if (loss.kind == LossKind::kd) check_kd(loss.kd);
    if (loss.kind == LossKind::label_smoothing) check_smoothing(loss.ls_eps);
  }
};

// ---------------------------------------------------------------------------
// Config parsing

namespace config_detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

inline double to_real(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != v.size() || !std::isfinite(out)) {
    throw Error(ErrorCode::parse, key + ": '" + v + "' is not a real number");
  }
  return out;
}

inline std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto* end = v.data() + v.size();
  const auto res = std::from_chars(v.data(), end, out);
  if (v.empty() || res.ec != std::errc{} || res.ptr != end) {
    throw Error(ErrorCode::parse, key + ": '" + v + "' is not a non-negative integer");
  }
  return out;
}

inline bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true") return true;
  if (v == "false") return false;
  throw Error(ErrorCode::parse, key + ": expected true|false, got '" + v + "'");
}

inline std::vector<std::size_t> to_list(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  if (trim(v).empty()) return out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(static_cast<std::size_t>(to_u64(key, trim(item))));
  return out;
}

}  // namespace config_detail

/// Applies one `key = value` setting. Keys match the CLI flags with dashes
/// replaced by underscores.
inline void apply_setting(TrainConfig& cfg, const std::string& key, const std::string& value) {
  using namespace config_detail;
  const std::string v = trim(value);
  if (key == "loss") {
    cfg.loss.kind = parse_loss_kind(v);
    cfg.loss_explicit = true;
  }
  else if (key == "alpha") cfg.loss.focus.alpha = to_real(key, v);
  else if (key == "beta") cfg.loss.focus.beta = to_real(key, v);
  else if (key == "temperature") cfg.loss.kd.temperature = to_real(key, v);
  else if (key == "kd_weight") cfg.loss.kd.weight = to_real(key, v);
  else if (key == "ls_eps") cfg.loss.ls_eps = to_real(key, v);
  else if (key == "detach_d") cfg.loss.detach_d = to_bool(key, v);
  else if (key == "lr") cfg.lr = to_real(key, v);
  else if (key == "momentum") cfg.momentum = to_real(key, v);
  else if (key == "batch_size") cfg.batch_size = static_cast<std::size_t>(to_u64(key, v));
  else if (key == "epochs") cfg.epochs = static_cast<std::size_t>(to_u64(key, v));
  else if (key == "seed") cfg.seed = to_u64(key, v);
  else if (key == "hidden") cfg.hidden = to_list(key, v);
  else if (key == "lr_decay_epochs") cfg.lr_decay_epochs = to_list(key, v);
  else if (key == "lr_decay_factor") cfg.lr_decay_factor = to_real(key, v);
  else if (key == "baseline") cfg.baseline_checkpoint = v;
  else if (key == "wall_clock") cfg.wall_clock = to_bool(key, v);
  else if (key == "dataset") {
    if (v == "mnist") cfg.data.kind = DatasetKind::mnist;
    else if (v == "synthetic") cfg.data.kind = DatasetKind::synthetic;
    else throw Error(ErrorCode::parse, "dataset: expected mnist|synthetic, got '" + v + "'");
  }
  else if (key == "idx_images") cfg.data.idx_images = v;
  else if (key == "idx_labels") cfg.data.idx_labels = v;
  else if (key == "idx_test_images") cfg.data.idx_test_images = v;
  else if (key == "idx_test_labels") cfg.data.idx_test_labels = v;
  else if (key == "val_fraction") cfg.data.val_fraction = to_real(key, v);
  else if (key == "test_fraction") cfg.data.test_fraction = to_real(key, v);
  else if (key == "n_pairs") cfg.data.synthetic.n_pairs = static_cast<std::size_t>(to_u64(key, v));
  else if (key == "pair_overlap") cfg.data.synthetic.pair_overlap = to_real(key, v);
  else if (key == "dim") cfg.data.synthetic.dim = static_cast<std::size_t>(to_u64(key, v));
  else if (key == "per_class") cfg.data.synthetic.per_class = static_cast<std::size_t>(to_u64(key, v));
  else if (key == "data_seed") cfg.data.data_seed = to_u64(key, v);
  else throw Error(ErrorCode::parse, "unknown config key '" + key + "'");
}

/// Line-oriented `key = value`; `#` starts a comment; unknown keys are errors.
inline void apply_config_text(TrainConfig& cfg, std::string_view text, const std::string& origin = "config") {
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto body = config_detail::trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorCode::parse, origin + ":" + std::to_string(line_no) + ": expected key = value");
    }
    try {
      apply_setting(cfg, config_detail::trim(body.substr(0, eq)), body.substr(eq + 1));
    } catch (const Error& e) {
      throw Error(e.code(), origin + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
}

inline void apply_config_file(TrainConfig& cfg, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io, "cannot open config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  apply_config_text(cfg, buf.str(), path.string());
}

// ---------------------------------------------------------------------------
// Data

struct PreparedData {
  Dataset train;
  std::optional<Dataset> val;
  Dataset test;
  Vector<double> mean;
};

/// Loads or generates the splits and mean-centres them on the training part.
inline PreparedData prepare_data(const DataConfig& dc, std::uint64_t run_seed) {
  const std::uint64_t seed = dc.data_seed.value_or(run_seed);
  Dataset train, test;
  if (dc.kind == DatasetKind::mnist) {
    if (dc.idx_images.empty() || dc.idx_labels.empty() || dc.idx_test_images.empty() ||
        dc.idx_test_labels.empty()) {
      throw Error(ErrorCode::usage, "mnist needs idx_images, idx_labels, idx_test_images, idx_test_labels");
    }
    train = load_idx(dc.idx_images, dc.idx_labels);
    test = load_idx(dc.idx_test_images, dc.idx_test_labels);
    test.n_classes = train.n_classes = std::max(train.n_classes, test.n_classes);
  } else {
    auto spec = dc.synthetic;
    spec.seed = seed;
    std::tie(train, test) = split(generate_synthetic(spec), dc.test_fraction, seed);
  }
  std::optional<Dataset> val;
  if (dc.val_fraction > 0.0) {
    auto [kept, held] = split(train, dc.val_fraction, seed + 1);
    train = std::move(kept);
    val = std::move(held);
  }
  std::vector<Dataset> others{std::move(test)};
  if (val) others.push_back(std::move(*val));
  auto centered = mean_center(std::move(train), std::move(others));
  PreparedData out;
  out.train = std::move(centered.train);
  out.test = std::move(centered.others[0]);
  if (centered.others.size() > 1) out.val = std::move(centered.others[1]);
  out.mean = std::move(centered.mean);
  return out;
}

// ---------------------------------------------------------------------------
// Metrics

struct EpochRow {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  std::optional<double> val_acc;
  std::optional<double> test_acc;
  double mean_l_cls = 0.0;
  std::optional<double> mean_r_att;
  std::optional<double> mean_r_ent;
  std::optional<double> wall_seconds;
};

struct RunMetrics {
  std::vector<EpochRow> rows;
};

inline constexpr std::string_view kMetricsHeader =
    "epoch,train_loss,train_acc,val_acc,test_acc,mean_l_cls,mean_r_att,mean_r_ent,wall_seconds";

inline void write_metrics_csv(std::ostream& out, const RunMetrics& m) {
  auto opt = [](const std::optional<double>& v) { return v ? format_real(*v) : std::string(); };
  out << kMetricsHeader << '\n';
  for (const auto& r : m.rows) {
    out << r.epoch << ',' << format_real(r.train_loss) << ',' << format_real(r.train_acc) << ','
        << opt(r.val_acc) << ',' << opt(r.test_acc) << ',' << format_real(r.mean_l_cls) << ','
        << opt(r.mean_r_att) << ',' << opt(r.mean_r_ent) << ',' << opt(r.wall_seconds) << '\n';
  }
}

inline RunMetrics read_metrics_csv(std::istream& in, const std::string& origin = "metrics") {
  std::string line;
  if (!std::getline(in, line) || config_detail::trim(line) != kMetricsHeader) {
    throw Error(ErrorCode::parse, origin + ": unexpected metrics header");
  }
  RunMetrics m;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (config_detail::trim(line).empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(config_detail::trim(cell));
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    if (cells.size() != 9) {
      throw Error(ErrorCode::parse, origin + ":" + std::to_string(line_no) + ": expected 9 columns");
    }
    auto real = [&](const std::string& s) { return config_detail::to_real(origin, s); };
    auto opt = [&](const std::string& s) -> std::optional<double> {
      if (s.empty()) return std::nullopt;
      return real(s);
    };
    EpochRow r;
    r.epoch = static_cast<std::size_t>(config_detail::to_u64(origin, cells[0]));
    r.train_loss = real(cells[1]);
    r.train_acc = real(cells[2]);
    r.val_acc = opt(cells[3]);
    r.test_acc = opt(cells[4]);
    r.mean_l_cls = real(cells[5]);
    r.mean_r_att = opt(cells[6]);
    r.mean_r_ent = opt(cells[7]);
    r.wall_seconds = opt(cells[8]);
    m.rows.push_back(r);
  }
  return m;
}

// ---------------------------------------------------------------------------
// Optimisation

/// Heavy-ball momentum: v <- momentum * v + g; theta <- theta - lr * v.
template <std::floating_point T>
void sgd_step(MlpParams<T>& params, MlpParams<T>& velocity, const MlpParams<T>& grads, T lr, T momentum) {
  if (params.layers.size() != velocity.layers.size() || params.layers.size() != grads.layers.size()) {
    throw Error(ErrorCode::dimension_mismatch, "sgd_step: layer counts differ");
  }
  auto update = [&](std::span<T> theta, std::span<T> v, std::span<const T> g) {
    if (theta.size() != v.size() || theta.size() != g.size()) {
      throw Error(ErrorCode::dimension_mismatch, "sgd_step: parameter block sizes differ");
    }
    for (std::size_t i = 0; i < theta.size(); ++i) {
      v[i] = momentum * v[i] + g[i];
      theta[i] -= lr * v[i];
    }
  };
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    update(params.layers[l].weights.span(), velocity.layers[l].weights.span(), grads.layers[l].weights.span());
    update(params.layers[l].biases.mutable_span(), velocity.layers[l].biases.mutable_span(), grads.layers[l].biases.span());
  }
}

/// Fraction of examples whose predicted class equals the label.
inline double evaluate(const MlpParams<double>& params, const Dataset& dataset) {
  if (dataset.size() == 0) return 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < dataset.size(); ++i) correct += predict(params, dataset.x(i)) == dataset.y(i);
  return static_cast<double>(correct) / static_cast<double>(dataset.size());
}

struct TrainResult {
  MlpParams<double> params;
  RunMetrics metrics;
};

using EpochCallback = std::function<void(const EpochRow&)>;

inline double learning_rate_at(const TrainConfig& cfg, std::size_t epoch) {
  double lr = cfg.lr;
  for (auto e : cfg.lr_decay_epochs) {
    if (epoch >= e) lr *= cfg.lr_decay_factor;
  }
  return lr;
}

inline MlpParams<double> fresh_student(const TrainConfig& cfg, const Dataset& train) {
  return init({train.feature_dim(), cfg.hidden, train.n_classes, cfg.seed});
}

/// Shared mini-batch loop. Epoch e (1-based) shuffles with seed + e.
inline TrainResult run_training(const TrainConfig& cfg, const PreparedData& data, MlpParams<double> params,
                                const MlpParams<double>* aux, const EpochCallback& on_epoch = {}) {
  cfg.validate();
  require_aux(cfg.loss, aux != nullptr);
  TrainResult result;
  auto velocity = zeros_like(params);
  const auto& train = data.train;
  const std::size_t m = train.size();
  std::vector<std::size_t> order(m);
  const bool focus = cfg.loss.kind == LossKind::focusing_picking;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    for (std::size_t i = 0; i < m; ++i) order[i] = i;
    Rng(cfg.seed + epoch).shuffle(order.begin(), order.end());
    const double lr = learning_rate_at(cfg, epoch);

    double sum_loss = 0, sum_cls = 0, sum_att = 0, sum_ent = 0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < m; start += cfg.batch_size) {
      const std::size_t stop = std::min(m, start + cfg.batch_size);
      const std::span<const std::size_t> batch(order.data() + start, stop - start);
      const auto g = backward(params, train, batch, cfg.loss, aux);
      sgd_step(params, velocity, g.grads, lr, cfg.momentum);
      sum_loss += g.sum_loss;
      sum_cls += g.sum_l_cls;
      sum_att += g.sum_r_attention;
      sum_ent += g.sum_r_entropy;
      correct += g.n_correct;
    }

    EpochRow row;
    row.epoch = epoch;
    const double denom = m ? static_cast<double>(m) : 1.0;
    row.train_loss = sum_loss / denom;
    row.train_acc = static_cast<double>(correct) / denom;
    if (data.val) row.val_acc = evaluate(params, *data.val);
    row.test_acc = evaluate(params, data.test);
    row.mean_l_cls = sum_cls / denom;
    if (focus) {
      row.mean_r_att = sum_att / denom;
      row.mean_r_ent = sum_ent / denom;
    }
    if (cfg.wall_clock) {
      row.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    }
    result.metrics.rows.push_back(row);
    if (on_epoch) on_epoch(row);
  }
  result.params = std::move(params);
  return result;
}

inline TrainResult train_baseline(TrainConfig cfg, const PreparedData& data, const EpochCallback& on_epoch = {}) {
  if (cfg.loss.kind != LossKind::baseline_ce) {
    throw Error(ErrorCode::usage, "train_baseline requires loss baseline_ce");
  }
  return run_training(cfg, data, fresh_student(cfg, data.train), nullptr, on_epoch);
}

inline void check_compatible(const MlpParams<double>& frozen, const Dataset& train, const char* role) {
  validate_shapes(frozen);
  if (frozen.input_dim() != train.feature_dim() || frozen.n_classes() != train.n_classes) {
    throw Error(ErrorCode::dimension_mismatch,
                std::string(role) + " expects " + std::to_string(frozen.input_dim()) + " inputs and " +
                    std::to_string(frozen.n_classes()) + " classes; data has " +
                    std::to_string(train.feature_dim()) + " and " + std::to_string(train.n_classes));
  }
}

/// Trains a freshly initialised student with the focusing-picking loss
/// against a frozen baseline. The baseline is hashed before and after.
inline TrainResult train_clonal(const TrainConfig& cfg, const PreparedData& data, const MlpParams<double>& baseline,
                                const EpochCallback& on_epoch = {}) {
  if (cfg.loss.kind != LossKind::focusing_picking) {
    throw Error(ErrorCode::usage, "train_clonal requires loss focusing_picking");
  }
  check_compatible(baseline, data.train, "baseline");
  const auto before = params_hash(baseline);
  auto result = run_training(cfg, data, fresh_student(cfg, data.train), &baseline, on_epoch);
  if (params_hash(baseline) != before) throw std::logic_error("baseline parameters changed during clonal training");
  return result;
}

/// Knowledge distillation or label smoothing run with the same loop.
inline TrainResult train_comparison(const TrainConfig& cfg, const PreparedData& data,
                                    const MlpParams<double>* teacher, const EpochCallback& on_epoch = {}) {
  if (cfg.loss.kind != LossKind::kd && cfg.loss.kind != LossKind::label_smoothing) {
    throw Error(ErrorCode::usage, "train_comparison requires loss kd or label_smoothing");
  }
  if (cfg.loss.kind == LossKind::kd) {
    if (!teacher) throw Error(ErrorCode::missing_teacher, "kd needs a teacher checkpoint");
    check_compatible(*teacher, data.train, "teacher");
  }
  const MlpParams<double>* aux = cfg.loss.kind == LossKind::kd ? teacher : nullptr;
  return run_training(cfg, data, fresh_student(cfg, data.train), aux, on_epoch);
}

/// Writes checkpoint.ckpt, metrics.csv and mean.txt into `dir`.
inline void write_run(const std::filesystem::path& dir, const TrainResult& result, const Vector<double>& mean) {
  std::filesystem::create_directories(dir);
  save_checkpoint(result.params, dir / "checkpoint.ckpt");
  std::ofstream metrics(dir / "metrics.csv", std::ios::binary);
  if (!metrics) throw Error(ErrorCode::io, "cannot write " + (dir / "metrics.csv").string());
  write_metrics_csv(metrics, result.metrics);
  std::ofstream mean_out(dir / "mean.txt", std::ios::binary);
  for (std::size_t j = 0; j < mean.size(); ++j) mean_out << (j ? " " : "") << format_real(mean[j]);
  mean_out << '\n';
}

}  // namespace clonalnet
