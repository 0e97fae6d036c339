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
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include "clonalnet/autograd.hpp"
#include "clonalnet/clonal_labels.hpp"
#include "clonalnet/error.hpp"
#include "clonalnet/trainer.hpp"

namespace clonalnet {

// ---------------------------------------------------------------------------
// Multi-seed summaries

struct MethodSummary {
  std::string method;
  std::size_t n_runs = 0;
  double mean_test_acc = 0.0;
  double std_test_acc = 0.0;  // sample standard deviation, 0 for a single run
  double improvement_pp = 0.0;  // percentage points over the baseline mean
  double relative_improvement = 0.0;  // (mean - baseline) / baseline
};

inline double final_test_accuracy(const std::filesystem::path& run_dir) {
  const auto path = run_dir / "metrics.csv";
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io, "missing metrics file " + path.string());
  const auto m = read_metrics_csv(in, path.string());
  if (m.rows.empty() || !m.rows.back().test_acc) {
    throw Error(ErrorCode::parse, path.string() + ": no final test accuracy");
  }
  return *m.rows.back().test_acc;
}

/// Mean and spread of final test accuracy per method, in first-seen method
/// order. Improvements are relative to the method named `baseline_method`
/// (or the first method when absent).
inline std::vector<MethodSummary> compare_report(
    const std::vector<std::pair<std::string, std::filesystem::path>>& run_dirs,
    const std::string& baseline_method = "baseline") {
  std::vector<std::string> order;
  std::map<std::string, std::vector<double>> accs;
  for (const auto& [method, dir] : run_dirs) {
    if (!accs.count(method)) order.push_back(method);
    accs[method].push_back(final_test_accuracy(dir));
  }
  std::vector<MethodSummary> out;
  for (const auto& method : order) {
    const auto& v = accs[method];
    MethodSummary s;
    s.method = method;
    s.n_runs = v.size();
    for (double a : v) s.mean_test_acc += a;
    s.mean_test_acc /= static_cast<double>(v.size());
    if (v.size() > 1) {
      double ss = 0.0;
      for (double a : v) ss += (a - s.mean_test_acc) * (a - s.mean_test_acc);
      s.std_test_acc = std::sqrt(ss / static_cast<double>(v.size() - 1));
    }
    out.push_back(s);
  }
  const MethodSummary* base = out.empty() ? nullptr : &out.front();
  for (const auto& s : out) {
    if (s.method == baseline_method) base = &s;
  }
  if (base) {
    const double b = base->mean_test_acc;
    for (auto& s : out) {
      s.improvement_pp = 100.0 * (s.mean_test_acc - b);
      s.relative_improvement = b > 0.0 ? (s.mean_test_acc - b) / b : 0.0;
    }
  }
  return out;
}

inline void write_summary_csv(std::ostream& out, const std::vector<MethodSummary>& rows) {
  out << "method,n_runs,mean_test_acc,std_test_acc,improvement_pp,relative_improvement\n";
  for (const auto& r : rows) {
    out << r.method << ',' << r.n_runs << ',' << format_real(r.mean_test_acc) << ','
        << format_real(r.std_test_acc) << ',' << format_real(r.improvement_pp) << ','
        << format_real(r.relative_improvement) << '\n';
  }
}

// ---------------------------------------------------------------------------
// Command line

namespace cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

inline int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::usage:
    case ErrorCode::parse:
    case ErrorCode::invalid_argument:
    case ErrorCode::missing_baseline:
    case ErrorCode::missing_teacher:
      return kExitUsage;
    default:
      return kExitRuntime;
  }
}

struct Streams {
  std::ostream& out;
  std::ostream& err;
};

// Flags shared by every subcommand; each maps onto a config key.
inline const std::vector<std::pair<std::string, std::string>>& setting_flags() {
  static const std::vector<std::pair<std::string, std::string>> flags{
      {"--seed", "seed"},
      {"--baseline", "baseline"},
      {"--alpha", "alpha"},
      {"--beta", "beta"},
      {"--temperature", "temperature"},
      {"--kd-weight", "kd_weight"},
      {"--ls-eps", "ls_eps"},
      {"--detach-d", "detach_d"},
      {"--epochs", "epochs"},
      {"--lr", "lr"},
      {"--momentum", "momentum"},
      {"--batch-size", "batch_size"},
      {"--hidden", "hidden"},
      {"--lr-decay-epochs", "lr_decay_epochs"},
      {"--lr-decay-factor", "lr_decay_factor"},
      {"--dataset", "dataset"},
      {"--idx-images", "idx_images"},
      {"--idx-labels", "idx_labels"},
      {"--idx-test-images", "idx_test_images"},
      {"--idx-test-labels", "idx_test_labels"},
      {"--val-fraction", "val_fraction"},
      {"--test-fraction", "test_fraction"},
      {"--n-pairs", "n_pairs"},
      {"--pair-overlap", "pair_overlap"},
      {"--dim", "dim"},
      {"--per-class", "per_class"},
      {"--data-seed", "data_seed"},
      {"--wall-clock", "wall_clock"},
      {"--loss", "loss"},
  };
  return flags;
}

struct Invocation {
  std::string subcommand;
  std::string config_path;
  std::string out_dir = "out";
  std::string checkpoint;
  std::size_t seeds = 5;
  std::size_t n_coords = 1000;
  double step = 1e-5;
  std::map<std::string, std::string> overrides;  // config key -> raw value
};

inline LossKind loss_for(const std::string& sub) {
  if (sub == "train-baseline") return LossKind::baseline_ce;
  if (sub == "train-clonal") return LossKind::focusing_picking;
  if (sub == "train-kd") return LossKind::kd;
  return LossKind::label_smoothing;
}

inline TrainConfig build_config(const Invocation& inv) {
  TrainConfig cfg;
  if (!inv.config_path.empty()) {
    if (!std::filesystem::exists(inv.config_path)) {
      throw Error(ErrorCode::usage, "config file not found: " + inv.config_path);
    }
    apply_config_file(cfg, inv.config_path);
  }
  for (const auto& [key, value] : inv.overrides) apply_setting(cfg, key, value);
  return cfg;
}

/// Pins the loss for train-* subcommands, rejecting an explicit mismatch.
inline void pin_loss(TrainConfig& cfg, const Invocation& inv) {
  const auto wanted = loss_for(inv.subcommand);
  if (cfg.loss_explicit && cfg.loss.kind != wanted) {
    throw Error(ErrorCode::usage, inv.subcommand + " cannot run with loss " +
                                      std::string(loss_name(cfg.loss.kind)));
  }
  cfg.loss.kind = wanted;
}

inline EpochCallback progress(std::ostream& err, const std::string& tag) {
  return [&err, tag](const EpochRow& r) {
    err << '[' << tag << "] epoch " << r.epoch << " loss " << format_real(r.train_loss)
        << " train_acc " << r.train_acc << " test_acc " << r.test_acc.value_or(0.0) << '\n';
  };
}

inline MlpParams<double> require_baseline(const TrainConfig& cfg) {
  if (!cfg.baseline_checkpoint || cfg.baseline_checkpoint->empty()) {
    throw Error(ErrorCode::missing_baseline, "a frozen baseline checkpoint is required (--baseline PATH)");
  }
  if (!std::filesystem::exists(*cfg.baseline_checkpoint)) {
    throw Error(ErrorCode::missing_baseline, "baseline checkpoint not found: " + cfg.baseline_checkpoint->string());
  }
  return load_checkpoint(*cfg.baseline_checkpoint);
}

inline int run_train(const Invocation& inv, TrainConfig cfg, Streams io) {
  pin_loss(cfg, inv);
  std::optional<MlpParams<double>> frozen;
  if (needs_aux(cfg.loss.kind)) frozen = require_baseline(cfg);
  cfg.validate();
  const auto data = prepare_data(cfg.data, cfg.seed);
  const auto tag = inv.subcommand + " seed " + std::to_string(cfg.seed);
  TrainResult result;
  switch (cfg.loss.kind) {
    case LossKind::baseline_ce: result = train_baseline(cfg, data, progress(io.err, tag)); break;
    case LossKind::focusing_picking: result = train_clonal(cfg, data, *frozen, progress(io.err, tag)); break;
    default:
      result = train_comparison(cfg, data, frozen ? &*frozen : nullptr, progress(io.err, tag));
      break;
  }
  write_run(inv.out_dir, result, data.mean);
  io.out << "test_acc," << format_real(result.metrics.rows.empty() ? evaluate(result.params, data.test)
                                                                   : *result.metrics.rows.back().test_acc)
         << '\n';
  return kExitOk;
}

inline int run_eval(const Invocation& inv, const TrainConfig& cfg, Streams io) {
  if (inv.checkpoint.empty()) throw Error(ErrorCode::usage, "eval needs --checkpoint PATH");
  const auto params = load_checkpoint(inv.checkpoint);
  const auto data = prepare_data(cfg.data, cfg.seed);
  check_compatible(params, data.train, "checkpoint");
  std::filesystem::create_directories(inv.out_dir);
  std::ofstream csv(std::filesystem::path(inv.out_dir) / "eval.csv", std::ios::binary);
  if (!csv) throw Error(ErrorCode::io, "cannot write eval.csv under " + inv.out_dir);
  auto emit = [&](const char* split, const Dataset& ds) {
    const auto line = std::string(split) + "," + format_real(evaluate(params, ds)) + "\n";
    csv << line;
    io.out << line;
  };
  csv << "split,accuracy\n";
  io.out << "split,accuracy\n";
  emit("train", data.train);
  if (data.val) emit("val", *data.val);
  emit("test", data.test);
  return kExitOk;
}

inline int run_gradcheck(const Invocation& inv, const TrainConfig& cfg, Streams io) {
  const auto inst = random_gradcheck_instance(cfg.seed);
  const auto* aux = needs_aux(cfg.loss.kind) ? &inst.aux : nullptr;
  const auto report = fd_check(inst.student, inst.batch, inst.indices, cfg.loss, aux, inv.n_coords, inv.step, cfg.seed);
  io.out << "loss_kind,max_rel_error,n_checked,step,seed\n";
  write_fd_row(io.out, cfg.loss.kind, report, cfg.seed);
  return report.max_rel_error < 1e-6 ? kExitOk : kExitRuntime;
}

inline int run_label_stats(const Invocation& inv, const TrainConfig& cfg, Streams io) {
  const auto baseline = require_baseline(cfg);
  const auto data = prepare_data(cfg.data, cfg.seed);
  const auto stats = label_stats(data.train, baseline);
  std::filesystem::create_directories(inv.out_dir);
  std::ofstream csv(std::filesystem::path(inv.out_dir) / "label_stats.csv", std::ios::binary);
  if (!csv) throw Error(ErrorCode::io, "cannot write label_stats.csv under " + inv.out_dir);
  write_label_stats_csv(csv, stats);
  write_label_stats_csv(io.out, stats);
  if (cfg.data.kind == DatasetKind::synthetic) {
    const auto rates = pair_cooccurrence(stats);
    io.out << "partner_rate," << format_real(rates.partner) << "\nnon_partner_rate,"
           << format_real(rates.non_partner) << '\n';
  }
  return kExitOk;
}

/// Baseline, ClonalNet, KD and label smoothing for seeds base..base+k-1. The
/// baseline of each seed serves as the frozen reference and KD teacher.
inline int run_compare(const Invocation& inv, const TrainConfig& base_cfg, Streams io) {
  if (inv.seeds == 0) throw Error(ErrorCode::usage, "--seeds must be >= 1");
  const std::filesystem::path root(inv.out_dir);
  std::vector<std::pair<std::string, std::filesystem::path>> runs;
  for (std::size_t i = 0; i < inv.seeds; ++i) {
    TrainConfig cfg = base_cfg;
    cfg.seed = base_cfg.seed + i;
    const auto data = prepare_data(cfg.data, cfg.seed);
    const std::string seed_dir = "seed_" + std::to_string(cfg.seed);

    auto run = [&](const std::string& method, LossKind kind, const MlpParams<double>* frozen) {
      TrainConfig c = cfg;
      c.loss.kind = kind;
      const auto tag = method + " seed " + std::to_string(c.seed);
      TrainResult r;
      if (kind == LossKind::baseline_ce) r = train_baseline(c, data, progress(io.err, tag));
      else if (kind == LossKind::focusing_picking) r = train_clonal(c, data, *frozen, progress(io.err, tag));
      else r = train_comparison(c, data, frozen, progress(io.err, tag));
      const auto dir = root / method / seed_dir;
      write_run(dir, r, data.mean);
      runs.emplace_back(method, dir);
      return r;
    };

    const auto baseline = run("baseline", LossKind::baseline_ce, nullptr);
    run("clonal", LossKind::focusing_picking, &baseline.params);
    run("kd", LossKind::kd, &baseline.params);
    run("ls", LossKind::label_smoothing, nullptr);
  }
  const auto summary = compare_report(runs);
  std::ofstream csv(root / "summary.csv", std::ios::binary);
  if (!csv) throw Error(ErrorCode::io, "cannot write summary.csv under " + root.string());
  write_summary_csv(csv, summary);
  write_summary_csv(io.out, summary);
  return kExitOk;
}

/// Entry point. Returns 0 on success, 1 on runtime failure, 2 on usage or
/// precondition failure; failures print `error: <category>: <message>`.
inline int run(const std::vector<std::string>& argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  Streams io{out, err};
  CLI::App app{"ClonalNet training toolkit"};
  app.require_subcommand(1);
  Invocation inv;

  struct FlagSlot {
    std::string key;
    std::string value;
    CLI::Option* option = nullptr;
  };
  std::vector<std::vector<FlagSlot>> slots;
  std::vector<CLI::App*> subs;

  const std::vector<std::pair<std::string, std::string>> commands{
      {"train-baseline", "train the baseline classifier with softmax cross-entropy"},
      {"train-clonal", "train ClonalNet against a frozen baseline"},
      {"train-kd", "train a student with standard knowledge distillation"},
      {"train-ls", "train with label smoothing"},
      {"eval", "evaluate a checkpoint on every split"},
      {"gradcheck", "finite-difference check of the analytic gradients"},
      {"label-stats", "multi-warm label statistics of a baseline"},
      {"compare", "run every method over several seeds and summarise"},
  };
  slots.reserve(commands.size());
  for (const auto& [name, help] : commands) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config", inv.config_path, "key = value config file");
    sub->add_option("--out", inv.out_dir, "output directory");
    if (name == "eval") sub->add_option("--checkpoint", inv.checkpoint, "checkpoint to evaluate");
    if (name == "compare") sub->add_option("--seeds", inv.seeds, "number of seeds");
    if (name == "gradcheck") {
      sub->add_option("--n-coords", inv.n_coords, "coordinates to check");
      sub->add_option("--step", inv.step, "central-difference step");
    }
    auto& mine = slots.emplace_back();
    mine.reserve(setting_flags().size());
    for (const auto& [flag, key] : setting_flags()) {
      auto& slot = mine.emplace_back();
      slot.key = key;
      slot.option = sub->add_option(flag, slot.value);
    }
    subs.push_back(sub);
  }

  try {
    std::vector<std::string> args(argv.rbegin(), argv.rend());
    app.parse(args);
  } catch (const CLI::CallForHelp& e) {
    app.exit(e, out, err);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: usage: " << e.what() << '\n';
    return kExitUsage;
  }

  try {
    for (std::size_t s = 0; s < subs.size(); ++s) {
      if (!subs[s]->parsed()) continue;
      inv.subcommand = subs[s]->get_name();
      for (const auto& slot : slots[s]) {
        if (slot.option->count() == 0) continue;
        inv.overrides[slot.key] = slot.value;
      }
    }
    TrainConfig cfg = build_config(inv);
    const auto& sub = inv.subcommand;
    if (sub.rfind("train-", 0) == 0) return run_train(inv, cfg, io);
    if (sub == "eval") return run_eval(inv, cfg, io);
    if (sub == "gradcheck") return run_gradcheck(inv, cfg, io);
    if (sub == "label-stats") return run_label_stats(inv, cfg, io);
    return run_compare(inv, cfg, io);
  } catch (const Error& e) {
    err << "error: " << e.category() << ": " << e.what() << '\n';
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    err << "error: runtime: " << e.what() << '\n';
    return kExitRuntime;
  }
}

}  // namespace cli
}  // namespace clonalnet
