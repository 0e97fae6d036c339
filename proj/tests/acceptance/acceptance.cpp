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

// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
// criterion fails. Long-running; see README for expected runtimes.

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "clonalnet/cli.hpp"
#include "clonalnet/clonalnet.hpp"

namespace fs = std::filesystem;
using namespace clonalnet;

namespace {

int g_failures = 0;

void report(int id, const std::string& name, bool ok, const std::string& detail) {
  std::cout << (ok ? "PASS" : "FAIL") << ' ' << id << ' ' << name << ": " << detail << std::endl;
  if (!ok) ++g_failures;
}

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

// Runs the command-line tool in-process; stdout is captured, progress goes to stderr.
std::string cli_run(const std::vector<std::string>& args) {
  std::ostringstream out;
  const int code = cli::run(args, out, std::cerr);
  if (code != 0) {
    std::string joined;
    for (const auto& a : args) joined += a + ' ';
    throw std::runtime_error("command failed (" + std::to_string(code) + "): " + joined);
  }
  return out.str();
}

struct Run {
  fs::path dir;
  bool focusing = false;
};

std::vector<Run> g_runs;  // every run whose metrics feed the accounting check

// ---------------------------------------------------------------------------

void gradient_fidelity() {
  struct Case {
    const char* name;
    LossKind kind;
    bool detach;
  };
  const Case cases[] = {{"baseline_ce", LossKind::baseline_ce, false},
                        {"focusing_picking", LossKind::focusing_picking, false},
                        {"focusing_picking(detach_d)", LossKind::focusing_picking, true},
                        {"label_smoothing", LossKind::label_smoothing, false},
                        {"kd", LossKind::kd, false}};
  bool ok = true;
  std::string detail;
  for (const auto& c : cases) {
    LossSettings s;
    s.kind = c.kind;
    s.detach_d = c.detach;
    s.ls_eps = 0.1;
    s.kd = KdConfig{2.5, 0.6};
    double worst = 0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      const auto inst = random_gradcheck_instance(seed, 6, {8}, 5, 4);
      const auto r = fd_check(inst.student, inst.batch, inst.indices, s, &inst.aux, 1000, 1e-5, seed);
      worst = std::max(worst, r.max_rel_error);
    }
    ok = ok && worst < 1e-6;
    detail += std::string(detail.empty() ? "" : ", ") + c.name + " " + num(worst);
  }
  report(1, "gradient fidelity (100 nets per loss, max rel err < 1e-6)", ok, detail);
}

void label_invariants() {
  Rng rng(2024);
  std::size_t bad_sum = 0, bad_entries = 0, bad_gt = 0, bad_cos = 0, bad_entropy = 0;
  for (std::uint64_t t = 0; t < 1000; ++t) {
    const auto dim = 2 + rng.below(8);
    const auto classes = 2 + rng.below(9);
    const auto net = init({dim, {4 + rng.below(12)}, classes, 9000 + t});
    Vector<double> x(dim);
    for (auto& v : x) v = rng.normal();
    const auto gt = rng.below(classes);
    const auto z = logits(net, x.span());
    const auto label = multi_warm(z, gt);

    double sum = 0;
    for (double v : label.normalized) sum += v;
    bad_sum += std::abs(sum - 1.0) > 1e-12;
    const double share = 1.0 / static_cast<double>(label.support_size);
    for (double v : label.normalized) bad_entries += !(v == 0.0 || v == share);
    bad_gt += !(label.normalized[gt] > 0.0);
    bad_cos += !(multi_warm_via_cosine(net, x.span(), gt).normalized == label.normalized);
    bad_entropy += std::abs(entropy(label.normalized.span()) - std::log(static_cast<double>(label.support_size))) > 1e-12;
  }
  const bool ok = bad_sum + bad_entries + bad_gt + bad_cos + bad_entropy == 0;
  report(2, "multi-warm label invariants (1000 triples)", ok,
         "violations: sum " + std::to_string(bad_sum) + ", entries " + std::to_string(bad_entries) + ", gt " +
             std::to_string(bad_gt) + ", cosine " + std::to_string(bad_cos) + ", entropy " +
             std::to_string(bad_entropy));
}

TrainConfig reduction_config() {
  TrainConfig cfg;
  cfg.hidden = {16};
  cfg.epochs = 3;
  cfg.batch_size = 32;
  cfg.data.synthetic = SyntheticSpec{3, 0.7, 10, 100, 5};
  return cfg;
}

bool same_trajectory(const TrainResult& a, const TrainResult& b) {
  if (a.params != b.params || a.metrics.rows.size() != b.metrics.rows.size()) return false;
  for (std::size_t e = 0; e < a.metrics.rows.size(); ++e) {
    const auto& x = a.metrics.rows[e];
    const auto& y = b.metrics.rows[e];
    if (x.train_loss != y.train_loss || x.train_acc != y.train_acc || x.test_acc != y.test_acc) return false;
  }
  return true;
}

void reduction_identities() {
  // (a) z == z_b leaves the softmax unchanged.
  Rng rng(77);
  double worst = 0;
  for (int t = 0; t < 1000; ++t) {
    Vector<double> z(2 + rng.below(9));
    for (auto& v : z) v = rng.uniform(-10, 10);
    const auto rw = reweighted_probs(z.span(), z.span());
    const auto p = softmax(z.span());
    for (std::size_t k = 0; k < z.size(); ++k) worst = std::max(worst, std::abs(rw.probs[k] - p[k]));
  }
  report(3, "reduction (a) z == z_b gives plain softmax within 1e-12", worst <= 1e-12, "max deviation " + num(worst));

  const auto cfg = reduction_config();
  const auto data = prepare_data(cfg.data, cfg.seed);
  const auto base = train_baseline(cfg, data);

  // (b) alpha = beta = 0, detached d, all-zero baseline logits.
  auto clonal = cfg;
  clonal.loss.kind = LossKind::focusing_picking;
  clonal.loss.focus = FocusConfig{0.0, 0.0};
  clonal.loss.detach_d = true;
  auto zero = fresh_student(cfg, data.train);
  for (auto& l : zero.layers) {
    for (auto& w : l.weights.span()) w = 0;
    for (auto& b : l.biases.mutable_span()) b = 0;
  }
  const auto c = train_clonal(clonal, data, zero);
  double max_diff = 0;
  for (std::size_t l = 0; l < c.params.layers.size(); ++l) {
    const auto a = c.params.layers[l].weights.span();
    const auto b = base.params.layers[l].weights.span();
    for (std::size_t i = 0; i < a.size(); ++i) max_diff = std::max(max_diff, std::abs(a[i] - b[i]));
  }
  report(3, "reduction (b) alpha=beta=0, detach_d, zero baseline logits matches baseline trajectory bit for bit",
         same_trajectory(c, base),
         "max |weight difference| after " + std::to_string(cfg.epochs) + " epochs " + num(max_diff));

  // (c) kd with weight 0 and label smoothing with eps 0.
  auto kd = cfg;
  kd.loss.kind = LossKind::kd;
  kd.loss.kd.weight = 0.0;
  const auto kd_run = train_comparison(kd, data, &base.params);
  auto ls = cfg;
  ls.loss.kind = LossKind::label_smoothing;
  ls.loss.ls_eps = 0.0;
  const auto ls_run = train_comparison(ls, data, nullptr);
  const bool kd_ok = same_trajectory(kd_run, base), ls_ok = same_trajectory(ls_run, base);
  report(3, "reduction (c) kd weight 0 and ls eps 0 match baseline trajectory bit for bit", kd_ok && ls_ok,
         std::string("kd ") + (kd_ok ? "identical" : "differs") + ", ls " + (ls_ok ? "identical" : "differs"));
}

std::vector<std::string> mnist_args(const fs::path& dir) {
  return {"--dataset",         "mnist",
          "--idx-images",      (dir / "train-images-idx3-ubyte").string(),
          "--idx-labels",      (dir / "train-labels-idx1-ubyte").string(),
          "--idx-test-images", (dir / "t10k-images-idx3-ubyte").string(),
          "--idx-test-labels", (dir / "t10k-labels-idx1-ubyte").string(),
          "--val-fraction",    "0.083333333333333333",  // 5K of 60K
          "--hidden",          "256",
          "--epochs",          "10"};
}

std::vector<std::string> concat(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

// Baseline then clonal for one seed; returns final test accuracies.
std::pair<double, double> train_pair(const fs::path& root, std::uint64_t seed, const std::vector<std::string>& data) {
  const auto s = std::to_string(seed);
  const auto base_dir = root / "baseline" / ("seed_" + s);
  const auto clonal_dir = root / "clonal" / ("seed_" + s);
  cli_run(concat({"train-baseline", "--seed", s, "--out", base_dir.string()}, data));
  cli_run(concat({"train-clonal", "--seed", s, "--baseline", (base_dir / "checkpoint.ckpt").string(), "--out",
                  clonal_dir.string()},
                 data));
  g_runs.push_back({base_dir, false});
  g_runs.push_back({clonal_dir, true});
  return {final_test_accuracy(base_dir), final_test_accuracy(clonal_dir)};
}

bool repeat_matches(const fs::path& root, const fs::path& repeat_root, std::uint64_t seed,
                    const std::vector<std::string>& data) {
  train_pair(repeat_root, seed, data);
  g_runs.resize(g_runs.size() - 2);  // accounted once already
  bool ok = true;
  for (const char* method : {"baseline", "clonal"}) {
    const auto rel = fs::path(method) / ("seed_" + std::to_string(seed));
    for (const char* f : {"checkpoint.ckpt", "metrics.csv"}) {
      ok = ok && slurp(root / rel / f) == slurp(repeat_root / rel / f) && !slurp(root / rel / f).empty();
    }
  }
  return ok;
}

void mnist_experiment(const fs::path& mnist_dir, const fs::path& work, std::vector<std::string>& repeat_notes,
                      bool& repeat_ok) {
  const char* name = "MNIST 784-[256]-10, 55K/5K, 10 epochs, 5 seeds: clonal mean >= baseline mean, both >= 95%";
  if (!fs::exists(mnist_dir / "train-images-idx3-ubyte")) {
    report(4, name, false, "MNIST IDX files not found under " + mnist_dir.string() + " (run tools/fetch_mnist.sh)");
    return;
  }
  const auto data = mnist_args(mnist_dir);
  const auto root = work / "mnist";
  double base_sum = 0, clonal_sum = 0;
  std::string per_seed;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto [b, c] = train_pair(root, seed, data);
    base_sum += b;
    clonal_sum += c;
    per_seed += " " + num(b) + "/" + num(c);
  }
  const double b = base_sum / 5, c = clonal_sum / 5;
  // The reference result improves on the baseline; the sign must agree.
  const bool ok = c - b >= 0.0 && b >= 0.95 && c >= 0.95;
  report(4, name, ok,
         "baseline " + num(100 * b) + "%, clonal " + num(100 * c) + "%, improvement " + num(100 * (c - b)) +
             " pp; per seed (baseline/clonal)" + per_seed);

  const bool same = repeat_matches(root, work / "mnist_repeat", 0, data);
  repeat_ok = repeat_ok && same;
  repeat_notes.push_back(std::string("mnist seed 0 ") + (same ? "identical" : "differs"));
}

void synthetic_experiment(const fs::path& work, std::vector<std::string>& repeat_notes, bool& repeat_ok) {
  const std::vector<std::string> data{"--dataset", "synthetic", "--n-pairs",   "3",  "--pair-overlap", "0.7",
                                      "--dim",     "10",        "--per-class", "500"};
  const auto root = work / "synthetic";
  double partner = 0, non_partner = 0, base_sum = 0, clonal_sum = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto [b, c] = train_pair(root, seed, data);
    base_sum += b;
    clonal_sum += c;
    const auto s = std::to_string(seed);
    const auto out = cli_run(concat({"label-stats", "--seed", s, "--baseline",
                                     (root / "baseline" / ("seed_" + s) / "checkpoint.ckpt").string(), "--out",
                                     (root / "label_stats" / ("seed_" + s)).string()},
                                    data));
    auto value = [&](const std::string& key) {
      const auto pos = out.find("\n" + key + ",");
      if (pos == std::string::npos) throw std::runtime_error("label-stats output lacks " + key);
      return std::stod(out.substr(pos + key.size() + 2));
    };
    partner += value("partner_rate");
    non_partner += value("non_partner_rate");
  }
  partner /= 10;
  non_partner /= 10;
  report(5, "synthetic (a) partner co-occurrence > non-partner (mean over 10 seeds)", partner > non_partner,
         "partner " + num(partner) + ", non-partner " + num(non_partner));
  const double b = base_sum / 10, c = clonal_sum / 10;
  report(5, "synthetic (b) clonal mean test accuracy >= baseline mean", c >= b,
         "baseline " + num(100 * b) + "%, clonal " + num(100 * c) + "%");

  bool same = true;
  for (std::uint64_t seed = 0; seed < 10; ++seed) same = same && repeat_matches(root, work / "synthetic_repeat", seed, data);
  repeat_ok = repeat_ok && same;
  repeat_notes.push_back(std::string("synthetic 10 seeds ") + (same ? "identical" : "differ"));
}

void component_accounting() {
  const FocusConfig f;  // the defaults every acceptance run uses
  double worst = 0;
  std::size_t rows = 0;
  for (const auto& run : g_runs) {
    std::ifstream in(run.dir / "metrics.csv");
    for (const auto& r : read_metrics_csv(in, run.dir.string()).rows) {
      double recomposed = r.mean_l_cls;
      if (run.focusing) {
        if (!r.mean_r_att || !r.mean_r_ent) {
          worst = INFINITY;
          continue;
        }
        recomposed += f.alpha * *r.mean_r_att - f.beta * *r.mean_r_ent;
      }
      worst = std::max(worst, std::abs(r.train_loss - recomposed));
      ++rows;
    }
  }
  report(6, "component accounting: total == l_cls + alpha r_att - beta r_ent within 1e-9", rows > 0 && worst <= 1e-9,
         std::to_string(rows) + " epoch rows over " + std::to_string(g_runs.size()) + " runs, max deviation " +
             num(worst));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ClonalNet acceptance suite"};
  fs::path mnist_dir = "data/mnist";
  fs::path work = "acceptance_runs";
  app.add_option("--mnist-dir", mnist_dir, "directory holding the four MNIST IDX files");
  app.add_option("--work-dir", work, "scratch directory for run outputs");
  CLI11_PARSE(app, argc, argv);

  fs::remove_all(work);
  fs::create_directories(work);
  try {
    gradient_fidelity();
    label_invariants();
    reduction_identities();
    std::vector<std::string> repeat_notes;
    bool repeat_ok = true;
    mnist_experiment(mnist_dir, work, repeat_notes, repeat_ok);
    synthetic_experiment(work, repeat_notes, repeat_ok);
    component_accounting();
    std::string notes;
    for (const auto& n : repeat_notes) notes += (notes.empty() ? "" : ", ") + n;
    report(7, "determinism: repeated runs give byte-identical checkpoints and metrics", repeat_ok, notes);
  } catch (const std::exception& e) {
    std::cout << "FAIL acceptance aborted: " << e.what() << std::endl;
    return 1;
  }
  std::cout << (g_failures ? "acceptance: " + std::to_string(g_failures) + " criterion line(s) failed"
                           : std::string("acceptance: all criteria passed"))
            << std::endl;
  return g_failures ? 1 : 0;
}
