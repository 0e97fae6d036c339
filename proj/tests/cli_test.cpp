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

#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "clonalnet/cli.hpp"
#include "support/test_support.hpp"

namespace clonalnet {
namespace {

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

Outcome invoke(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

const std::vector<std::string> kTiny{"--per-class", "30", "--n-pairs", "2", "--dim", "4", "--hidden",
                                      "6",          "--epochs",    "2",  "--batch-size", "16"};

std::vector<std::string> with(std::vector<std::string> head, const std::vector<std::string>& tail = kTiny) {
  head.insert(head.end(), tail.begin(), tail.end());
  return head;
}

TEST(Cli, ClonalWithoutBaselineIsAUsageError) {
  const auto r = invoke(with({"train-clonal", "--out", testing::temp_dir("cli_nobase").string()}));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("error: missing-baseline:"), std::string::npos) << r.err;

  const auto kd = invoke(with({"train-kd", "--baseline", "/nonexistent/ckpt"}));
  EXPECT_EQ(kd.code, 2);
  EXPECT_NE(kd.err.find("missing-baseline"), std::string::npos) << kd.err;
}

TEST(Cli, UsageErrors) {
  EXPECT_EQ(invoke({}).code, 2);
  EXPECT_EQ(invoke({"frobnicate"}).code, 2);
  EXPECT_EQ(invoke({"train-baseline", "--config", "/nonexistent.conf"}).code, 2);
  EXPECT_EQ(invoke({"eval"}).code, 2);
  const auto mismatch = invoke(with({"train-baseline", "--loss", "kd"}));
  EXPECT_EQ(mismatch.code, 2);
  EXPECT_EQ(invoke({"train-baseline", "--help"}).code, 0);
}

TEST(Cli, BaselineClonalEvalAndLabelStats) {
  const auto dir = testing::temp_dir("cli_flow");
  const auto base = invoke(with({"train-baseline", "--out", (dir / "base").string()}));
  ASSERT_EQ(base.code, 0) << base.err;
  EXPECT_EQ(base.out.rfind("test_acc,", 0), 0u);
  for (const char* f : {"checkpoint.ckpt", "metrics.csv", "mean.txt"}) EXPECT_TRUE(std::filesystem::exists(dir / "base" / f));

  const auto ckpt = (dir / "base" / "checkpoint.ckpt").string();
  const auto clonal = invoke(with({"train-clonal", "--baseline", ckpt, "--out", (dir / "clonal").string()}));
  ASSERT_EQ(clonal.code, 0) << clonal.err;
  const auto metrics = slurp(dir / "clonal" / "metrics.csv");
  EXPECT_EQ(metrics.rfind(std::string(kMetricsHeader), 0), 0u);

  const auto eval = invoke(with({"eval", "--checkpoint", ckpt, "--out", (dir / "eval").string()}));
  ASSERT_EQ(eval.code, 0) << eval.err;
  EXPECT_EQ(slurp(dir / "eval" / "eval.csv"), eval.out);
  EXPECT_NE(eval.out.find("\ntest,"), std::string::npos);

  const auto stats = invoke(with({"label-stats", "--baseline", ckpt, "--out", (dir / "stats").string()}));
  ASSERT_EQ(stats.code, 0) << stats.err;
  EXPECT_NE(stats.out.find("partner_rate,"), std::string::npos);
  EXPECT_NE(stats.out.find("non_partner_rate,"), std::string::npos);
  EXPECT_TRUE(std::filesystem::exists(dir / "stats" / "label_stats.csv"));
}

TEST(Cli, RerunsAreByteIdentical) {
  const auto dir = testing::temp_dir("cli_idem");
  ASSERT_EQ(invoke(with({"train-baseline", "--seed", "4", "--out", (dir / "a").string()})).code, 0);
  ASSERT_EQ(invoke(with({"train-baseline", "--seed", "4", "--out", (dir / "b").string()})).code, 0);
  for (const char* f : {"checkpoint.ckpt", "metrics.csv", "mean.txt"}) {
    EXPECT_EQ(slurp(dir / "a" / f), slurp(dir / "b" / f)) << f;
  }
}

TEST(Cli, ConfigFileAndFlagOverride) {
  const auto dir = testing::temp_dir("cli_config");
  std::ofstream(dir / "run.conf") << "# tiny run\nepochs = 1\nper_class = 20\nn_pairs = 2\ndim = 3\nhidden = 4\n";
  const auto r = invoke({"train-baseline", "--config", (dir / "run.conf").string(), "--epochs", "3", "--out",
                         (dir / "out").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  std::ifstream in(dir / "out" / "metrics.csv");
  EXPECT_EQ(read_metrics_csv(in).rows.size(), 3u);
  EXPECT_EQ(load_checkpoint(dir / "out" / "checkpoint.ckpt").input_dim(), 3u);
}

TEST(Cli, GradcheckPrintsRowAndPasses) {
  for (const char* loss : {"baseline_ce", "focusing_picking", "label_smoothing", "kd"}) {
    const auto r = invoke({"gradcheck", "--loss", loss, "--seed", "2", "--n-coords", "200"});
    EXPECT_EQ(r.code, 0) << loss << r.err;
    EXPECT_EQ(r.out.rfind("loss_kind,max_rel_error,n_checked,step,seed\n" + std::string(loss) + ",", 0), 0u) << r.out;
  }
  // A step this large cannot meet the tolerance.
  EXPECT_EQ(invoke({"gradcheck", "--loss", "kd", "--step", "0.5"}).code, 1);
}

TEST(Cli, CompareWritesEveryMethodAndSummary) {
  const auto dir = testing::temp_dir("cli_compare");
  const auto r = invoke(with({"compare", "--seeds", "2", "--out", dir.string()}));
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* m : {"baseline", "clonal", "kd", "ls"}) {
    for (const char* s : {"seed_0", "seed_1"}) EXPECT_TRUE(std::filesystem::exists(dir / m / s / "metrics.csv"));
  }
  const auto summary = slurp(dir / "summary.csv");
  EXPECT_EQ(summary, r.out);
  EXPECT_EQ(summary.rfind("method,n_runs,mean_test_acc,std_test_acc,improvement_pp,relative_improvement\nbaseline,2,", 0),
            0u);
}

TEST(CompareReport, SingleSeedAndIdenticalRuns) {
  const auto dir = testing::temp_dir("cli_report");
  auto write = [&](const std::string& name, double acc) {
    std::filesystem::create_directories(dir / name);
    RunMetrics m;
    EpochRow row;
    row.epoch = 1;
    row.test_acc = acc;
    m.rows.push_back(row);
    std::ofstream out(dir / name / "metrics.csv");
    write_metrics_csv(out, m);
  };
  write("b0", 0.9);
  write("c0", 0.9);
  write("c1", 0.95);
  const auto rows = compare_report({{"baseline", dir / "b0"}, {"clonal", dir / "c0"}, {"clonal", dir / "c1"}});
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0].std_test_acc, 0.0);
  EXPECT_EQ(rows[0].improvement_pp, 0.0);
  EXPECT_EQ(rows[1].n_runs, 2u);
  EXPECT_NEAR(rows[1].mean_test_acc, 0.925, 1e-15);
  EXPECT_NEAR(rows[1].std_test_acc, 0.05 / std::sqrt(2.0), 1e-15);
  EXPECT_NEAR(rows[1].improvement_pp, 2.5, 1e-12);
  EXPECT_NEAR(rows[1].relative_improvement, 0.025 / 0.9, 1e-15);

  const auto same = compare_report({{"baseline", dir / "b0"}, {"clonal", dir / "c0"}});
  EXPECT_EQ(same[1].improvement_pp, 0.0);
  EXPECT_EQ(same[1].relative_improvement, 0.0);
  EXPECT_THROW(compare_report({{"baseline", dir / "missing"}}), Error);
}

}  // namespace
}  // namespace clonalnet
