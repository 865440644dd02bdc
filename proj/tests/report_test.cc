// Copyright 2026 The LPNAS Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "lpnas/report.h"

#include <gtest/gtest.h>

#include <fstream>
#include <limits>
#include <set>

#include "support/test_util.h"

namespace lpnas {
namespace {

using testing::ReadBytes;
using testing::TempDir;

// Two generations of two hand-built candidates; every run shares slots and
// seeds so ptq/aligned variants pair up.
RunHistory MakeRun(Branch branch, double device_shift) {
  RunHistory run;
  run.branch = branch;
  const FitnessConfig fc;
  for (int g = 0; g < 2; ++g) {
    std::vector<Candidate> rows;
    for (int s = 0; s < 2; ++s) {
      Candidate c;
      c.genotype = parse(s == 0 ? "B:CA,k3,c8,aR;H" : "B:CA,k5,c16,aR;P:max;H");
      c.generation = g;
      c.slot = s;
      c.op = g == 0 ? "random" : (s == 0 ? "elite" : "offspring");
      c.parent_a = g == 0 ? -1 : 0;
      c.parent_b = g == 0 || s == 0 ? -1 : 1;
      c.seed = 100 + 10 * g + s;
      c.params = 250 + 1000 * s;
      c.macs = 64000 * (s + 1);
      c.measurement.fps = 40.0 + 15 * s + g;
      c.measurement.latency_ms = 1000.0 / c.measurement.fps;
      c.gpu_miou = 0.6 + 0.05 * s + 0.01 * g;
      c.measurement.miou_device = c.gpu_miou - device_shift;
      c.fitness = fitness(c.measurement.fps, c.measurement.miou_device, fc);
      c.evaluated = true;
      rows.push_back(std::move(c));
    }
    run.history.push_back(Summarize(g, std::move(rows)));
  }
  return run;
}

std::set<std::string> Files(const std::filesystem::path& dir) {
  std::set<std::string> out;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    out.insert(e.path().filename().string());
  }
  return out;
}

TEST(Report, SingleRunEmitsThreeSvgsAndOneCsv) {
  TempDir dir("report_single");
  const auto files = write_report({MakeRun(Branch::kPtq, 0.02)}, dir.path());
  const std::set<std::string> expected{"scatter_ptq.svg", "fitness.svg", "progression.svg",
                                       "summary.csv"};
  EXPECT_EQ(std::set<std::string>(files.begin(), files.end()), expected);
  EXPECT_EQ(Files(dir.path()), expected);
  const std::string svg = ReadBytes(dir.path() / "fitness.svg");
  EXPECT_EQ(svg.rfind("<svg", 0), 0u);
  EXPECT_NE(svg.find("</svg>"), std::string::npos);
}

TEST(Report, SummaryRowsMatchAggregates) {
  TempDir dir("report_summary");
  const RunHistory run = MakeRun(Branch::kPtq, 0.02);
  write_report({run}, dir.path());
  const std::string csv = ReadBytes(dir.path() / "summary.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')),
            "branch,gen,max_fitness,median_fitness,max_gpu_miou,max_device_miou,max_fps");
  int lines = 0;
  for (char ch : csv) lines += ch == '\n';
  EXPECT_EQ(lines, 3);
  EXPECT_NE(csv.find("ptq,1,"), std::string::npos);
}

TEST(Report, PairedRunsAddGapTable) {
  TempDir dir("report_pair");
  const auto files = write_report({MakeRun(Branch::kAligned, 0.01), MakeRun(Branch::kPtq, 0.04)},
                                  dir.path());
  const std::set<std::string> got(files.begin(), files.end());
  EXPECT_TRUE(got.count("gap.csv"));
  EXPECT_TRUE(got.count("scatter_ptq.svg"));
  EXPECT_TRUE(got.count("scatter_aligned.svg"));
  const std::string gap = ReadBytes(dir.path() / "gap.csv");
  const std::string row = gap.substr(gap.find('\n') + 1);
  // Elite rows are excluded: 3 fresh rows per branch, gaps 0.04 vs 0.01.
  EXPECT_EQ(row.substr(0, 4), "3,3,");
  EXPECT_NE(row.find(",0.750000,"), std::string::npos) << row;
  EXPECT_NE(row.find(",3,3,0,"), std::string::npos) << row;
}

TEST(Report, IdenticalInputsGiveIdenticalBytes) {
  TempDir a("report_det_a"), b("report_det_b");
  const std::vector<RunHistory> runs{MakeRun(Branch::kPtq, 0.03), MakeRun(Branch::kAligned, 0.01)};
  const auto fa = write_report(runs, a.path());
  const auto fb = write_report(runs, b.path());
  ASSERT_EQ(fa, fb);
  for (const auto& f : fa) EXPECT_EQ(ReadBytes(a.path() / f), ReadBytes(b.path() / f)) << f;
}

TEST(Report, RenderersAreIndependentOfRunOrder) {
  const RunHistory p = MakeRun(Branch::kPtq, 0.03), q = MakeRun(Branch::kAligned, 0.01);
  TempDir a("report_order_a"), b("report_order_b");
  write_report({p, q}, a.path());
  write_report({q, p}, b.path());
  for (const char* f : {"fitness.svg", "progression.svg", "summary.csv", "gap.csv"}) {
    EXPECT_EQ(ReadBytes(a.path() / f), ReadBytes(b.path() / f)) << f;
  }
}

TEST(Report, ScatterPairsGpuAndDevicePoints) {
  const std::string svg = RenderScatterSvg(MakeRun(Branch::kPtq, 0.05));
  EXPECT_NE(svg.find("<svg"), std::string::npos);
  std::size_t lines = 0;
  for (std::size_t p = svg.find("<line"); p != std::string::npos; p = svg.find("<line", p + 1)) {
    ++lines;
  }
  EXPECT_GE(lines, 4u);  // one GPU to device connector per candidate row
}

TEST(Report, DivergedRowsDoNotBreakRendering) {
  RunHistory run = MakeRun(Branch::kPtq, 0.02);
  Candidate& c = run.history[1].rows[1];
  c.diverged = true;
  c.fitness = -std::numeric_limits<double>::infinity();
  run.history[1] = Summarize(1, run.history[1].rows);
  for (const std::string& s :
       {RenderScatterSvg(run), RenderFitnessSvg({run}), RenderProgressionSvg({run})}) {
    EXPECT_EQ(s.find("inf"), std::string::npos);
    EXPECT_EQ(s.find("nan"), std::string::npos);
  }
}

TEST(Report, RejectsBadRunSets) {
  TempDir dir("report_bad");
  const RunHistory p = MakeRun(Branch::kPtq, 0.01);
  EXPECT_THROW(write_report({}, dir.path()), InvalidArgument);
  EXPECT_THROW(write_report({p, p}, dir.path()), InvalidArgument);
  EXPECT_THROW(write_report({p, MakeRun(Branch::kAligned, 0), p}, dir.path()), InvalidArgument);
  RunHistory other = MakeRun(Branch::kAligned, 0.01);
  other.history[0].rows[0].seed = 999;
  EXPECT_THROW(write_report({p, other}, dir.path()), InvalidArgument);
}

TEST(Report, LoadRunHistoryReadsBranchAndRows) {
  TempDir dir("report_load");
  const RunHistory run = MakeRun(Branch::kAligned, 0.02);
  {
    std::ofstream out(dir.path() / "history.csv", std::ios::binary);
    WriteHistoryCsv(out, run.history, run.branch);
  }
  const RunHistory back = LoadRunHistory(dir.path());
  EXPECT_EQ(back.branch, Branch::kAligned);
  ASSERT_EQ(back.history.size(), 2u);
  EXPECT_EQ(back.history[1].rows.size(), 2u);
  EXPECT_EQ(RenderFitnessSvg({back}), RenderFitnessSvg({run}));
  TempDir empty("report_load_empty");
  EXPECT_THROW(LoadRunHistory(empty.path()), IoError);
}

}  // namespace
}  // namespace lpnas
