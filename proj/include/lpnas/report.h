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

#ifndef LPNAS_REPORT_H_
#define LPNAS_REPORT_H_

#include <filesystem>
#include <string>
#include <vector>

#include "lpnas/search.h"

namespace lpnas {

struct RunHistory {
  Branch branch = Branch::kPtq;
  std::vector<GenerationLog> history;
};

// Reads <run_dir>/history.csv.
RunHistory LoadRunHistory(const std::filesystem::path& run_dir);

// One run: scatter_<branch>.svg, fitness.svg, progression.svg, summary.csv.
// A ptq + aligned pair additionally yields gap.csv and one scatter per
// branch. Returns the written file names in a fixed order. Throws
// InvalidArgument for more than two runs, two runs of one branch, or pairs
// that were not run with shared seeds.
std::vector<std::string> write_report(const std::vector<RunHistory>& runs,
                                      const std::filesystem::path& out_dir);

// Deterministic SVG renderers (exposed for tests).
std::string RenderScatterSvg(const RunHistory& run);
std::string RenderFitnessSvg(const std::vector<RunHistory>& runs);
std::string RenderProgressionSvg(const std::vector<RunHistory>& runs);

}  // namespace lpnas

#endif  // LPNAS_REPORT_H_
