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

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace lpnas {

namespace {

constexpr double kWidth = 640, kHeight = 420;
constexpr double kLeft = 70, kRight = 20, kTop = 40, kBottom = 55;

std::string Fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

std::string Fmt6(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

struct Range {
  double lo = 0, hi = 1;
  void Include(double v) {
    if (!std::isfinite(v)) return;
    if (empty) {
      lo = hi = v;
      empty = false;
    } else {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  void Pad() {
    if (empty) {
      lo = 0;
      hi = 1;
    }
    if (hi - lo < 1e-9) {
      lo -= 0.5;
      hi += 0.5;
    }
    const double pad = 0.05 * (hi - lo);
    lo -= pad;
    hi += pad;
  }
  bool empty = true;
};

// Minimal fixed-layout plot canvas.
class Canvas {
 public:
  Canvas(std::string title, std::string xlabel, std::string ylabel, Range x, Range y)
      : x_(x), y_(y) {
    x_.Pad();
    y_.Pad();
    out_ << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\""
         << kHeight << "\" viewBox=\"0 0 " << kWidth << ' ' << kHeight << "\">\n"
         << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
         << "<text x=\"" << kWidth / 2 << "\" y=\"22\" text-anchor=\"middle\" "
         << "font-family=\"sans-serif\" font-size=\"15\">" << title << "</text>\n";
    const double x0 = kLeft, x1 = kWidth - kRight, y0 = kHeight - kBottom, y1 = kTop;
    out_ << "<g stroke=\"black\" stroke-width=\"1\">\n"
         << "<line x1=\"" << x0 << "\" y1=\"" << y0 << "\" x2=\"" << x1 << "\" y2=\"" << y0
         << "\"/>\n<line x1=\"" << x0 << "\" y1=\"" << y0 << "\" x2=\"" << x0 << "\" y2=\""
         << y1 << "\"/>\n</g>\n";
    out_ << "<g font-family=\"sans-serif\" font-size=\"11\">\n";
    for (int i = 0; i <= 4; ++i) {
      const double xv = x_.lo + (x_.hi - x_.lo) * i / 4;
      const double yv = y_.lo + (y_.hi - y_.lo) * i / 4;
      out_ << "<text x=\"" << Fmt(X(xv)) << "\" y=\"" << Fmt(y0 + 16)
           << "\" text-anchor=\"middle\">" << Tick(xv) << "</text>\n";
      out_ << "<text x=\"" << Fmt(x0 - 6) << "\" y=\"" << Fmt(Y(yv) + 4)
           << "\" text-anchor=\"end\">" << Tick(yv) << "</text>\n";
    }
    out_ << "<text x=\"" << Fmt((x0 + x1) / 2) << "\" y=\"" << Fmt(kHeight - 14)
         << "\" text-anchor=\"middle\">" << xlabel << "</text>\n";
    out_ << "<text x=\"16\" y=\"" << Fmt((y0 + y1) / 2) << "\" text-anchor=\"middle\" "
         << "transform=\"rotate(-90 16 " << Fmt((y0 + y1) / 2) << ")\">" << ylabel
         << "</text>\n</g>\n";
  }

  double X(double v) const {
    return kLeft + (v - x_.lo) / (x_.hi - x_.lo) * (kWidth - kLeft - kRight);
  }
  double Y(double v) const {
    return kHeight - kBottom - (v - y_.lo) / (y_.hi - y_.lo) * (kHeight - kTop - kBottom);
  }

  void Polyline(const std::vector<std::pair<double, double>>& pts, const std::string& color,
                bool dashed = false) {
    if (pts.empty()) return;
    out_ << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\""
         << (dashed ? " stroke-dasharray=\"6 4\"" : "") << " points=\"";
    for (std::size_t i = 0; i < pts.size(); ++i) {
      if (!std::isfinite(pts[i].second)) continue;
      out_ << (i ? " " : "") << Fmt(X(pts[i].first)) << ',' << Fmt(Y(pts[i].second));
    }
    out_ << "\"/>\n";
  }

  void Segment(double xa, double ya, double xb, double yb, const std::string& color) {
    out_ << "<line x1=\"" << Fmt(X(xa)) << "\" y1=\"" << Fmt(Y(ya)) << "\" x2=\""
         << Fmt(X(xb)) << "\" y2=\"" << Fmt(Y(yb)) << "\" stroke=\"" << color
         << "\" stroke-width=\"1\"/>\n";
  }

  void Circle(double x, double y, const std::string& color) {
    out_ << "<circle cx=\"" << Fmt(X(x)) << "\" cy=\"" << Fmt(Y(y)) << "\" r=\"3.5\" fill=\""
         << color << "\"/>\n";
  }

  void Square(double x, double y, const std::string& color) {
    out_ << "<rect x=\"" << Fmt(X(x) - 3.5) << "\" y=\"" << Fmt(Y(y) - 3.5)
         << "\" width=\"7\" height=\"7\" fill=\"none\" stroke=\"" << color << "\"/>\n";
  }

  void Legend(const std::vector<std::pair<std::string, std::string>>& entries) {
    double y = kTop + 6;
    out_ << "<g font-family=\"sans-serif\" font-size=\"11\">\n";
    for (const auto& [label, color] : entries) {
      const double x = kWidth - kRight - 150;
      out_ << "<rect x=\"" << Fmt(x) << "\" y=\"" << Fmt(y - 8) << "\" width=\"10\" "
           << "height=\"10\" fill=\"" << color << "\"/>\n<text x=\"" << Fmt(x + 16)
           << "\" y=\"" << Fmt(y + 1) << "\">" << label << "</text>\n";
      y += 16;
    }
    out_ << "</g>\n";
  }

  std::string Finish() {
    out_ << "</svg>\n";
    return out_.str();
  }

 private:
  static std::string Tick(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), std::fabs(v) >= 100 ? "%.0f" : "%.3g", v);
    return buf;
  }

  Range x_, y_;
  std::ostringstream out_;
};

const char* BranchColor(Branch b) { return b == Branch::kPtq ? "#1f77b4" : "#d62728"; }

void WriteFile(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << content;
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace

RunHistory LoadRunHistory(const std::filesystem::path& run_dir) {
  std::ifstream in(run_dir / "history.csv");
  if (!in) throw IoError("missing " + (run_dir / "history.csv").string());
  RunHistory run;
  run.history = ReadHistoryCsv(in, &run.branch);
  if (run.history.empty()) throw IoError("empty history in " + run_dir.string());
  return run;
}

std::string RenderScatterSvg(const RunHistory& run) {
  Range x, y;
  for (const auto& g : run.history) {
    for (const auto& c : g.rows) {
      if (c.diverged) continue;
      x.Include(c.measurement.fps);
      y.Include(c.gpu_miou);
      y.Include(c.measurement.miou_device);
    }
  }
  Canvas cv(std::string("mIoU vs FPS (") + BranchName(run.branch) + ")", "device FPS", "mIoU",
            x, y);
  for (const auto& g : run.history) {
    for (const auto& c : g.rows) {
      if (c.diverged || c.op == "elite") continue;
      cv.Segment(c.measurement.fps, c.gpu_miou, c.measurement.fps, c.measurement.miou_device,
                 "#999999");
      cv.Square(c.measurement.fps, c.gpu_miou, "#2ca02c");
      cv.Circle(c.measurement.fps, c.measurement.miou_device, BranchColor(run.branch));
    }
  }
  cv.Legend({{"GPU (FP32)", "#2ca02c"}, {"device (FP16)", BranchColor(run.branch)}});
  return cv.Finish();
}

std::string RenderFitnessSvg(const std::vector<RunHistory>& runs) {
  Range x, y;
  for (const auto& r : runs) {
    for (const auto& g : r.history) {
      x.Include(g.generation);
      y.Include(g.max_fitness);
      y.Include(g.median_fitness);
    }
  }
  Canvas cv("Fitness per generation", "generation", "fitness", x, y);
  std::vector<std::pair<std::string, std::string>> legend;
  for (const auto& r : runs) {
    std::vector<std::pair<double, double>> mx, md;
    for (const auto& g : r.history) {
      mx.emplace_back(g.generation, g.max_fitness);
      md.emplace_back(g.generation, g.median_fitness);
    }
    cv.Polyline(mx, BranchColor(r.branch));
    cv.Polyline(md, BranchColor(r.branch), /*dashed=*/true);
    legend.emplace_back(std::string(BranchName(r.branch)) + " max (solid)", BranchColor(r.branch));
    legend.emplace_back(std::string(BranchName(r.branch)) + " median (dashed)",
                        BranchColor(r.branch));
  }
  cv.Legend(legend);
  return cv.Finish();
}

std::string RenderProgressionSvg(const std::vector<RunHistory>& runs) {
  // mIoU on the left scale; FPS is normalised by its run maximum.
  Range x, y;
  y.Include(0);
  y.Include(1);
  for (const auto& r : runs) {
    for (const auto& g : r.history) x.Include(g.generation);
  }
  Canvas cv("Max device mIoU and max FPS (normalised) per generation", "generation",
            "mIoU / FPS ÷ max", x, y);
  std::vector<std::pair<std::string, std::string>> legend;
  for (const auto& r : runs) {
    double fps_max = 0;
    for (const auto& g : r.history) fps_max = std::max(fps_max, g.max_fps);
    std::vector<std::pair<double, double>> iou, fps;
    for (const auto& g : r.history) {
      iou.emplace_back(g.generation, g.max_device_miou);
      fps.emplace_back(g.generation, fps_max > 0 ? g.max_fps / fps_max : 0.0);
    }
    cv.Polyline(iou, BranchColor(r.branch));
    cv.Polyline(fps, BranchColor(r.branch), /*dashed=*/true);
    legend.emplace_back(std::string(BranchName(r.branch)) + " mIoU (solid)", BranchColor(r.branch));
    legend.emplace_back(std::string(BranchName(r.branch)) + " FPS (dashed, max " +
                            Fmt(fps_max) + ")",
                        BranchColor(r.branch));
  }
  cv.Legend(legend);
  return cv.Finish();
}

std::vector<std::string> write_report(const std::vector<RunHistory>& runs_in,
                                      const std::filesystem::path& out_dir) {
  if (runs_in.empty() || runs_in.size() > 2) {
    throw InvalidArgument("report takes one run or one ptq/aligned pair");
  }
  std::vector<RunHistory> runs = runs_in;
  std::sort(runs.begin(), runs.end(), [](const RunHistory& a, const RunHistory& b) {
    return static_cast<int>(a.branch) < static_cast<int>(b.branch);
  });
  std::optional<GapStats> gap;
  if (runs.size() == 2) {
    if (runs[0].branch == runs[1].branch) {
      throw InvalidArgument("report pair must contain one ptq and one aligned run");
    }
    gap = paired_gap_report(runs[0].history, runs[1].history);
  }
  std::filesystem::create_directories(out_dir);
  std::vector<std::string> files;
  for (const auto& r : runs) {
    const std::string name = std::string("scatter_") + BranchName(r.branch) + ".svg";
    WriteFile(out_dir / name, RenderScatterSvg(r));
    files.push_back(name);
  }
  WriteFile(out_dir / "fitness.svg", RenderFitnessSvg(runs));
  files.push_back("fitness.svg");
  WriteFile(out_dir / "progression.svg", RenderProgressionSvg(runs));
  files.push_back("progression.svg");

  std::ostringstream summary;
  summary << "branch,gen,max_fitness,median_fitness,max_gpu_miou,max_device_miou,max_fps\n";
  for (const auto& r : runs) {
    for (const auto& g : r.history) {
      summary << BranchName(r.branch) << ',' << g.generation << ',' << Fmt6(g.max_fitness)
              << ',' << Fmt6(g.median_fitness) << ',' << Fmt6(g.max_gpu_miou) << ','
              << Fmt6(g.max_device_miou) << ',' << Fmt6(g.max_fps) << '\n';
    }
  }
  WriteFile(out_dir / "summary.csv", summary.str());
  files.push_back("summary.csv");

  if (gap) {
    std::ostringstream g;
    g << "n_ptq,n_aligned,mean_gap_ptq,median_gap_ptq,mean_gap_aligned,median_gap_aligned,"
         "recovered_fraction,pairs,aligned_smaller,ties,sign_test_p\n"
      << gap->n_ptq << ',' << gap->n_aligned << ',' << Fmt6(gap->mean_gap_ptq) << ','
      << Fmt6(gap->median_gap_ptq) << ',' << Fmt6(gap->mean_gap_aligned) << ','
      << Fmt6(gap->median_gap_aligned) << ',' << Fmt6(gap->recovered_fraction) << ','
      << gap->pairs << ',' << gap->aligned_smaller << ',' << gap->ties << ','
      << Fmt6(gap->sign_test_p) << '\n';
    WriteFile(out_dir / "gap.csv", g.str());
    files.push_back("gap.csv");
  }
  return files;
}

}  // namespace lpnas
