#pragma once

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "ptpai/common.hpp"
#include "ptpai/metrics.hpp"
#include "ptpai/train.hpp"

namespace ptpai {

// Fixed-format double printing so reports are byte-stable across runs.
inline std::string fmt_g(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

inline std::uint64_t content_hash(const std::string& bytes) {
  return fnv1a64(bytes);
}

inline std::string hash_hex(std::uint64_t h) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(h));
  return buf;
}

// ---------------------------------------------------------------------------
// small SVG plotting helpers
// ---------------------------------------------------------------------------

namespace svg {

struct Series {
  std::string label;
  std::vector<double> y;
};

inline const char* palette(std::size_t i) {
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                 "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};
  return colors[i % 8];
}

// Line chart over an implicit 0..n-1 x-axis.
inline void write_line_chart(const std::string& path, const std::string& title,
                             const std::vector<Series>& series) {
  const double w = 640, h = 400, ml = 60, mr = 150, mt = 40, mb = 40;
  double lo = 0.0, hi = 1e-9;
  std::size_t n = 0;
  for (const auto& s : series) {
    n = std::max(n, s.y.size());
    for (double v : s.y) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  if (n < 2) n = 2;
  const double span = hi - lo > 1e-12 ? hi - lo : 1.0;
  auto px = [&](std::size_t i) {
    return ml + (w - ml - mr) * static_cast<double>(i) /
                    static_cast<double>(n - 1);
  };
  auto py = [&](double v) { return h - mb - (h - mt - mb) * (v - lo) / span; };

  std::ofstream out(path);
  require(out.good(), ErrorCode::io, "cannot write " + path);
  out << "<svg xmlns='http://www.w3.org/2000/svg' width='" << w
      << "' height='" << h << "' viewBox='0 0 " << w << " " << h << "'>\n";
  out << "<rect width='100%' height='100%' fill='white'/>\n";
  out << "<text x='" << w / 2 << "' y='24' text-anchor='middle' "
      << "font-family='sans-serif' font-size='16'>" << title << "</text>\n";
  out << "<line x1='" << ml << "' y1='" << h - mb << "' x2='" << w - mr
      << "' y2='" << h - mb << "' stroke='black'/>\n";
  out << "<line x1='" << ml << "' y1='" << mt << "' x2='" << ml << "' y2='"
      << h - mb << "' stroke='black'/>\n";
  out << "<text x='" << ml - 8 << "' y='" << py(lo) + 4
      << "' text-anchor='end' font-family='sans-serif' font-size='11'>"
      << fmt_g(lo) << "</text>\n";
  out << "<text x='" << ml - 8 << "' y='" << py(hi) + 4
      << "' text-anchor='end' font-family='sans-serif' font-size='11'>"
      << fmt_g(hi) << "</text>\n";
  for (std::size_t s = 0; s < series.size(); ++s) {
    if (series[s].y.empty()) continue;
    out << "<polyline fill='none' stroke='" << palette(s)
        << "' stroke-width='1.5' points='";
    for (std::size_t i = 0; i < series[s].y.size(); ++i)
      out << px(i) << "," << py(series[s].y[i]) << " ";
    out << "'/>\n";
    const double ly = mt + 16.0 * static_cast<double>(s);
    out << "<line x1='" << w - mr + 10 << "' y1='" << ly << "' x2='"
        << w - mr + 30 << "' y2='" << ly << "' stroke='" << palette(s)
        << "' stroke-width='2'/>\n";
    out << "<text x='" << w - mr + 35 << "' y='" << ly + 4
        << "' font-family='sans-serif' font-size='12'>" << series[s].label
        << "</text>\n";
  }
  out << "</svg>\n";
}

}  // namespace svg

// Critical-difference diagram: a rank axis, one marker per method, and the
// CD bar in the top-left corner.
inline void write_cd_diagram(const std::string& path,
                             const std::vector<std::string>& methods,
                             const Vector& avg_ranks, double cd) {
  const int phi = static_cast<int>(methods.size());
  require(avg_ranks.size() == phi, ErrorCode::shape,
          "cd diagram: rank/name mismatch");
  const double w = 640, h = 120 + 22.0 * phi, ml = 40, mr = 40;
  const double axis_y = 70;
  auto px = [&](double rank) {
    return ml + (w - ml - mr) * (rank - 1.0) / std::max(phi - 1.0, 1.0);
  };
  std::vector<int> order(static_cast<std::size_t>(phi));
  for (int i = 0; i < phi; ++i) order[static_cast<std::size_t>(i)] = i;
  std::sort(order.begin(), order.end(),
            [&](int a, int b) { return avg_ranks[a] < avg_ranks[b]; });

  std::ofstream out(path);
  require(out.good(), ErrorCode::io, "cannot write " + path);
  out << "<svg xmlns='http://www.w3.org/2000/svg' width='" << w
      << "' height='" << h << "' viewBox='0 0 " << w << " " << h << "'>\n";
  out << "<rect width='100%' height='100%' fill='white'/>\n";
  out << "<text x='" << w / 2
      << "' y='20' text-anchor='middle' font-family='sans-serif' "
         "font-size='15'>Average ranks with Nemenyi CD = "
      << fmt_g(cd) << "</text>\n";
  // CD scale bar
  out << "<line x1='" << px(1.0) << "' y1='35' x2='" << px(1.0 + cd)
      << "' y2='35' stroke='black' stroke-width='2'/>\n";
  out << "<line x1='" << px(1.0) << "' y1='30' x2='" << px(1.0)
      << "' y2='40' stroke='black'/>\n";
  out << "<line x1='" << px(1.0 + cd) << "' y1='30' x2='" << px(1.0 + cd)
      << "' y2='40' stroke='black'/>\n";
  out << "<text x='" << px(1.0 + cd / 2.0)
      << "' y='30' text-anchor='middle' font-family='sans-serif' "
         "font-size='11'>CD</text>\n";
  // rank axis
  out << "<line x1='" << px(1.0) << "' y1='" << axis_y << "' x2='" << px(phi)
      << "' y2='" << axis_y << "' stroke='black' stroke-width='1.5'/>\n";
  for (int r = 1; r <= phi; ++r) {
    out << "<line x1='" << px(r) << "' y1='" << axis_y - 5 << "' x2='"
        << px(r) << "' y2='" << axis_y + 5 << "' stroke='black'/>\n";
    out << "<text x='" << px(r) << "' y='" << axis_y - 10
        << "' text-anchor='middle' font-family='sans-serif' font-size='11'>"
        << r << "</text>\n";
  }
  // method stems
  for (int i = 0; i < phi; ++i) {
    const int m = order[static_cast<std::size_t>(i)];
    const double x = px(avg_ranks[m]);
    const double ty = axis_y + 25 + 22.0 * i;
    out << "<line x1='" << x << "' y1='" << axis_y << "' x2='" << x
        << "' y2='" << ty - 12 << "' stroke='#555'/>\n";
    out << "<circle cx='" << x << "' cy='" << axis_y
        << "' r='3' fill='black'/>\n";
    out << "<text x='" << x << "' y='" << ty
        << "' text-anchor='middle' font-family='sans-serif' font-size='12'>"
        << methods[static_cast<std::size_t>(m)] << " ("
        << fmt_g(avg_ranks[m]) << ")</text>\n";
  }
  out << "</svg>\n";
}

inline void write_loss_curves(const std::string& path,
                              const TrainHistory& history,
                              const std::string& title) {
  std::vector<svg::Series> series(4);
  series[0].label = "L_C";
  series[1].label = "L_CDAN";
  series[2].label = "L_MKMMSD";
  series[3].label = "L_Aux";
  for (const auto& r : history.records) {
    series[0].y.push_back(r.lc);
    series[1].y.push_back(r.lcdan);
    series[2].y.push_back(r.lmmsd);
    series[3].y.push_back(r.laux);
  }
  svg::write_line_chart(path, title, series);
}

inline void write_weight_curves(const std::string& path,
                                const TrainHistory& history,
                                const std::vector<std::string>& class_names,
                                const std::string& title) {
  if (history.records.empty()) return;
  const int n_classes =
      static_cast<int>(history.records.front().omega_c.size());
  std::vector<svg::Series> series(static_cast<std::size_t>(n_classes));
  for (int c = 0; c < n_classes; ++c) {
    series[static_cast<std::size_t>(c)].label =
        c < static_cast<int>(class_names.size()) && !class_names.empty()
            ? class_names[static_cast<std::size_t>(c)]
            : "class " + std::to_string(c);
  }
  for (const auto& r : history.records)
    for (int c = 0; c < n_classes && c < r.omega_c.size(); ++c)
      series[static_cast<std::size_t>(c)].y.push_back(r.omega_c[c]);
  svg::write_line_chart(path, title, series);
}

}  // namespace ptpai
