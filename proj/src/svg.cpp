#include "syncsde/svg.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fmt/format.h>
#include <limits>

namespace syncsde::svg {

namespace {

constexpr double kWidth = 640.0;
constexpr double kHeight = 420.0;
constexpr double kLeft = 72.0;
constexpr double kRight = 150.0;
constexpr double kTop = 36.0;
constexpr double kBottom = 52.0;

constexpr std::array<const char*, 8> kPalette = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                                 "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

struct Axis {
  bool log = false;
  double lo = 0.0;
  double hi = 1.0;

  double to_unit(double v) const {
    const double a = log ? std::log10(v) : v;
    return (a - lo) / (hi - lo);
  }

  bool usable(double v) const { return std::isfinite(v) && (!log || v > 0.0); }

  void fit(const std::vector<double>& vals) {
    double mn = std::numeric_limits<double>::infinity();
    double mx = -mn;
    for (double v : vals) {
      if (!usable(v)) continue;
      const double a = log ? std::log10(v) : v;
      mn = std::min(mn, a);
      mx = std::max(mx, a);
    }
    if (!std::isfinite(mn)) {
      mn = 0.0;
      mx = 1.0;
    }
    if (log) {
      lo = std::floor(mn);
      hi = std::ceil(mx);
      if (hi <= lo) hi = lo + 1.0;
      return;
    }
    if (mx - mn < 1e-12 * std::max(1.0, std::abs(mx))) {
      mn -= 0.5;
      mx += 0.5;
    }
    const double step = nice_step((mx - mn) / 5.0);
    lo = std::floor(mn / step) * step;
    hi = std::ceil(mx / step) * step;
  }

  static double nice_step(double raw) {
    const double mag = std::pow(10.0, std::floor(std::log10(raw)));
    const double f = raw / mag;
    const double nice = f <= 1.0 ? 1.0 : f <= 2.0 ? 2.0 : f <= 5.0 ? 5.0 : 10.0;
    return nice * mag;
  }

  // (position in axis units, label)
  std::vector<std::pair<double, std::string>> ticks() const {
    std::vector<std::pair<double, std::string>> out;
    if (log) {
      for (double e = lo; e <= hi + 1e-9; e += 1.0) {
        out.emplace_back(e, fmt::format("1e{}", static_cast<int>(e)));
      }
      return out;
    }
    const double step = nice_step((hi - lo) / 5.0);
    for (double v = lo; v <= hi + 1e-9 * step; v += step) {
      const double clean = std::abs(v) < 1e-12 * step ? 0.0 : v;
      out.emplace_back(clean, fmt::format("{:.4g}", clean));
    }
    return out;
  }
};

}  // namespace

std::string render(const Plot& plot, const std::vector<Series>& series) {
  Axis ax{plot.log_x};
  Axis ay{plot.log_y};
  std::vector<double> xs, ys;
  for (const auto& s : series) {
    for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
      if (ax.usable(s.x[i]) && ay.usable(s.y[i])) {
        xs.push_back(s.x[i]);
        ys.push_back(s.y[i]);
      }
    }
  }
  ax.fit(xs);
  ay.fit(ys);

  const double pw = kWidth - kLeft - kRight;
  const double ph = kHeight - kTop - kBottom;
  auto px = [&](double v) { return kLeft + ax.to_unit(v) * pw; };
  auto py = [&](double v) { return kTop + (1.0 - ay.to_unit(v)) * ph; };

  std::string out = fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{0}\" height=\"{1}\" "
      "viewBox=\"0 0 {0} {1}\" font-family=\"sans-serif\" font-size=\"12\">\n"
      "<rect width=\"{0}\" height=\"{1}\" fill=\"white\"/>\n",
      kWidth, kHeight);
  out += fmt::format("<text x=\"{:.1f}\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">{}</text>\n",
                     kLeft + pw / 2.0, escape(plot.title));

  for (const auto& [pos, label] : ax.ticks()) {
    const double x = kLeft + (pos - ax.lo) / (ax.hi - ax.lo) * pw;
    out += fmt::format("<line x1=\"{0:.2f}\" y1=\"{1:.2f}\" x2=\"{0:.2f}\" y2=\"{2:.2f}\" "
                       "stroke=\"#e0e0e0\"/>\n",
                       x, kTop, kTop + ph);
    out += fmt::format("<text x=\"{:.2f}\" y=\"{:.2f}\" text-anchor=\"middle\">{}</text>\n", x,
                       kTop + ph + 16.0, escape(label));
  }
  for (const auto& [pos, label] : ay.ticks()) {
    const double y = kTop + (1.0 - (pos - ay.lo) / (ay.hi - ay.lo)) * ph;
    out += fmt::format("<line x1=\"{1:.2f}\" y1=\"{0:.2f}\" x2=\"{2:.2f}\" y2=\"{0:.2f}\" "
                       "stroke=\"#e0e0e0\"/>\n",
                       y, kLeft, kLeft + pw);
    out += fmt::format("<text x=\"{:.2f}\" y=\"{:.2f}\" text-anchor=\"end\">{}</text>\n",
                       kLeft - 6.0, y + 4.0, escape(label));
  }
  out += fmt::format("<rect x=\"{:.2f}\" y=\"{:.2f}\" width=\"{:.2f}\" height=\"{:.2f}\" "
                     "fill=\"none\" stroke=\"black\"/>\n",
                     kLeft, kTop, pw, ph);
  out += fmt::format("<text x=\"{:.2f}\" y=\"{:.2f}\" text-anchor=\"middle\">{}</text>\n",
                     kLeft + pw / 2.0, kHeight - 12.0, escape(plot.x_label));
  out += fmt::format("<text x=\"16\" y=\"{0:.2f}\" text-anchor=\"middle\" "
                     "transform=\"rotate(-90 16 {0:.2f})\">{1}</text>\n",
                     kTop + ph / 2.0, escape(plot.y_label));

  for (std::size_t si = 0; si < series.size(); ++si) {
    const auto& s = series[si];
    const char* color = kPalette[si % kPalette.size()];
    std::string points;
    std::string marks;
    for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
      if (!ax.usable(s.x[i]) || !ay.usable(s.y[i])) continue;
      const double x = px(s.x[i]);
      const double y = py(s.y[i]);
      points += fmt::format("{:.2f},{:.2f} ", x, y);
      if (s.markers) {
        marks += fmt::format("<circle cx=\"{:.2f}\" cy=\"{:.2f}\" r=\"3\" fill=\"{}\"/>\n", x, y,
                             color);
      }
    }
    if (s.line && !points.empty()) {
      points.pop_back();
      out += fmt::format("<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\" "
                         "points=\"{}\"/>\n",
                         color, points);
    }
    out += marks;
    const double ly = kTop + 14.0 + 18.0 * static_cast<double>(si);
    out += fmt::format("<line x1=\"{0:.2f}\" y1=\"{1:.2f}\" x2=\"{2:.2f}\" y2=\"{1:.2f}\" "
                       "stroke=\"{3}\" stroke-width=\"2\"/>\n",
                       kLeft + pw + 10.0, ly, kLeft + pw + 30.0, color);
    out += fmt::format("<text x=\"{:.2f}\" y=\"{:.2f}\">{}</text>\n", kLeft + pw + 36.0, ly + 4.0,
                       escape(s.name));
  }
  out += "</svg>\n";
  return out;
}

}  // namespace syncsde::svg
