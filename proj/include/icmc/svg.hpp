#pragma once

// Dependency-free SVG output: KL curves over training, attention heatmaps,
// positional profiles.

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "icmc/numcore.hpp"
#include "icmc/train.hpp"

namespace icmc::svg {

struct Series {
  std::string label;
  std::vector<double> x, y;
  std::string color;
};

struct Frame {
  double width = 640, height = 400;
  double left = 64, right = 150, top = 36, bottom = 48;
  double plot_w() const { return width - left - right; }
  double plot_h() const { return height - top - bottom; }
};

namespace detail {

inline std::string esc(const std::string& s) {
  std::string o;
  for (char c : s) switch (c) {
      case '<': o += "&lt;"; break;
      case '>': o += "&gt;"; break;
      case '&': o += "&amp;"; break;
      case '"': o += "&quot;"; break;
      default: o += c;
    }
  return o;
}

inline std::string num(double x) {
  std::ostringstream os;
  os.precision(4);
  os << x;
  return os.str();
}

inline void open(std::ostringstream& os, const Frame& f, const std::string& title) {
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << f.width << "\" height=\"" << f.height
     << "\" font-family=\"sans-serif\" font-size=\"11\">\n"
     << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
     << "<text x=\"" << f.width / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" << esc(title)
     << "</text>\n";
}

// blue (0) to yellow (1)
inline std::string ramp(double u) {
  u = std::clamp(u, 0.0, 1.0);
  const int r = static_cast<int>(std::lround(30 + 220 * u));
  const int g = static_cast<int>(std::lround(40 + 190 * u));
  const int b = static_cast<int>(std::lround(120 - 90 * u));
  std::ostringstream os;
  os << "rgb(" << r << ',' << g << ',' << b << ')';
  return os.str();
}

}  // namespace detail

/// Line chart. `log_y` draws log10 of positive values (non-positive points are
/// skipped). With no data the axes are drawn over [0,1].
inline std::string line_chart(const std::vector<Series>& series, const std::string& title, const std::string& xlabel,
                              const std::string& ylabel, bool log_y = false, Frame f = {}) {
  auto ty = [&](double y) { return log_y ? std::log10(y) : y; };
  double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
  for (const auto& s : series)
    for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i]) || (log_y && !(s.y[i] > 0))) continue;
      x0 = std::min(x0, s.x[i]), x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, ty(s.y[i])), y1 = std::max(y1, ty(s.y[i]));
    }
  if (!(x0 <= x1)) x0 = 0, x1 = 1;
  if (!(y0 <= y1)) y0 = 0, y1 = 1;
  if (x1 == x0) x1 = x0 + 1;
  if (y1 == y0) y1 = y0 + 1;
  const double pad = 0.04 * (y1 - y0);
  y0 -= pad, y1 += pad;
  auto px = [&](double x) { return f.left + (x - x0) / (x1 - x0) * f.plot_w(); };
  auto py = [&](double y) { return f.top + (1.0 - (ty(y) - y0) / (y1 - y0)) * f.plot_h(); };

  std::ostringstream os;
  detail::open(os, f, title);
  os << "<rect x=\"" << f.left << "\" y=\"" << f.top << "\" width=\"" << f.plot_w() << "\" height=\"" << f.plot_h()
     << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = x0 + (x1 - x0) * i / 4.0, yv = y0 + (y1 - y0) * i / 4.0;
    const double X = f.left + f.plot_w() * i / 4.0, Y = f.top + f.plot_h() * (1.0 - i / 4.0);
    os << "<text x=\"" << X << "\" y=\"" << f.top + f.plot_h() + 16 << "\" text-anchor=\"middle\">" << detail::num(xv)
       << "</text>\n";
    os << "<text x=\"" << f.left - 6 << "\" y=\"" << Y + 4 << "\" text-anchor=\"end\">"
       << detail::num(log_y ? std::pow(10.0, yv) : yv) << "</text>\n";
    os << "<line x1=\"" << f.left << "\" x2=\"" << f.left + f.plot_w() << "\" y1=\"" << Y << "\" y2=\"" << Y
       << "\" stroke=\"#ddd\"/>\n";
  }
  os << "<text x=\"" << f.left + f.plot_w() / 2 << "\" y=\"" << f.height - 10 << "\" text-anchor=\"middle\">"
     << detail::esc(xlabel) << "</text>\n";
  os << "<text transform=\"translate(14," << f.top + f.plot_h() / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
     << detail::esc(ylabel) << "</text>\n";

  for (std::size_t si = 0; si < series.size(); ++si) {
    const auto& s = series[si];
    std::ostringstream pts;
    for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i]) || (log_y && !(s.y[i] > 0))) continue;
      pts << px(s.x[i]) << ',' << py(s.y[i]) << ' ';
    }
    if (!pts.str().empty())
      os << "<polyline fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"1.6\" points=\"" << pts.str()
         << "\"/>\n";
    const double ly = f.top + 14 + 16.0 * static_cast<double>(si);
    const double lx = f.left + f.plot_w() + 12;
    os << "<line x1=\"" << lx << "\" x2=\"" << lx + 18 << "\" y1=\"" << ly << "\" y2=\"" << ly << "\" stroke=\""
       << s.color << "\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << lx + 24 << "\" y=\"" << ly + 4 << "\">" << detail::esc(s.label) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

/// KL-to-strategy curves and kl_truth for one eval prior.
inline std::string kl_curves(const std::vector<MetricsRecord>& log, std::size_t prior_index = 0,
                             const std::string& title = "KL over training") {
  std::vector<Series> s{{"truth", {}, {}, "black"},
                        {"uniform", {}, {}, "#999999"},
                        {"unigram", {}, {}, "#d62728"},
                        {"bigram", {}, {}, "#1f77b4"},
                        {"n-gram", {}, {}, "#2ca02c"}};
  for (const auto& r : log) {
    if (prior_index >= r.per_prior.size()) continue;
    const auto& m = r.per_prior[prior_index];
    const double x = static_cast<double>(r.examples_seen);
    const double ys[] = {m.kl_truth, m.kl_uniform, m.kl_unigram, m.kl_bigram};
    for (int i = 0; i < 4; ++i) s[i].x.push_back(x), s[i].y.push_back(ys[i]);
    if (m.kl_ngram) s[4].x.push_back(x), s[4].y.push_back(*m.kl_ngram);
  }
  if (s[4].x.empty()) s.pop_back();
  return line_chart(s, title, "examples seen", "KL (nats)", true);
}

/// Heatmap with each row scaled to its own [min, max].
inline std::string heatmap(const Matrix& m, const std::string& title, Frame f = {}) {
  std::ostringstream os;
  f.right = 24;
  detail::open(os, f, title);
  if (m.rows && m.cols) {
    const double cw = f.plot_w() / static_cast<double>(m.cols), ch = f.plot_h() / static_cast<double>(m.rows);
    for (std::size_t i = 0; i < m.rows; ++i) {
      double lo = INFINITY, hi = -INFINITY;
      for (std::size_t j = 0; j < m.cols; ++j)
        if (std::isfinite(m(i, j))) lo = std::min(lo, m(i, j)), hi = std::max(hi, m(i, j));
      for (std::size_t j = 0; j < m.cols; ++j) {
        const double u = hi > lo ? (m(i, j) - lo) / (hi - lo) : (std::isfinite(m(i, j)) ? 1.0 : 0.0);
        os << "<rect x=\"" << f.left + cw * static_cast<double>(j) << "\" y=\"" << f.top + ch * static_cast<double>(i)
           << "\" width=\"" << cw + 0.05 << "\" height=\"" << ch + 0.05 << "\" fill=\"" << detail::ramp(u)
           << "\"/>\n";
      }
    }
  }
  os << "<rect x=\"" << f.left << "\" y=\"" << f.top << "\" width=\"" << f.plot_w() << "\" height=\"" << f.plot_h()
     << "\" fill=\"none\" stroke=\"black\"/>\n";
  os << "<text x=\"" << f.left + f.plot_w() / 2 << "\" y=\"" << f.height - 10 << "\" text-anchor=\"middle\">key "
     << "position (row-normalized)</text>\n";
  os << "<text transform=\"translate(14," << f.top + f.plot_h() / 2
     << ") rotate(-90)\" text-anchor=\"middle\">query position</text>\n";
  os << "</svg>\n";
  return os.str();
}

/// Bar chart of a profile indexed from 1.
inline std::string bars(const std::vector<double>& v, const std::string& title, const std::string& xlabel,
                        Frame f = {}) {
  f.right = 24;
  std::ostringstream os;
  detail::open(os, f, title);
  double lo = 0, hi = 0;
  for (double x : v)
    if (std::isfinite(x)) lo = std::min(lo, x), hi = std::max(hi, x);
  if (hi == lo) hi = lo + 1;
  auto py = [&](double y) { return f.top + (1.0 - (y - lo) / (hi - lo)) * f.plot_h(); };
  const double bw = v.empty() ? 0 : f.plot_w() / static_cast<double>(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i])) continue;
    const double y = py(std::max(v[i], 0.0)), y0 = py(std::min(v[i], 0.0));
    os << "<rect x=\"" << f.left + bw * static_cast<double>(i) << "\" y=\"" << y << "\" width=\""
       << std::max(bw * 0.85, 0.5) << "\" height=\"" << y0 - y << "\" fill=\"#1f77b4\"/>\n";
  }
  os << "<rect x=\"" << f.left << "\" y=\"" << f.top << "\" width=\"" << f.plot_w() << "\" height=\"" << f.plot_h()
     << "\" fill=\"none\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << f.left << "\" x2=\"" << f.left + f.plot_w() << "\" y1=\"" << py(0) << "\" y2=\"" << py(0)
     << "\" stroke=\"black\"/>\n";
  os << "<text x=\"" << f.left - 6 << "\" y=\"" << f.top + 4 << "\" text-anchor=\"end\">" << detail::num(hi)
     << "</text>\n<text x=\"" << f.left - 6 << "\" y=\"" << f.top + f.plot_h() << "\" text-anchor=\"end\">"
     << detail::num(lo) << "</text>\n";
  os << "<text x=\"" << f.left + f.plot_w() / 2 << "\" y=\"" << f.height - 10 << "\" text-anchor=\"middle\">"
     << detail::esc(xlabel) << "</text>\n</svg>\n";
  return os.str();
}

}  // namespace icmc::svg
