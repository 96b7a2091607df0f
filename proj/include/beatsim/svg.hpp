#pragma once

// Minimal static SVG x-y charts: lines, markers, bars. Output is a pure
// function of the data (no timestamps, fixed number formatting).

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "beatsim/error.hpp"

namespace beatsim::svg {

enum class Style { line, markers, bars };

struct Series {
  std::vector<double> x, y;
  Style style = Style::line;
  std::string color = "#1f4e9c";
  std::string label;
};

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

inline std::string tick_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4g", std::abs(v) < 1e-12 ? 0.0 : v);
  return buf;
}

inline std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

// 1-2-5 tick spacing giving roughly `target` ticks over [lo, hi].
inline double nice_step(double lo, double hi, int target = 6) {
  const double raw = (hi - lo) / target;
  if (!(raw > 0.0)) return 1.0;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  const double f = raw / mag;
  return (f < 1.5 ? 1.0 : f < 3.5 ? 2.0 : f < 7.5 ? 5.0 : 10.0) * mag;
}

class Plot {
 public:
  Plot(std::string title, std::string xlabel, std::string ylabel, int width = 720, int height = 440)
      : title_(std::move(title)), xlabel_(std::move(xlabel)), ylabel_(std::move(ylabel)), width_(width), height_(height) {}

  Plot& add(Series s) {
    if (s.x.size() != s.y.size()) throw Error("svg series: x and y differ in length");
    series_.push_back(std::move(s));
    return *this;
  }

  Plot& add_line(std::span<const double> x, std::span<const double> y, std::string color, std::string label = {}) {
    return add(Series{{x.begin(), x.end()}, {y.begin(), y.end()}, Style::line, std::move(color), std::move(label)});
  }
  Plot& add_markers(std::span<const double> x, std::span<const double> y, std::string color, std::string label = {}) {
    return add(Series{{x.begin(), x.end()}, {y.begin(), y.end()}, Style::markers, std::move(color), std::move(label)});
  }
  Plot& add_bars(std::span<const double> x, std::span<const double> y, std::string color, std::string label = {}) {
    return add(Series{{x.begin(), x.end()}, {y.begin(), y.end()}, Style::bars, std::move(color), std::move(label)});
  }

  Plot& y_range(double lo, double hi) {
    ylo_ = lo;
    yhi_ = hi;
    fixed_y_ = true;
    return *this;
  }

  std::string render() const {
    double xlo = std::numeric_limits<double>::infinity(), xhi = -xlo;
    double ylo = xlo, yhi = -xlo;
    bool has_bars = false;
    for (const auto& s : series_) {
      has_bars |= s.style == Style::bars;
      for (std::size_t i = 0; i < s.x.size(); ++i) {
        if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
        xlo = std::min(xlo, s.x[i]);
        xhi = std::max(xhi, s.x[i]);
        ylo = std::min(ylo, s.y[i]);
        yhi = std::max(yhi, s.y[i]);
      }
    }
    if (!std::isfinite(xlo)) xlo = 0.0, xhi = 1.0, ylo = 0.0, yhi = 1.0;
    if (has_bars) ylo = std::min(ylo, 0.0);
    if (fixed_y_) ylo = ylo_, yhi = yhi_;
    if (xhi <= xlo) xhi = xlo + 1.0;
    if (yhi <= ylo) yhi = ylo + 1.0;
    const double ypad = fixed_y_ ? 0.0 : 0.05 * (yhi - ylo);
    ylo -= has_bars && ylo >= 0.0 ? 0.0 : ypad;
    yhi += ypad;

    const double left = 80, right = 20, top = 40, bottom = 60;
    const double pw = width_ - left - right, ph = height_ - top - bottom;
    auto sx = [&](double x) { return left + (x - xlo) / (xhi - xlo) * pw; };
    auto sy = [&](double y) { return top + (yhi - y) / (yhi - ylo) * ph; };

    std::string o;
    o += "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
    o += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(width_) + "\" height=\"" +
         std::to_string(height_) + "\" viewBox=\"0 0 " + std::to_string(width_) + " " + std::to_string(height_) +
         "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    o += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    o += "<text x=\"" + num(width_ / 2.0) + "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" + escape(title_) +
         "</text>\n";

    // Grid and ticks.
    const double xs = nice_step(xlo, xhi), ys = nice_step(ylo, yhi);
    for (double t = std::ceil(xlo / xs) * xs; t <= xhi + 1e-9 * xs; t += xs) {
      o += "<line x1=\"" + num(sx(t)) + "\" y1=\"" + num(top) + "\" x2=\"" + num(sx(t)) + "\" y2=\"" + num(top + ph) +
           "\" stroke=\"#e0e0e0\"/>\n";
      o += "<text x=\"" + num(sx(t)) + "\" y=\"" + num(top + ph + 18) + "\" text-anchor=\"middle\">" + tick_label(t) +
           "</text>\n";
    }
    for (double t = std::ceil(ylo / ys) * ys; t <= yhi + 1e-9 * ys; t += ys) {
      o += "<line x1=\"" + num(left) + "\" y1=\"" + num(sy(t)) + "\" x2=\"" + num(left + pw) + "\" y2=\"" + num(sy(t)) +
           "\" stroke=\"#e0e0e0\"/>\n";
      o += "<text x=\"" + num(left - 6) + "\" y=\"" + num(sy(t) + 4) + "\" text-anchor=\"end\">" + tick_label(t) +
           "</text>\n";
    }
    o += "<rect x=\"" + num(left) + "\" y=\"" + num(top) + "\" width=\"" + num(pw) + "\" height=\"" + num(ph) +
         "\" fill=\"none\" stroke=\"black\"/>\n";
    o += "<text x=\"" + num(left + pw / 2) + "\" y=\"" + num(height_ - 14.0) + "\" text-anchor=\"middle\">" +
         escape(xlabel_) + "</text>\n";
    o += "<text transform=\"translate(18," + num(top + ph / 2) + ") rotate(-90)\" text-anchor=\"middle\">" +
         escape(ylabel_) + "</text>\n";

    for (const auto& s : series_) {
      if (s.style == Style::line) {
        o += "<polyline fill=\"none\" stroke=\"" + s.color + "\" stroke-width=\"1.5\" points=\"";
        for (std::size_t i = 0; i < s.x.size(); ++i) {
          if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
          o += num(sx(s.x[i])) + "," + num(sy(std::clamp(s.y[i], ylo, yhi))) + " ";
        }
        o += "\"/>\n";
      } else if (s.style == Style::markers) {
        for (std::size_t i = 0; i < s.x.size(); ++i) {
          if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
          o += "<circle cx=\"" + num(sx(s.x[i])) + "\" cy=\"" + num(sy(s.y[i])) + "\" r=\"2.5\" fill=\"" + s.color +
               "\"/>\n";
        }
      } else {
        const double w = s.x.size() > 1 ? (sx(s.x[1]) - sx(s.x[0])) * 0.9 : pw * 0.5;
        for (std::size_t i = 0; i < s.x.size(); ++i) {
          const double y0 = sy(std::max(ylo, 0.0)), y1 = sy(s.y[i]);
          o += "<rect x=\"" + num(sx(s.x[i]) - w / 2) + "\" y=\"" + num(std::min(y0, y1)) + "\" width=\"" + num(w) +
               "\" height=\"" + num(std::abs(y0 - y1)) + "\" fill=\"" + s.color + "\"/>\n";
        }
      }
    }

    // Legend.
    double ly = top + 16;
    for (const auto& s : series_) {
      if (s.label.empty()) continue;
      o += "<rect x=\"" + num(left + pw - 170) + "\" y=\"" + num(ly - 9) + "\" width=\"12\" height=\"12\" fill=\"" +
           s.color + "\"/>\n";
      o += "<text x=\"" + num(left + pw - 152) + "\" y=\"" + num(ly + 1) + "\">" + escape(s.label) + "</text>\n";
      ly += 18;
    }
    o += "</svg>\n";
    return o;
  }

  void save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write '" + path.string() + "'");
    out << render();
  }

 private:
  std::string title_, xlabel_, ylabel_;
  int width_, height_;
  std::vector<Series> series_;
  double ylo_ = 0.0, yhi_ = 1.0;
  bool fixed_y_ = false;
};

}  // namespace beatsim::svg
