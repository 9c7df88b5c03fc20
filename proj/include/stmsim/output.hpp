#pragma once

// File emitters for run artifacts: atomic writes, CSV, 16-bit PGM field maps
// and small hand-written SVG plots.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "stmsim/error.hpp"

namespace stmsim::output {

namespace fs = std::filesystem;

/// Round-trippable decimal text for a double.
inline std::string num(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// Write via a temporary sibling and rename, so readers never see a partial file.
inline void write_atomic(const fs::path& path, const std::string& data) {
  static std::atomic<unsigned long> counter{0};
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp" + std::to_string(counter.fetch_add(1));
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open " + tmp.string() + " for writing");
    out.write(data.data(), static_cast<std::streamsize>(data.size()));
    if (!out) throw Error("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

class Csv {
 public:
  explicit Csv(std::vector<std::string> header) : columns_(header.size()) { row(header); }

  Csv& row(const std::vector<std::string>& cells) {
    if (cells.size() != columns_) throw Error("CSV row has the wrong number of columns");
    for (std::size_t j = 0; j < cells.size(); ++j) {
      if (j) text_ << ',';
      text_ << cells[j];
    }
    text_ << '\n';
    return *this;
  }

  std::string str() const { return text_.str(); }

 private:
  std::size_t columns_;
  std::ostringstream text_;
};

/// Signed-linear mapping of field values onto 16-bit gray levels:
/// level = round(32767.5 + 32767.5 * clamp(v / scale, -1, 1)).
struct PgmMapping {
  double scale = 1.0;  // field value mapped to full white
  static constexpr int max_level = 65535;
};

inline std::string pgm16(const std::vector<float>& values, int rows, int cols,
                         const PgmMapping& m) {
  std::string out = "P5\n" + std::to_string(cols) + " " + std::to_string(rows) + "\n65535\n";
  out.reserve(out.size() + values.size() * 2);
  for (float v : values) {
    double u = m.scale > 0.0 ? v / m.scale : 0.0;
    u = std::clamp(u, -1.0, 1.0);
    const auto level = static_cast<std::uint16_t>(std::lround(32767.5 + 32767.5 * u));
    out.push_back(static_cast<char>(level >> 8));
    out.push_back(static_cast<char>(level & 0xff));
  }
  return out;
}

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
  std::string color = "#1f77b4";
  bool markers = true;  // scatter points instead of a polyline
};

struct Bar {
  std::string label;
  double value = 0.0;
  std::string color = "#1f77b4";
};

namespace detail {

inline std::string esc(const std::string& s) {
  std::string o;
  for (char c : s) {
    switch (c) {
      case '<': o += "&lt;"; break;
      case '>': o += "&gt;"; break;
      case '&': o += "&amp;"; break;
      default: o += c;
    }
  }
  return o;
}

inline std::string fmt(double v, int prec = 4) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*g", prec, v);
  return buf;
}

}  // namespace detail

/// Scatter/line plot with linear axes.
inline std::string svg_plot(const std::vector<Series>& series, const std::string& title,
                            const std::string& xlabel, const std::string& ylabel) {
  const double w = 640, h = 480, ml = 70, mr = 20, mt = 40, mb = 60;
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& s : series) {
    for (std::size_t j = 0; j < s.x.size(); ++j) {
      if (!std::isfinite(s.x[j]) || !std::isfinite(s.y[j])) continue;
      x0 = std::min(x0, s.x[j]);
      x1 = std::max(x1, s.x[j]);
      y0 = std::min(y0, s.y[j]);
      y1 = std::max(y1, s.y[j]);
    }
  }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 == x0) x1 = x0 + 1;
  if (y1 == y0) y1 = y0 + 1;
  auto px = [&](double x) { return ml + (x - x0) / (x1 - x0) * (w - ml - mr); };
  auto py = [&](double y) { return h - mb - (y - y0) / (y1 - y0) * (h - mt - mb); };

  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
    << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << w / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">"
    << detail::esc(title) << "</text>\n";
  o << "<rect x=\"" << ml << "\" y=\"" << mt << "\" width=\"" << w - ml - mr << "\" height=\""
    << h - mt - mb << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int t = 0; t <= 4; ++t) {
    const double xv = x0 + t * (x1 - x0) / 4, yv = y0 + t * (y1 - y0) / 4;
    o << "<text x=\"" << px(xv) << "\" y=\"" << h - mb + 18 << "\" text-anchor=\"middle\">"
      << detail::fmt(xv) << "</text>\n";
    o << "<text x=\"" << ml - 6 << "\" y=\"" << py(yv) + 4 << "\" text-anchor=\"end\">"
      << detail::fmt(yv) << "</text>\n";
  }
  o << "<text x=\"" << (ml + w - mr) / 2 << "\" y=\"" << h - 15 << "\" text-anchor=\"middle\">"
    << detail::esc(xlabel) << "</text>\n";
  o << "<text x=\"18\" y=\"" << (mt + h - mb) / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 18 "
    << (mt + h - mb) / 2 << ")\">" << detail::esc(ylabel) << "</text>\n";
  int legend = 0;
  for (const auto& s : series) {
    if (s.markers) {
      for (std::size_t j = 0; j < s.x.size(); ++j) {
        if (!std::isfinite(s.x[j]) || !std::isfinite(s.y[j])) continue;
        o << "<circle cx=\"" << detail::fmt(px(s.x[j]), 6) << "\" cy=\"" << detail::fmt(py(s.y[j]), 6)
          << "\" r=\"1.5\" fill=\"" << s.color << "\"/>\n";
      }
    } else {
      o << "<polyline fill=\"none\" stroke=\"" << s.color << "\" points=\"";
      for (std::size_t j = 0; j < s.x.size(); ++j) {
        if (!std::isfinite(s.x[j]) || !std::isfinite(s.y[j])) continue;
        o << detail::fmt(px(s.x[j]), 6) << ',' << detail::fmt(py(s.y[j]), 6) << ' ';
      }
      o << "\"/>\n";
    }
    if (!s.label.empty()) {
      const double ly = mt + 14 + 16 * legend++;
      o << "<rect x=\"" << w - mr - 150 << "\" y=\"" << ly - 9 << "\" width=\"10\" height=\"10\" fill=\""
        << s.color << "\"/>\n";
      o << "<text x=\"" << w - mr - 135 << "\" y=\"" << ly << "\">" << detail::esc(s.label) << "</text>\n";
    }
  }
  o << "</svg>\n";
  return o.str();
}

inline std::string svg_bars(const std::vector<Bar>& bars, const std::string& title,
                            const std::string& ylabel) {
  const double w = 480, h = 360, ml = 70, mr = 20, mt = 40, mb = 50;
  double lo = 0.0, hi = 0.0;
  for (const auto& b : bars) {
    lo = std::min(lo, b.value);
    hi = std::max(hi, b.value);
  }
  if (hi - lo < 1e-12) hi = lo + 1.0;
  const double pad = 0.1 * (hi - lo);
  lo -= lo < 0 ? pad : 0.0;
  hi += pad;
  auto py = [&](double y) { return h - mb - (y - lo) / (hi - lo) * (h - mt - mb); };
  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
    << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << w / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">"
    << detail::esc(title) << "</text>\n";
  o << "<line x1=\"" << ml << "\" x2=\"" << w - mr << "\" y1=\"" << py(0) << "\" y2=\"" << py(0)
    << "\" stroke=\"black\"/>\n";
  o << "<text x=\"18\" y=\"" << (mt + h - mb) / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 18 "
    << (mt + h - mb) / 2 << ")\">" << detail::esc(ylabel) << "</text>\n";
  const double slot = (w - ml - mr) / std::max<std::size_t>(1, bars.size());
  for (std::size_t j = 0; j < bars.size(); ++j) {
    const double x = ml + j * slot + 0.2 * slot;
    const double top = py(std::max(0.0, bars[j].value)), bot = py(std::min(0.0, bars[j].value));
    o << "<rect x=\"" << x << "\" y=\"" << top << "\" width=\"" << 0.6 * slot << "\" height=\""
      << std::max(0.5, bot - top) << "\" fill=\"" << bars[j].color << "\"/>\n";
    o << "<text x=\"" << x + 0.3 * slot << "\" y=\"" << h - mb + 18 << "\" text-anchor=\"middle\">"
      << detail::esc(bars[j].label) << "</text>\n";
    o << "<text x=\"" << x + 0.3 * slot << "\" y=\"" << top - 4 << "\" text-anchor=\"middle\">"
      << detail::fmt(bars[j].value) << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

}  // namespace stmsim::output
