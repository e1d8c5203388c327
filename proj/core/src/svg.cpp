#include "svg.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

namespace dreamprm::detail::svg {

namespace {

constexpr std::array<const char*, 8> kPalette = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                                 "#9467bd", "#8c564b", "#e377c2", "#17becf"};
constexpr double kLeft = 64, kRight = 150, kTop = 40, kBottom = 52;

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

std::string px(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

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

struct Range {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();

  void add(double v) {
    if (!std::isfinite(v)) return;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  void finish() {
    if (!std::isfinite(lo)) lo = 0.0, hi = 1.0;
    if (hi - lo < 1e-12) {
      lo -= 0.5;
      hi += 0.5;
    }
  }
};

void header(std::ostringstream& os, int width, int height, const std::string& title) {
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
     << "\" viewBox=\"0 0 " << width << ' ' << height << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << width / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << escape(title)
     << "</text>\n";
}

void axes(std::ostringstream& os, int width, int height, const Range& y, const std::string& y_label) {
  const double x0 = kLeft, x1 = width - kRight, y0 = height - kBottom, y1 = kTop;
  os << "<line x1=\"" << px(x0) << "\" y1=\"" << px(y0) << "\" x2=\"" << px(x1) << "\" y2=\"" << px(y0)
     << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << px(x0) << "\" y1=\"" << px(y0) << "\" x2=\"" << px(x0) << "\" y2=\"" << px(y1)
     << "\" stroke=\"black\"/>\n";
  for (int t = 0; t <= 4; ++t) {
    const double v = y.lo + (y.hi - y.lo) * t / 4.0;
    const double yy = y0 - (y0 - y1) * t / 4.0;
    os << "<line x1=\"" << px(x0 - 4) << "\" y1=\"" << px(yy) << "\" x2=\"" << px(x1) << "\" y2=\"" << px(yy)
       << "\" stroke=\"#e0e0e0\"/>\n";
    os << "<text x=\"" << px(x0 - 6) << "\" y=\"" << px(yy + 4) << "\" text-anchor=\"end\">" << num(v) << "</text>\n";
  }
  os << "<text transform=\"translate(16," << px((y0 + y1) / 2) << ") rotate(-90)\" text-anchor=\"middle\">"
     << escape(y_label) << "</text>\n";
}

void legend(std::ostringstream& os, int width, const std::vector<std::string>& names) {
  for (std::size_t i = 0; i < names.size(); ++i) {
    const double y = kTop + 8 + 18.0 * static_cast<double>(i);
    const double x = width - kRight + 14;
    os << "<rect x=\"" << px(x) << "\" y=\"" << px(y - 9) << "\" width=\"12\" height=\"12\" fill=\""
       << kPalette[i % kPalette.size()] << "\"/>\n";
    os << "<text x=\"" << px(x + 18) << "\" y=\"" << px(y + 1) << "\">" << escape(names[i]) << "</text>\n";
  }
}

}  // namespace

std::string line_chart(const std::string& title, const std::string& x_label, const std::string& y_label,
                       const std::vector<Series>& series, int width, int height) {
  Range xr, yr;
  for (const auto& s : series) {
    for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
      if (!std::isfinite(s.y[i])) continue;
      xr.add(s.x[i]);
      yr.add(s.y[i]);
    }
  }
  xr.finish();
  yr.finish();
  const double x0 = kLeft, x1 = width - kRight, y0 = height - kBottom, y1 = kTop;
  auto sx = [&](double v) { return x0 + (v - xr.lo) / (xr.hi - xr.lo) * (x1 - x0); };
  auto sy = [&](double v) { return y0 - (v - yr.lo) / (yr.hi - yr.lo) * (y0 - y1); };

  std::ostringstream os;
  header(os, width, height, title);
  axes(os, width, height, yr, y_label);
  for (int t = 0; t <= 4; ++t) {
    const double v = xr.lo + (xr.hi - xr.lo) * t / 4.0;
    os << "<text x=\"" << px(sx(v)) << "\" y=\"" << px(y0 + 16) << "\" text-anchor=\"middle\">" << num(v)
       << "</text>\n";
  }
  os << "<text x=\"" << px((x0 + x1) / 2) << "\" y=\"" << px(height - 12.0) << "\" text-anchor=\"middle\">"
     << escape(x_label) << "</text>\n";

  std::vector<std::string> names;
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    names.push_back(s.name);
    std::string points;
    for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
      if (!std::isfinite(s.y[i]) || !std::isfinite(s.x[i])) continue;
      points += px(sx(s.x[i])) + "," + px(sy(s.y[i])) + " ";
    }
    if (!points.empty()) points.pop_back();
    os << "<polyline fill=\"none\" stroke-width=\"1.5\" stroke=\"" << kPalette[k % kPalette.size()] << "\" points=\""
       << points << "\"/>\n";
  }
  legend(os, width, names);
  os << "</svg>\n";
  return os.str();
}

std::string bar_chart(const std::string& title, const std::vector<std::string>& labels, const std::vector<double>& values,
                      std::optional<double> reference, int width, int height) {
  Range yr;
  yr.add(0.0);
  for (double v : values) yr.add(v);
  if (reference) yr.add(*reference);
  yr.finish();
  yr.hi += 0.05 * (yr.hi - yr.lo);
  const double x0 = kLeft, x1 = width - kRight, y0 = height - kBottom, y1 = kTop;
  auto sy = [&](double v) { return y0 - (v - yr.lo) / (yr.hi - yr.lo) * (y0 - y1); };

  std::ostringstream os;
  header(os, width, height, title);
  axes(os, width, height, yr, "value");
  const double slot = (x1 - x0) / static_cast<double>(std::max<std::size_t>(values.size(), 1));
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double left = x0 + slot * (static_cast<double>(i) + 0.15);
    const double top = sy(std::max(values[i], 0.0));
    const double bottom = sy(std::min(values[i], 0.0));
    os << "<rect x=\"" << px(left) << "\" y=\"" << px(top) << "\" width=\"" << px(slot * 0.7) << "\" height=\""
       << px(bottom - top) << "\" fill=\"" << kPalette[i % kPalette.size()] << "\"/>\n";
    os << "<text x=\"" << px(left + slot * 0.35) << "\" y=\"" << px(top - 4) << "\" text-anchor=\"middle\">"
       << num(values[i]) << "</text>\n";
    os << "<text x=\"" << px(left + slot * 0.35) << "\" y=\"" << px(y0 + 16) << "\" text-anchor=\"middle\">"
       << escape(i < labels.size() ? labels[i] : "") << "</text>\n";
  }
  if (reference) {
    os << "<line x1=\"" << px(x0) << "\" y1=\"" << px(sy(*reference)) << "\" x2=\"" << px(x1) << "\" y2=\""
       << px(sy(*reference)) << "\" stroke=\"black\" stroke-dasharray=\"4 3\"/>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace dreamprm::detail::svg
