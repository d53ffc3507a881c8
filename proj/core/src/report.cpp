#include "sard/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "sard/errors.hpp"

namespace sard {

namespace {

constexpr double kWidth = 640, kHeight = 420, kLeft = 70, kRight = 20, kTop = 40, kBottom = 50;
const char* const kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

std::string esc(const std::string& s) {
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

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

struct Axes {
  double x0, x1, y0, y1;
  bool log_y;

  double tx(double x) const { return kLeft + (x - x0) / (x1 - x0) * (kWidth - kLeft - kRight); }
  double ty(double y) const {
    const double v = log_y ? std::log10(y) : y;
    return kHeight - kBottom - (v - y0) / (y1 - y0) * (kHeight - kTop - kBottom);
  }
};

Axes fit_axes(const std::vector<Series>& series, bool log_y) {
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& s : series) {
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      const double y = log_y ? std::log10(std::max(s.y[i], 1e-300)) : s.y[i];
      if (!std::isfinite(s.x[i]) || !std::isfinite(y)) continue;
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, y);
      y1 = std::max(y1, y);
    }
  }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 == x0) x1 = x0 + 1;
  if (y1 == y0) y1 = y0 + 1;
  return {x0, x1, y0, y1, log_y};
}

void frame(std::ostringstream& o, const Axes& a, const PlotSpec& spec) {
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
    << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
    << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    << "<text x=\"" << kWidth / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">"
    << esc(spec.title) << "</text>\n";
  const double bx = kLeft, by = kHeight - kBottom;
  o << "<line x1=\"" << bx << "\" y1=\"" << by << "\" x2=\"" << kWidth - kRight << "\" y2=\"" << by
    << "\" stroke=\"black\"/>\n<line x1=\"" << bx << "\" y1=\"" << kTop << "\" x2=\"" << bx
    << "\" y2=\"" << by << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = a.x0 + (a.x1 - a.x0) * i / 4.0;
    const double yv = a.y0 + (a.y1 - a.y0) * i / 4.0;
    o << "<text x=\"" << a.tx(xv) << "\" y=\"" << by + 16 << "\" text-anchor=\"middle\">" << num(xv)
      << "</text>\n";
    const double py = kHeight - kBottom - (yv - a.y0) / (a.y1 - a.y0) * (kHeight - kTop - kBottom);
    o << "<text x=\"" << bx - 6 << "\" y=\"" << py + 4 << "\" text-anchor=\"end\">"
      << (a.log_y ? "1e" + num(yv) : num(yv)) << "</text>\n";
  }
  o << "<text x=\"" << (kLeft + kWidth - kRight) / 2 << "\" y=\"" << kHeight - 12
    << "\" text-anchor=\"middle\">" << esc(spec.x_label) << "</text>\n"
    << "<text transform=\"translate(16," << (kTop + by) / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
    << esc(spec.y_label) << "</text>\n";
}

}  // namespace

std::string svg_line_chart(const std::vector<Series>& series, const PlotSpec& spec) {
  const auto a = fit_axes(series, spec.log_y);
  std::ostringstream o;
  frame(o, a, spec);
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const char* color = kColors[k % std::size(kColors)];
    o << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < s.x.size(); ++i) o << a.tx(s.x[i]) << ',' << a.ty(s.y[i]) << ' ';
    o << "\"/>\n";
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      o << "<circle cx=\"" << a.tx(s.x[i]) << "\" cy=\"" << a.ty(s.y[i]) << "\" r=\"3\" fill=\""
        << color << "\"/>\n";
    }
    o << "<text x=\"" << kWidth - kRight - 150 << "\" y=\"" << kTop + 14 * (k + 1) << "\" fill=\""
      << color << "\">" << esc(s.label) << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

std::string svg_scatter(const Series& points, const PlotSpec& spec) {
  const auto a = fit_axes({points}, spec.log_y);
  std::ostringstream o;
  frame(o, a, spec);
  for (std::size_t i = 0; i < points.x.size(); ++i) {
    o << "<circle cx=\"" << a.tx(points.x[i]) << "\" cy=\"" << a.ty(points.y[i])
      << "\" r=\"2\" fill=\"#1f77b4\" fill-opacity=\"0.5\"/>\n";
  }
  o << "</svg>\n";
  return o.str();
}

std::string svg_heatmap(const Matrix& values, const PlotSpec& spec) {
  const double size = 360.0;
  const std::size_t r = std::max<std::size_t>(values.rows(), 1), c = std::max<std::size_t>(values.cols(), 1);
  const double cw = size / static_cast<double>(c), ch = size / static_cast<double>(r);
  double lo = 0.0, hi = 0.0;
  for (double v : values.data()) lo = std::min(lo, v), hi = std::max(hi, v);
  if (hi == lo) hi = lo + 1.0;
  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << size + 80 << "\" height=\"" << size + 60
    << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
    << "<text x=\"" << (size + 80) / 2 << "\" y=\"20\" text-anchor=\"middle\">" << esc(spec.title)
    << "</text>\n";
  for (std::size_t i = 0; i < values.rows(); ++i) {
    for (std::size_t j = 0; j < values.cols(); ++j) {
      const double t = (values(i, j) - lo) / (hi - lo);
      const int shade = static_cast<int>(std::lround(255 * (1.0 - t)));
      o << "<rect x=\"" << 40 + j * cw << "\" y=\"" << 30 + i * ch << "\" width=\"" << cw
        << "\" height=\"" << ch << "\" fill=\"rgb(" << shade << ',' << shade << ",255)\"/>\n";
    }
  }
  o << "<text x=\"40\" y=\"" << size + 50 << "\">" << esc(spec.x_label) << " (range " << num(lo)
    << " to " << num(hi) << ")</text>\n</svg>\n";
  return o.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

void write_matrix_csv(const std::filesystem::path& path, const Matrix& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out.precision(12);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    for (std::size_t j = 0; j < m.cols(); ++j) out << (j ? "," : "") << m(i, j);
    out << '\n';
  }
}

}  // namespace sard
