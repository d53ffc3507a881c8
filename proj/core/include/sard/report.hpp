#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "sard/matrix.hpp"

namespace sard {

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

struct PlotSpec {
  std::string title;
  std::string x_label;
  std::string y_label;
  bool log_y = false;
};

/// Standalone SVG documents; no external renderer needed.
std::string svg_line_chart(const std::vector<Series>& series, const PlotSpec& spec);
std::string svg_scatter(const Series& points, const PlotSpec& spec);
std::string svg_heatmap(const Matrix& values, const PlotSpec& spec);

void write_text(const std::filesystem::path& path, const std::string& text);
void write_matrix_csv(const std::filesystem::path& path, const Matrix& m);

}  // namespace sard
