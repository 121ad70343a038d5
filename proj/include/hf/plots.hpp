#pragma once

#include <string>
#include <vector>

namespace hf::plots {

struct Series {
  std::string label;
  std::vector<double> x, y;
};

// Minimal deterministic SVG emitters; enough for loss curves and the
// alpha-sweep box plots.
void svg_line_plot(const std::string& path, const std::string& title,
                   const std::string& x_label, const std::string& y_label,
                   const std::vector<Series>& series, bool log_y = false);

struct BoxGroup {
  std::string label;            // e.g. the alpha value
  std::vector<double> samples;  // per-case metric values
};

void svg_box_plot(const std::string& path, const std::string& title,
                  const std::string& y_label, const std::vector<BoxGroup>& groups);

// P6 PPM with a blue-to-red colormap; `tiles` is rows x cols of h*w scalar
// planes sharing one color scale.
void ppm_mosaic(const std::string& path, const std::vector<std::vector<float>>& tiles,
                int rows, int cols, int h, int w);

}  // namespace hf::plots
