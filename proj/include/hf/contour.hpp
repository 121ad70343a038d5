#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "hf/volume.hpp"

namespace hf {

// Boundary pixels of one axial slice: foreground pixels with at least one
// background 4-neighbor, the image border counting as background.
// Points are (i=row/y, j=col/x), row-major order, no duplicates.
struct ContourSet {
  int slice_index = 0;
  std::vector<std::array<int, 2>> points;
};

// Per-slice regression target: a truncated Gaussian bump summed over every
// contour pixel. Values are zero at Euclidean distance >= truncation from
// all contour pixels.
struct ContourHeatmap {
  int w = 0, h = 0;
  double sigma = 5.0;
  double truncation = 5.0;
  std::vector<double> values;  // h*w, row-major (i*w + j)

  double at(int i, int j) const { return values[size_t(i) * w + j]; }
};

ContourSet extract_contour(const uint8_t* mask, int w, int h, int slice_index = 0);
ContourSet extract_contour(const LabelVolume& gt, int z);

ContourHeatmap gaussian_contour_map(const ContourSet& contour, int w, int h,
                                    double sigma, double truncation);

// Default truncation equal to sigma (strict d < truncation support).
std::vector<ContourHeatmap> heatmap_stack(const LabelVolume& gt, double sigma = 5.0,
                                          double truncation = -1.0);

// Heatmap stacks travel on disk as f32 volumes.
Volume heatmaps_to_volume(const std::vector<ContourHeatmap>& stack,
                          std::array<float, 3> spacing);

}  // namespace hf
