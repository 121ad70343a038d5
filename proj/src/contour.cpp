#include "hf/contour.hpp"

#include <cmath>

namespace hf {

ContourSet extract_contour(const uint8_t* mask, int w, int h, int slice_index) {
  for (int i = 0; i < h * w; ++i)
    require(mask[i] <= 1, ErrorCode::geometry, "extract_contour: non-binary input");
  ContourSet cs;
  cs.slice_index = slice_index;
  auto bg = [&](int i, int j) {
    if (i < 0 || i >= h || j < 0 || j >= w) return true;  // border counts as outside
    return mask[size_t(i) * w + j] == 0;
  };
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      if (mask[size_t(i) * w + j] == 0) continue;
      if (bg(i - 1, j) || bg(i + 1, j) || bg(i, j - 1) || bg(i, j + 1))
        cs.points.push_back({i, j});
    }
  return cs;
}

ContourSet extract_contour(const LabelVolume& gt, int z) {
  require(z >= 0 && z < gt.dims[2], ErrorCode::geometry, "extract_contour: slice out of range");
  return extract_contour(gt.slice(z), gt.dims[0], gt.dims[1], z);
}

ContourHeatmap gaussian_contour_map(const ContourSet& contour, int w, int h,
                                    double sigma, double truncation) {
  require(sigma > 0, ErrorCode::config, "gaussian_contour_map: sigma must be > 0");
  require(truncation > 0, ErrorCode::config, "gaussian_contour_map: truncation must be > 0");
  ContourHeatmap hm;
  hm.w = w;
  hm.h = h;
  hm.sigma = sigma;
  hm.truncation = truncation;
  hm.values.assign(size_t(w) * h, 0.0);

  const double coeff = 1.0 / (sigma * std::sqrt(2.0 * M_PI));
  const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
  const double t2 = truncation * truncation;
  const int r = int(std::ceil(truncation));  // support fits in [-r, r]
  for (const auto& pt : contour.points) {
    for (int di = -r; di <= r; ++di) {
      int i = pt[0] + di;
      if (i < 0 || i >= h) continue;
      for (int dj = -r; dj <= r; ++dj) {
        int j = pt[1] + dj;
        if (j < 0 || j >= w) continue;
        double d2 = double(di) * di + double(dj) * dj;
        if (!(d2 < t2)) continue;  // strict: distance == truncation contributes nothing
        hm.values[size_t(i) * w + j] += coeff * std::exp(-d2 * inv2s2);
      }
    }
  }
  return hm;
}

std::vector<ContourHeatmap> heatmap_stack(const LabelVolume& gt, double sigma,
                                          double truncation) {
  validate(gt);
  if (truncation <= 0) truncation = sigma;
  std::vector<ContourHeatmap> stack;
  stack.reserve(gt.dims[2]);
  for (int z = 0; z < gt.dims[2]; ++z)
    stack.push_back(
        gaussian_contour_map(extract_contour(gt, z), gt.dims[0], gt.dims[1], sigma, truncation));
  return stack;
}

Volume heatmaps_to_volume(const std::vector<ContourHeatmap>& stack,
                          std::array<float, 3> spacing) {
  require(!stack.empty(), ErrorCode::config, "heatmaps_to_volume: empty stack");
  Volume v;
  v.dims = {stack[0].w, stack[0].h, int(stack.size())};
  v.spacing = spacing;
  v.data.resize(v.voxels());
  size_t plane = size_t(v.dims[0]) * v.dims[1];
  for (size_t z = 0; z < stack.size(); ++z) {
    require(stack[z].w == v.dims[0] && stack[z].h == v.dims[1], ErrorCode::geometry,
            "heatmaps_to_volume: inconsistent slice dims");
    for (size_t i = 0; i < plane; ++i) v.data[z * plane + i] = float(stack[z].values[i]);
  }
  return v;
}

}  // namespace hf
