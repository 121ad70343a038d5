#include "hf/plots.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "hf/common.hpp"

namespace hf::plots {

namespace {

constexpr int kW = 640, kH = 420;
constexpr int kMarginL = 70, kMarginR = 20, kMarginT = 40, kMarginB = 50;

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                          "#9467bd", "#8c564b", "#17becf", "#7f7f7f"};

struct File {
  std::FILE* f;
  explicit File(const std::string& path) : f(std::fopen(path.c_str(), "wb")) {
    require(f != nullptr, ErrorCode::io, "cannot open " + path);
  }
  ~File() { std::fclose(f); }
};

void header(std::FILE* f, const std::string& title) {
  std::fprintf(f,
               "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%d\" height=\"%d\" "
               "viewBox=\"0 0 %d %d\">\n<rect width=\"%d\" height=\"%d\" "
               "fill=\"white\"/>\n",
               kW, kH, kW, kH, kW, kH);
  std::fprintf(f,
               "<text x=\"%d\" y=\"24\" font-family=\"sans-serif\" font-size=\"15\" "
               "text-anchor=\"middle\">%s</text>\n",
               kW / 2, title.c_str());
}

struct Scale {
  double lo, hi;
  int px0, px1;
  bool log = false;
  double operator()(double v) const {
    double t = log ? (std::log10(v) - std::log10(lo)) / (std::log10(hi) - std::log10(lo))
                   : (v - lo) / (hi - lo);
    return px0 + t * (px1 - px0);
  }
};

void axes(std::FILE* f, const Scale& sx, const Scale& sy, const std::string& x_label,
          const std::string& y_label) {
  std::fprintf(f,
               "<line x1=\"%d\" y1=\"%d\" x2=\"%d\" y2=\"%d\" stroke=\"black\"/>\n"
               "<line x1=\"%d\" y1=\"%d\" x2=\"%d\" y2=\"%d\" stroke=\"black\"/>\n",
               kMarginL, kH - kMarginB, kW - kMarginR, kH - kMarginB, kMarginL, kMarginT,
               kMarginL, kH - kMarginB);
  for (int i = 0; i <= 4; ++i) {
    double vx = sx.lo + (sx.hi - sx.lo) * i / 4.0;
    double vy = sy.log ? std::pow(10.0, std::log10(sy.lo) +
                                            (std::log10(sy.hi) - std::log10(sy.lo)) * i / 4.0)
                       : sy.lo + (sy.hi - sy.lo) * i / 4.0;
    std::fprintf(f,
                 "<text x=\"%.1f\" y=\"%d\" font-family=\"sans-serif\" font-size=\"11\" "
                 "text-anchor=\"middle\">%.4g</text>\n",
                 sx(vx), kH - kMarginB + 16, vx);
    std::fprintf(f,
                 "<text x=\"%d\" y=\"%.1f\" font-family=\"sans-serif\" font-size=\"11\" "
                 "text-anchor=\"end\">%.4g</text>\n",
                 kMarginL - 6, sy(vy) + 4, vy);
  }
  std::fprintf(f,
               "<text x=\"%d\" y=\"%d\" font-family=\"sans-serif\" font-size=\"12\" "
               "text-anchor=\"middle\">%s</text>\n",
               (kMarginL + kW - kMarginR) / 2, kH - 12, x_label.c_str());
  std::fprintf(f,
               "<text x=\"16\" y=\"%d\" font-family=\"sans-serif\" font-size=\"12\" "
               "text-anchor=\"middle\" transform=\"rotate(-90 16 %d)\">%s</text>\n",
               (kMarginT + kH - kMarginB) / 2, (kMarginT + kH - kMarginB) / 2,
               y_label.c_str());
}

}  // namespace

void svg_line_plot(const std::string& path, const std::string& title,
                   const std::string& x_label, const std::string& y_label,
                   const std::vector<Series>& series, bool log_y) {
  File file(path);
  header(file.f, title);
  double xlo = std::numeric_limits<double>::max(), xhi = -xlo;
  double ylo = std::numeric_limits<double>::max(), yhi = -ylo;
  for (const Series& s : series)
    for (size_t i = 0; i < s.x.size(); ++i) {
      xlo = std::min(xlo, s.x[i]);
      xhi = std::max(xhi, s.x[i]);
      if (!log_y || s.y[i] > 0) {
        ylo = std::min(ylo, s.y[i]);
        yhi = std::max(yhi, s.y[i]);
      }
    }
  if (xlo >= xhi) xhi = xlo + 1;
  if (ylo >= yhi) yhi = ylo + 1;
  Scale sx{xlo, xhi, kMarginL, kW - kMarginR, false};
  Scale sy{ylo, yhi, kH - kMarginB, kMarginT, log_y};
  axes(file.f, sx, sy, x_label, y_label);
  for (size_t k = 0; k < series.size(); ++k) {
    const Series& s = series[k];
    std::fprintf(file.f, "<polyline fill=\"none\" stroke=\"%s\" stroke-width=\"1.2\" points=\"",
                 kPalette[k % 8]);
    for (size_t i = 0; i < s.x.size(); ++i) {
      double y = log_y ? std::max(s.y[i], ylo) : s.y[i];
      std::fprintf(file.f, "%.1f,%.1f ", sx(s.x[i]), sy(y));
    }
    std::fprintf(file.f, "\"/>\n");
    std::fprintf(file.f,
                 "<text x=\"%d\" y=\"%zu\" font-family=\"sans-serif\" font-size=\"11\" "
                 "fill=\"%s\">%s</text>\n",
                 kW - kMarginR - 120, kMarginT + 14 * (k + 1), kPalette[k % 8],
                 s.label.c_str());
  }
  std::fprintf(file.f, "</svg>\n");
}

void svg_box_plot(const std::string& path, const std::string& title,
                  const std::string& y_label, const std::vector<BoxGroup>& groups) {
  File file(path);
  header(file.f, title);
  double ylo = std::numeric_limits<double>::max(), yhi = -ylo;
  for (const BoxGroup& g : groups)
    for (double v : g.samples) {
      ylo = std::min(ylo, v);
      yhi = std::max(yhi, v);
    }
  if (groups.empty() || ylo >= yhi) {
    ylo = 0;
    yhi = 1;
  }
  double pad = (yhi - ylo) * 0.08;
  Scale sy{ylo - pad, yhi + pad, kH - kMarginB, kMarginT, false};
  Scale sx{0, double(groups.size()), kMarginL, kW - kMarginR, false};
  axes(file.f, sx, sy, "", y_label);
  for (size_t k = 0; k < groups.size(); ++k) {
    std::vector<double> v = groups[k].samples;
    if (v.empty()) continue;
    std::sort(v.begin(), v.end());
    auto q = [&](double p) {
      double idx = p * double(v.size() - 1);
      size_t lo = size_t(idx);
      size_t hi = std::min(lo + 1, v.size() - 1);
      return v[lo] + (idx - double(lo)) * (v[hi] - v[lo]);
    };
    double q1 = q(0.25), q2 = q(0.5), q3 = q(0.75);
    double cx = sx(double(k) + 0.5);
    double half = (sx(1) - sx(0)) * 0.28;
    std::fprintf(file.f,
                 "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"black\"/>\n",
                 cx, sy(v.front()), cx, sy(v.back()));
    std::fprintf(file.f,
                 "<rect x=\"%.1f\" y=\"%.1f\" width=\"%.1f\" height=\"%.1f\" "
                 "fill=\"#9ecae1\" stroke=\"black\"/>\n",
                 cx - half, sy(q3), 2 * half, sy(q1) - sy(q3));
    std::fprintf(file.f,
                 "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" "
                 "stroke=\"black\" stroke-width=\"1.5\"/>\n",
                 cx - half, sy(q2), cx + half, sy(q2));
    std::fprintf(file.f,
                 "<text x=\"%.1f\" y=\"%d\" font-family=\"sans-serif\" font-size=\"11\" "
                 "text-anchor=\"middle\">%s</text>\n",
                 cx, kH - kMarginB + 16, groups[k].label.c_str());
  }
  std::fprintf(file.f, "</svg>\n");
}

void ppm_mosaic(const std::string& path, const std::vector<std::vector<float>>& tiles,
                int rows, int cols, int h, int w) {
  require(int(tiles.size()) == rows * cols, ErrorCode::config,
          "ppm_mosaic: tile count mismatch");
  for (const auto& t : tiles)
    require(int(t.size()) == h * w, ErrorCode::config, "ppm_mosaic: tile size mismatch");
  float lo = std::numeric_limits<float>::max(), hi = std::numeric_limits<float>::lowest();
  for (const auto& t : tiles)
    for (float v : t) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  if (hi <= lo) hi = lo + 1.f;

  const int sep = 2;
  const int W = cols * w + (cols - 1) * sep;
  const int H = rows * h + (rows - 1) * sep;
  std::vector<unsigned char> img(size_t(W) * H * 3, 32);  // dark separators

  // blue -> cyan -> yellow -> red, low to high
  auto colormap = [&](float v) {
    float t = (v - lo) / (hi - lo);
    t = std::clamp(t, 0.f, 1.f);
    unsigned char r, g, b;
    if (t < 1.f / 3) {
      float u = t * 3;
      r = 0;
      g = (unsigned char)(255 * u);
      b = 255;
    } else if (t < 2.f / 3) {
      float u = (t - 1.f / 3) * 3;
      r = (unsigned char)(255 * u);
      g = 255;
      b = (unsigned char)(255 * (1 - u));
    } else {
      float u = (t - 2.f / 3) * 3;
      r = 255;
      g = (unsigned char)(255 * (1 - u));
      b = 0;
    }
    return std::array<unsigned char, 3>{r, g, b};
  };

  for (int ty = 0; ty < rows; ++ty)
    for (int tx = 0; tx < cols; ++tx) {
      const std::vector<float>& tile = tiles[size_t(ty) * cols + tx];
      int ox = tx * (w + sep), oy = ty * (h + sep);
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          auto rgb = colormap(tile[size_t(y) * w + x]);
          size_t at = (size_t(oy + y) * W + ox + x) * 3;
          img[at] = rgb[0];
          img[at + 1] = rgb[1];
          img[at + 2] = rgb[2];
        }
    }

  File file(path);
  std::fprintf(file.f, "P6\n%d %d\n255\n", W, H);
  std::fwrite(img.data(), 1, img.size(), file.f);
}

}  // namespace hf::plots
