#include "hf/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <limits>

namespace hf {

namespace {

size_t intersection_count(const LabelVolume& a, const LabelVolume& b) {
  size_t n = 0;
  for (size_t i = 0; i < a.data.size(); ++i) n += a.data[i] & b.data[i];
  return n;
}

double mean_min_distance(const std::vector<std::array<int, 3>>& from,
                         const std::vector<std::array<int, 3>>& to,
                         std::array<float, 3> sp) {
  double total = 0.0;
  for (const auto& a : from) {
    double best = std::numeric_limits<double>::max();
    for (const auto& b : to) {
      double dx = double(a[0] - b[0]) * sp[0];
      double dy = double(a[1] - b[1]) * sp[1];
      double dz = double(a[2] - b[2]) * sp[2];
      double d2 = dx * dx + dy * dy + dz * dz;
      if (d2 < best) best = d2;
    }
    total += std::sqrt(best);
  }
  return total / double(from.size());
}

void mean_std(const std::vector<double>& xs, double& mean, double& sd) {
  mean = 0;
  sd = 0;
  if (xs.empty()) return;
  for (double x : xs) mean += x;
  mean /= double(xs.size());
  if (xs.size() < 2) return;
  double acc = 0;
  for (double x : xs) acc += (x - mean) * (x - mean);
  sd = std::sqrt(acc / double(xs.size() - 1));
}

}  // namespace

std::vector<std::array<int, 3>> surface_voxels(const LabelVolume& mask) {
  std::vector<std::array<int, 3>> out;
  const int nx = mask.dims[0], ny = mask.dims[1], nz = mask.dims[2];
  auto outside = [&](int x, int y, int z) {
    if (x < 0 || x >= nx || y < 0 || y >= ny || z < 0 || z >= nz) return true;
    return mask.at(x, y, z) == 0;
  };
  for (int z = 0; z < nz; ++z)
    for (int y = 0; y < ny; ++y)
      for (int x = 0; x < nx; ++x) {
        if (!mask.at(x, y, z)) continue;
        if (outside(x - 1, y, z) || outside(x + 1, y, z) || outside(x, y - 1, z) ||
            outside(x, y + 1, z) || outside(x, y, z - 1) || outside(x, y, z + 1))
          out.push_back({x, y, z});
      }
  return out;
}

double dsc(const LabelVolume& gt, const LabelVolume& seg) {
  require_same_geometry(gt, seg, "dsc");
  size_t a = gt.foreground_count(), b = seg.foreground_count();
  if (a + b == 0) return 1.0;  // both empty: perfect agreement by decision
  return 2.0 * double(intersection_count(gt, seg)) / double(a + b);
}

double asd(const LabelVolume& gt, const LabelVolume& seg, std::array<float, 3> spacing) {
  require_same_geometry(gt, seg, "asd");
  auto sa = surface_voxels(gt);
  auto sb = surface_voxels(seg);
  require(!sa.empty() && !sb.empty(), ErrorCode::empty_mask, "asd: undefined surface");
  return 0.5 * (mean_min_distance(sa, sb, spacing) + mean_min_distance(sb, sa, spacing));
}

std::pair<double, double> sen_ppv(const LabelVolume& gt, const LabelVolume& seg) {
  require_same_geometry(gt, seg, "sen_ppv");
  size_t a = gt.foreground_count(), b = seg.foreground_count();
  require(a > 0, ErrorCode::empty_mask, "sen undefined: empty ground truth");
  require(b > 0, ErrorCode::empty_mask, "ppv undefined: empty segmentation");
  double inter = double(intersection_count(gt, seg));
  return {inter / double(a), inter / double(b)};
}

void MetricsReport::recompute_aggregates() {
  std::vector<double> d, a, s, p;
  for (const auto& r : rows) {
    if (!r.error.empty()) continue;
    d.push_back(r.dsc);
    a.push_back(r.asd_mm);
    s.push_back(r.sen);
    p.push_back(r.ppv);
  }
  mean_std(d, dsc_mean, dsc_std);
  mean_std(a, asd_mean, asd_std);
  mean_std(s, sen_mean, sen_std);
  mean_std(p, ppv_mean, ppv_std);
}

MetricsReport evaluate_cases(const std::vector<EvalPair>& pairs,
                             std::array<float, 3> spacing) {
  MetricsReport rep;
  for (const auto& pr : pairs) {
    CaseMetrics cm;
    cm.id = pr.id;
    try {
      cm.dsc = dsc(*pr.gt, *pr.seg);
      cm.asd_mm = asd(*pr.gt, *pr.seg, spacing);
      auto [sen, ppv] = sen_ppv(*pr.gt, *pr.seg);
      cm.sen = sen;
      cm.ppv = ppv;
    } catch (const Error& e) {
      cm.error = e.what();  // recorded, not fatal
    }
    rep.rows.push_back(std::move(cm));
  }
  rep.recompute_aggregates();
  return rep;
}

void write_report_csv(const std::string& path, const MetricsReport& report) {
  std::FILE* f = std::fopen(path.c_str(), "wb");
  require(f != nullptr, ErrorCode::io, "cannot open " + path);
  std::fprintf(f, "case,dsc,asd_mm,sen,ppv,error\n");
  for (const auto& r : report.rows) {
    if (r.error.empty())
      std::fprintf(f, "%s,%.10g,%.10g,%.10g,%.10g,\n", r.id.c_str(), r.dsc, r.asd_mm,
                   r.sen, r.ppv);
    else
      std::fprintf(f, "%s,,,,,\"%s\"\n", r.id.c_str(), r.error.c_str());
  }
  std::fprintf(f, "mean,%.10g,%.10g,%.10g,%.10g,\n", report.dsc_mean, report.asd_mean,
               report.sen_mean, report.ppv_mean);
  std::fprintf(f, "std,%.10g,%.10g,%.10g,%.10g,\n", report.dsc_std, report.asd_std,
               report.sen_std, report.ppv_std);
  std::fclose(f);
}

std::string report_summary(const MetricsReport& report) {
  char buf[512];
  int failed = 0;
  for (const auto& r : report.rows)
    if (!r.error.empty()) ++failed;
  std::snprintf(buf, sizeof(buf),
                "cases=%zu failed=%d  DSC %.4f+-%.4f  ASD %.4f+-%.4f mm  "
                "SEN %.4f+-%.4f  PPV %.4f+-%.4f",
                report.rows.size(), failed, report.dsc_mean, report.dsc_std,
                report.asd_mean, report.asd_std, report.sen_mean, report.sen_std,
                report.ppv_mean, report.ppv_std);
  return buf;
}

}  // namespace hf
