#pragma once

#include <array>
#include <string>
#include <vector>

#include "hf/volume.hpp"

namespace hf {

double dsc(const LabelVolume& gt, const LabelVolume& seg);

// Symmetric average surface distance in mm. Surfaces are voxels with at
// least one of their 6 face-neighbors outside the mask (the volume border
// counts as outside); distances are center-to-center. Errors on empty masks.
double asd(const LabelVolume& gt, const LabelVolume& seg, std::array<float, 3> spacing);

std::pair<double, double> sen_ppv(const LabelVolume& gt, const LabelVolume& seg);

struct CaseMetrics {
  std::string id;
  double dsc = 0, asd_mm = 0, sen = 0, ppv = 0;
  std::string error;  // nonempty when the case failed; excluded from aggregates
};

struct MetricsReport {
  std::vector<CaseMetrics> rows;
  double dsc_mean = 0, dsc_std = 0;
  double asd_mean = 0, asd_std = 0;
  double sen_mean = 0, sen_std = 0;
  double ppv_mean = 0, ppv_std = 0;
  // run metadata
  std::string topology;
  uint64_t seed = 0;
  std::string checkpoint_hash;

  void recompute_aggregates();
};

struct EvalPair {
  std::string id;
  const LabelVolume* gt = nullptr;
  const LabelVolume* seg = nullptr;
};

MetricsReport evaluate_cases(const std::vector<EvalPair>& pairs,
                             std::array<float, 3> spacing);

void write_report_csv(const std::string& path, const MetricsReport& report);
std::string report_summary(const MetricsReport& report);

std::vector<std::array<int, 3>> surface_voxels(const LabelVolume& mask);

}  // namespace hf
