#pragma once

#include <string>
#include <vector>

#include "hf/config.hpp"
#include "hf/metrics.hpp"

namespace hf::experiment {

// Phantom data generation with a content-addressed cache: the key hashes the
// [data] section, so a rerun with an identical config reuses the same files.
struct CaseSet {
  std::vector<Volume> images;
  std::vector<LabelVolume> labels;
  std::string hash;
  bool from_cache = false;
};

std::string cache_root();  // $HFUNET_CACHE_DIR, else .hfunet_cache
std::string data_hash(const config::DataConfig& d);
CaseSet generate_cases(const config::DataConfig& d);
PhantomSpec case_spec(const config::DataConfig& d, int index);

struct CellResult {
  std::string topology;
  double alpha = 0;
  uint64_t seed = 0;
  int fb_shared = 0, fb_tcl = 0;
  bool ok = false;
  std::string error;
  std::string dir;
  MetricsReport test_report;
  double train_dsc = -1;  // final train-set DSC when evaluated
  long joint_steps = 0;
};

struct ExperimentResult {
  std::vector<CellResult> cells;
  std::string out_dir;
};

// Full sweep: topologies x alphas x seeds, each cell a complete
// localize-crop-train-infer-evaluate pipeline writing into its own directory.
ExperimentResult run_experiment(const config::ExperimentConfig& cfg,
                                const std::string& out_dir_override = "",
                                bool propagate_errors = false);

// Rebuild the summary table from existing run directories.
void write_report_from_runs(const std::string& runs_dir, const std::string& out_csv);

// Fig.-5/6-style channel mosaic of (xi_seg, xi_cont, xi_tcl) at one level.
void dump_features(const std::string& ckpt_path, const std::string& case_path, int level,
                   const std::string& out_path, int slice = -1);

}  // namespace hf::experiment
