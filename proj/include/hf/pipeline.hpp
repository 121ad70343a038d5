#pragma once

#include <string>
#include <vector>

#include "hf/losses.hpp"
#include "hf/metrics.hpp"
#include "hf/model.hpp"
#include "hf/phantom.hpp"

namespace hf::pipeline {

struct TrainConfig {
  int epochs = 60;
  int batch_size = 64;
  double lr_start = 0.01;
  double lr_end = 0.0001;
  long lr_step_iterations = 200000;  // paper scale; desk configs shrink it
  double momentum = 0.9;
  int cold_start_epochs = 1;
  loss::LossWeights weights;
  uint64_t seed = 1;
  int crop_size = 64;
  int patch_size = 64;
  int slices = 3;
  int patches_per_volume = 32;
  int val_interval = 10;             // epochs between validation passes
  double early_stop_train_dsc = -1;  // enabled when > 0
  int train_eval_interval = 10;      // epochs between train-DSC probes
  long max_joint_steps = -1;         // cap on joint-phase steps (-1 = off)
  int loc_steps = 300;               // stage-1 localizer training steps
  int loc_width = 4;
};

void validate_train_config(const TrainConfig& cfg);

enum class Phase { cold_start, joint };

struct StepRecord {
  long step = 0;
  loss::LossBreakdown loss;
  double lr = 0;
  Phase phase = Phase::joint;
};

struct TrainHistory {
  std::vector<StepRecord> steps;
  struct ValEntry {
    int epoch;
    MetricsReport report;
  };
  std::vector<ValEntry> val;
  long joint_steps = 0;
  bool early_stopped = false;
};

void write_history_csv(const std::string& path, const TrainHistory& h);

struct TrainCase {
  std::string id;
  Volume region;  // preprocessed intensities, crop_size cube
  LabelVolume gt;
  std::vector<ContourHeatmap> heat;
};

// Step decay from lr_start to lr_end: the factor is chosen so the floor is
// reached exactly at the end of the planned schedule, then clamped there.
double lr_decay_factor(const TrainConfig& cfg, long total_steps);
double lr_at(const TrainConfig& cfg, long step, long total_steps);

// SGD training with the cold-start freeze: during the first
// cold_start_epochs epochs only {shared, seg_branch} parameters move, and
// the contour/TCL groups stay bit-identical. When run_dir is nonempty the
// trainer writes per-epoch checkpoints, the loss CSV and validation reports.
TrainHistory train(model::ModelState<float>& m, const std::vector<TrainCase>& train_cases,
                   const std::vector<TrainCase>& val_cases, const TrainConfig& cfg,
                   const std::string& run_dir = "");

struct InferenceResult {
  LabelVolume mask;
  Volume heat_pred;  // contour-branch output stack; empty dims for unet
};

// Sweeps every axial slice with a replicated-edge 2.5D stack, takes the
// middle-slice argmax, and keeps the largest 6-connected component.
InferenceResult infer(model::ModelState<float>& m, const Volume& region,
                      const TrainConfig& cfg);

LabelVolume largest_component(const LabelVolume& mask);

struct Localization {
  std::array<int, 3> center{0, 0, 0};  // full-resolution voxel coords
  Volume region;
  bool fallback = false;               // empty coarse prediction, used volume center
  std::array<int, 3> offset{0, 0, 0};  // region origin in source voxel coords
};

Localization localize(const Volume& v, model::ModelState<float>& loc_model,
                      int crop_size, int downsample = 4);

model::TopologyConfig localizer_topology(int width = 4);

// Stage-1 net trained on downsampled whole slices with the classification
// loss only.
model::ModelState<float> train_localizer(const std::vector<const Volume*>& vols,
                                         const std::vector<const LabelVolume*>& gts,
                                         const TrainConfig& cfg, int downsample = 4);

Volume crop_volume_region(const Volume& v, std::array<int, 3> offset, int crop);
LabelVolume crop_label_region(const LabelVolume& gt, std::array<int, 3> offset, int crop);
LabelVolume paste_region(std::array<int, 3> full_dims, std::array<float, 3> spacing,
                         const LabelVolume& mask, std::array<int, 3> offset);

struct TwoStageResult {
  LabelVolume mask;  // full-volume geometry
  Localization loc;
  Volume heat_pred;
};

TwoStageResult two_stage_segment(const Volume& v_pre, model::ModelState<float>& loc_model,
                                 model::ModelState<float>& m, const TrainConfig& cfg);

uint64_t model_checksum(const model::ModelState<float>& m);

}  // namespace hf::pipeline
