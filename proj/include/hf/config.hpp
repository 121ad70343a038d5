#pragma once

#include <array>
#include <string>
#include <vector>

#include "hf/pipeline.hpp"

namespace hf::config {

// Collected validation failures; what() joins them, one per line.
class ConfigErrors : public Error {
public:
  explicit ConfigErrors(std::vector<std::string> errors)
      : Error(ErrorCode::config, join(errors)), errors_(std::move(errors)) {}
  const std::vector<std::string>& errors() const { return errors_; }

private:
  static std::string join(const std::vector<std::string>& es) {
    std::string s;
    for (const auto& e : es) {
      if (!s.empty()) s += "\n";
      s += e;
    }
    return s;
  }
  std::vector<std::string> errors_;
};

struct DataConfig {
  int train_cases = 8, val_cases = 2, test_cases = 4;
  std::array<int, 3> dims{96, 96, 96};
  std::array<float, 3> spacing{1.f, 1.f, 1.f};
  std::array<float, 3> radii_mm{20.f, 14.f, 16.f};
  double radii_jitter = 0.15;   // per-case fraction
  double center_jitter = 6;     // voxels
  double perturbation = 0.15;
  double contrast_delta = 1.0;
  double noise_sigma = 0.5;
  double blur_sigma = 1.0;
  std::array<float, 3> target_spacing{1.f, 1.f, 1.f};
  double body_threshold = -0.95;
  double sigma = 5.0;          // contour heatmap kernel
  double truncation = -1.0;    // <= 0: defaults to sigma
  uint64_t data_seed = 1234;   // phantom data is shared across the sweep grid
};

struct TopologyGridConfig {
  std::vector<std::string> topologies{"hf-6"};
  std::vector<double> alphas{0.2};
  int base_width = 8;
  int in_slices = 3;
  int classes = 2;
  bool averaged_attention = false;
  bool instance_norm = false;
};

struct EvalConfig {
  bool plots = true;
  bool dump_heatmaps = false;
  std::string out_dir = "runs/exp";
};

struct ExperimentConfig {
  DataConfig data;
  TopologyGridConfig topology;
  pipeline::TrainConfig train;
  std::vector<uint64_t> seeds{1};
  EvalConfig eval;

  size_t grid_cardinality() const {
    return topology.topologies.size() * topology.alphas.size() * seeds.size();
  }
  // resolved model config for one grid cell
  model::TopologyConfig cell_topology(const std::string& token, double alpha) const;
};

ExperimentConfig parse_config(const std::string& path);
ExperimentConfig parse_config_text(const std::string& text, const std::string& name);
std::string serialize(const ExperimentConfig& cfg);

}  // namespace hf::config
