#include <cstdio>
#include <filesystem>

#include <CLI11.hpp>

#include "cli_common.hpp"
#include "hf/checkpoint.hpp"
#include "hf/experiment.hpp"
#include "hf/pipeline.hpp"

namespace fs = std::filesystem;

namespace {

// single-cell training: first topology x first alpha x first seed
void cmd_train(const std::string& config_path, const std::string& out_override) {
  hf::config::ExperimentConfig cfg = hf::config::parse_config(config_path);
  cfg.topology.topologies.resize(1);
  cfg.topology.alphas.resize(1);
  cfg.seeds.resize(1);
  hf::experiment::ExperimentResult res =
      hf::experiment::run_experiment(cfg, out_override, /*propagate_errors=*/true);
  hf::require(!res.cells.empty(), hf::ErrorCode::config, "no cells ran");
  std::printf("run dir: %s\n", res.cells.front().dir.c_str());
}

void cmd_infer(const std::string& ckpt, const std::string& loc_ckpt,
               const std::string& in_path, const std::string& out_path,
               const std::string& heat_path, int crop_size) {
  hf::model::ModelState<float> m = hf::model::load_checkpoint(ckpt);
  hf::Volume v = hf::read_volume(in_path);
  hf::pipeline::TrainConfig tc;
  tc.crop_size = crop_size;
  tc.slices = m.cfg.in_slices;

  hf::LabelVolume mask;
  hf::Volume heat;
  if (v.dims[0] == crop_size && v.dims[1] == crop_size && v.dims[2] == crop_size) {
    hf::pipeline::InferenceResult r = hf::pipeline::infer(m, v, tc);
    mask = std::move(r.mask);
    heat = std::move(r.heat_pred);
  } else {
    hf::require(!loc_ckpt.empty(), hf::ErrorCode::config,
                "input is not a crop-sized region; pass --loc-ckpt for two-stage inference");
    hf::model::ModelState<float> loc = hf::model::load_checkpoint(loc_ckpt);
    hf::pipeline::TwoStageResult r = hf::pipeline::two_stage_segment(v, loc, m, tc);
    mask = std::move(r.mask);
    heat = std::move(r.heat_pred);
    if (r.loc.fallback)
      std::fprintf(stderr, "warning: empty coarse prediction, used the volume center\n");
  }
  hf::write_volume(out_path, mask);
  std::printf("wrote %s (%zu foreground voxels)\n", out_path.c_str(),
              mask.foreground_count());
  if (!heat_path.empty() && !heat.data.empty()) {
    hf::write_volume(heat_path, heat);
    std::printf("wrote %s\n", heat_path.c_str());
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hierarchically-fused multi-task segmentation"};
  app.require_subcommand(1);

  std::string config_path, out_dir;
  auto* train = app.add_subcommand("train", "train one configuration");
  train->add_option("--config", config_path, "experiment config")->required();
  train->add_option("--out", out_dir, "output directory override");

  auto* sweep = app.add_subcommand("sweep", "run the full topology/alpha/seed grid");
  std::string sweep_config, sweep_out;
  sweep->add_option("--config", sweep_config, "experiment config")->required();
  sweep->add_option("--out", sweep_out, "output directory override");

  auto* infer = app.add_subcommand("infer", "segment a volume with a checkpoint");
  std::string ckpt, loc_ckpt, in_path, out_path, heat_path;
  int crop_size = 64;
  infer->add_option("--ckpt", ckpt, "model checkpoint")->required();
  infer->add_option("--loc-ckpt", loc_ckpt, "localizer checkpoint (for full volumes)");
  infer->add_option("--in", in_path, "input volume (.hfv)")->required();
  infer->add_option("--out", out_path, "output mask (.hfv)")->required();
  infer->add_option("--heat", heat_path, "optional contour-heatmap output (.hfv)");
  infer->add_option("--crop", crop_size, "region size");

  auto* report = app.add_subcommand("report", "aggregate run directories into a table");
  std::string runs_dir, report_out;
  report->add_option("--runs", runs_dir, "experiment output directory")->required();
  report->add_option("--out", report_out, "summary CSV")->required();

  auto* dump = app.add_subcommand("dump-features", "channel mosaic of one TCL level");
  std::string dump_ckpt, dump_case, dump_out;
  int dump_level = 7, dump_slice = -1;
  dump->add_option("--ckpt", dump_ckpt, "model checkpoint")->required();
  dump->add_option("--case", dump_case, "input volume (.hfv)")->required();
  dump->add_option("--level", dump_level, "TCL level");
  dump->add_option("--slice", dump_slice, "axial slice (default: middle)");
  dump->add_option("--out", dump_out, "output mosaic (.ppm)")->required();

  CLI11_PARSE(app, argc, argv);

  return hf::cli::run_guarded([&] {
    if (train->parsed()) {
      cmd_train(config_path, out_dir);
    } else if (sweep->parsed()) {
      hf::config::ExperimentConfig cfg = hf::config::parse_config(sweep_config);
      hf::experiment::run_experiment(cfg, sweep_out);
    } else if (infer->parsed()) {
      cmd_infer(ckpt, loc_ckpt, in_path, out_path, heat_path, crop_size);
    } else if (report->parsed()) {
      hf::experiment::write_report_from_runs(runs_dir, report_out);
      std::printf("wrote %s\n", report_out.c_str());
    } else if (dump->parsed()) {
      hf::experiment::dump_features(dump_ckpt, dump_case, dump_level, dump_out,
                                    dump_slice);
      std::printf("wrote %s\n", dump_out.c_str());
    }
  });
}
