#include <cstdio>
#include <filesystem>

#include <CLI11.hpp>

#include "cli_common.hpp"
#include "hf/metrics.hpp"

namespace fs = std::filesystem;

int main(int argc, char** argv) {
  CLI::App app{"segmentation metrics"};
  app.require_subcommand(1);

  auto* ev = app.add_subcommand("eval", "evaluate prediction masks against ground truth");
  std::string gt_dir, pred_dir, out_csv;
  ev->add_option("--gt-dir", gt_dir, "directory of ground-truth labels")->required();
  ev->add_option("--pred-dir", pred_dir, "directory of prediction labels")->required();
  ev->add_option("--out", out_csv, "report CSV path")->required();

  CLI11_PARSE(app, argc, argv);

  return hf::cli::run_guarded([&] {
    std::vector<fs::path> gts;
    for (const auto& e : fs::directory_iterator(gt_dir))
      if (e.path().extension() == ".hfv") gts.push_back(e.path());
    std::sort(gts.begin(), gts.end());
    hf::require(!gts.empty(), hf::ErrorCode::config, "no .hfv files in " + gt_dir);

    // pair by file name
    std::vector<hf::LabelVolume> gt_vols, pred_vols;
    std::vector<hf::EvalPair> pairs;
    std::vector<std::string> ids;
    for (const fs::path& g : gts) {
      fs::path p = fs::path(pred_dir) / g.filename();
      hf::require(fs::exists(p), hf::ErrorCode::config,
                  "missing prediction for " + g.filename().string());
      gt_vols.push_back(hf::read_label(g.string()));
      pred_vols.push_back(hf::read_label(p.string()));
      ids.push_back(g.stem().string());
    }
    for (size_t i = 0; i < gt_vols.size(); ++i)
      pairs.push_back({ids[i], &gt_vols[i], &pred_vols[i]});
    hf::MetricsReport rep = hf::evaluate_cases(pairs, gt_vols[0].spacing);
    hf::write_report_csv(out_csv, rep);
    std::printf("%s\n", hf::report_summary(rep).c_str());
  });
}
