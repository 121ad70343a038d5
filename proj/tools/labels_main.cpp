#include <cstdio>

#include <CLI11.hpp>

#include "cli_common.hpp"
#include "hf/contour.hpp"

int main(int argc, char** argv) {
  CLI::App app{"contour-sensitive label tools"};
  app.require_subcommand(1);

  auto* hm = app.add_subcommand("heatmap", "build the contour heatmap stack of a label");
  std::string in_path, out_path;
  double sigma = 5.0, truncation = -1.0;
  hm->add_option("--in", in_path, "label volume (.hfv, dtype 1)")->required();
  hm->add_option("--sigma", sigma, "Gaussian kernel sigma in pixels");
  hm->add_option("--truncation", truncation, "support radius (defaults to sigma)");
  hm->add_option("--out", out_path, "output f32 volume")->required();

  CLI11_PARSE(app, argc, argv);

  return hf::cli::run_guarded([&] {
    hf::LabelVolume lab = hf::read_label(in_path);
    auto stack = hf::heatmap_stack(lab, sigma, truncation);
    hf::write_volume(out_path, hf::heatmaps_to_volume(stack, lab.spacing));
    std::printf("wrote %s (%d slices, sigma %.3g)\n", out_path.c_str(), lab.dims[2],
                sigma);
  });
}
