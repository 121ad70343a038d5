#include "hf/experiment.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>

#include <json.hpp>

#include "hf/checkpoint.hpp"
#include "hf/pipeline.hpp"
#include "hf/plots.hpp"
#include "hf/rng.hpp"

namespace hf::experiment {

namespace fs = std::filesystem;
using json = nlohmann::json;

std::string cache_root() {
  const char* env = std::getenv("HFUNET_CACHE_DIR");
  return env && *env ? env : ".hfunet_cache";
}

std::string data_hash(const config::DataConfig& d) {
  config::ExperimentConfig probe;
  probe.data = d;
  std::string text = config::serialize(probe);
  size_t a = text.find("[data]");
  size_t b = text.find("[topology]");
  std::string section = text.substr(a, b - a);
  // versioned so generator changes invalidate old caches
  uint64_t h = fnv1a64("phantom-v1|" + section);
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%016llx", (unsigned long long)h);
  return buf;
}

PhantomSpec case_spec(const config::DataConfig& d, int index) {
  PhantomSpec s;
  s.dims = d.dims;
  s.spacing = d.spacing;
  s.radial_perturbation_amplitude = float(d.perturbation);
  s.contrast_delta = float(d.contrast_delta);
  s.noise_sigma = float(d.noise_sigma);
  s.boundary_blur_sigma = float(d.blur_sigma);
  s.seed = subseed(d.data_seed, "phantom.case" + std::to_string(index));

  // per-case anatomy jitter, deterministic in the data seed
  Rng rng = make_rng(d.data_seed, "phantom.jitter" + std::to_string(index));
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int a = 0; a < 3; ++a) {
    s.organ_center[a] = float(d.dims[a] - 1) / 2.f + float(u(rng) * d.center_jitter);
    s.radii_mm[a] = d.radii_mm[a] * float(1.0 + u(rng) * d.radii_jitter);
  }
  return s;
}

CaseSet generate_cases(const config::DataConfig& d) {
  int total = d.train_cases + d.val_cases + d.test_cases;
  CaseSet set;
  set.hash = data_hash(d);
  fs::path dir = fs::path(cache_root()) / set.hash;
  fs::path meta = dir / "meta.json";

  if (fs::exists(meta)) {
    std::ifstream in(meta);
    json j = json::parse(in, nullptr, false);
    if (!j.is_discarded() && j.value("cases", -1) == total) {
      set.from_cache = true;
      for (int i = 0; i < total; ++i) {
        char img[32], lab[32];
        std::snprintf(img, sizeof(img), "case_%02d.img.hfv", i);
        std::snprintf(lab, sizeof(lab), "case_%02d.lab.hfv", i);
        set.images.push_back(read_volume((dir / img).string()));
        set.labels.push_back(read_label((dir / lab).string()));
      }
      return set;
    }
  }

  fs::create_directories(dir);
  for (int i = 0; i < total; ++i) {
    auto [img, lab] = generate_phantom(case_spec(d, i));
    char imgname[32], labname[32];
    std::snprintf(imgname, sizeof(imgname), "case_%02d.img.hfv", i);
    std::snprintf(labname, sizeof(labname), "case_%02d.lab.hfv", i);
    write_volume((dir / imgname).string(), img);
    write_volume((dir / labname).string(), lab);
    set.images.push_back(std::move(img));
    set.labels.push_back(std::move(lab));
  }
  json j;
  j["cases"] = total;
  j["hash"] = set.hash;
  std::ofstream out(meta);
  out << j.dump(2) << "\n";
  return set;
}

namespace {

struct PreparedCase {
  std::string id;
  Volume pre;      // preprocessed full volume
  LabelVolume gt;  // transformed identically
};

// preprocess image and carry the label through the same resample + crop
PreparedCase prepare_case(const std::string& id, const Volume& img,
                          const LabelVolume& lab, const config::DataConfig& d) {
  PreparedCase out;
  out.id = id;
  PreprocessInfo info;
  out.pre = preprocess(img, d.target_spacing, float(d.body_threshold), &info);
  LabelVolume rl = resample_label(lab, d.target_spacing);
  require(rl.dims == info.resampled_dims, ErrorCode::geometry,
          "prepare_case: resampled label dims mismatch");
  out.gt = crop_label(rl, info.crop_lo, info.crop_hi);
  return out;
}

pipeline::TrainCase to_train_case(const PreparedCase& pc, const pipeline::Localization& loc,
                                  const config::DataConfig& d, int crop) {
  pipeline::TrainCase c;
  c.id = pc.id;
  c.region = loc.region;
  c.gt = pipeline::crop_label_region(pc.gt, loc.offset, crop);
  c.heat = heatmap_stack(c.gt, d.sigma, d.truncation);
  return c;
}

std::string cell_dir_name(const std::string& topology, double alpha, uint64_t seed) {
  char buf[96];
  std::snprintf(buf, sizeof(buf), "%s_a%.2f_s%llu", topology.c_str(), alpha,
                (unsigned long long)seed);
  return buf;
}

void write_cell_meta(const std::string& dir, const CellResult& cell) {
  json j;
  j["topology"] = cell.topology;
  j["alpha"] = cell.alpha;
  j["seed"] = cell.seed;
  j["fb_shared"] = cell.fb_shared;
  j["fb_tcl"] = cell.fb_tcl;
  j["ok"] = cell.ok;
  j["error"] = cell.error;
  j["joint_steps"] = cell.joint_steps;
  j["train_dsc"] = cell.train_dsc;
  if (cell.ok) {
    j["dsc_mean"] = cell.test_report.dsc_mean;
    j["dsc_std"] = cell.test_report.dsc_std;
    j["asd_mean"] = cell.test_report.asd_mean;
    j["asd_std"] = cell.test_report.asd_std;
    j["sen_mean"] = cell.test_report.sen_mean;
    j["ppv_mean"] = cell.test_report.ppv_mean;
  }
  std::ofstream out(fs::path(dir) / "meta.json");
  out << j.dump(2) << "\n";
}

void write_summary(const std::string& path, const std::vector<CellResult>& cells) {
  std::FILE* f = std::fopen(path.c_str(), "wb");
  require(f != nullptr, ErrorCode::io, "cannot open " + path);
  std::fprintf(f,
               "method,fb,alpha,seed,status,dsc_mean,dsc_std,asd_mean,asd_std,"
               "sen_mean,ppv_mean,train_dsc,joint_steps\n");
  for (const CellResult& c : cells) {
    if (c.ok)
      std::fprintf(f, "%s,%d+%d,%.3g,%llu,ok,%.6g,%.6g,%.6g,%.6g,%.6g,%.6g,%.6g,%ld\n",
                   c.topology.c_str(), c.fb_shared, c.fb_tcl, c.alpha,
                   (unsigned long long)c.seed, c.test_report.dsc_mean,
                   c.test_report.dsc_std, c.test_report.asd_mean, c.test_report.asd_std,
                   c.test_report.sen_mean, c.test_report.ppv_mean, c.train_dsc,
                   c.joint_steps);
    else
      std::fprintf(f, "%s,%d+%d,%.3g,%llu,failed,,,,,,,,\"%s\"\n", c.topology.c_str(),
                   c.fb_shared, c.fb_tcl, c.alpha, (unsigned long long)c.seed,
                   c.error.c_str());
  }
  std::fclose(f);
}

// Table-I style aggregate: rows keyed by (topology, alpha), statistics over
// all test cases of all seeds.
void write_table(const std::string& path, const std::vector<CellResult>& cells) {
  struct Agg {
    int fb_shared = 0, fb_tcl = 0;
    std::vector<double> dsc, asd, sen, ppv;
  };
  std::map<std::pair<std::string, double>, Agg> byrow;
  for (const CellResult& c : cells) {
    if (!c.ok) continue;
    Agg& a = byrow[{c.topology, c.alpha}];
    a.fb_shared = c.fb_shared;
    a.fb_tcl = c.fb_tcl;
    for (const CaseMetrics& r : c.test_report.rows) {
      if (!r.error.empty()) continue;
      a.dsc.push_back(r.dsc);
      a.asd.push_back(r.asd_mm);
      a.sen.push_back(r.sen);
      a.ppv.push_back(r.ppv);
    }
  }
  auto mean_std = [](const std::vector<double>& v, double& m, double& s) {
    m = s = 0;
    if (v.empty()) return;
    for (double x : v) m += x;
    m /= double(v.size());
    if (v.size() < 2) return;
    for (double x : v) s += (x - m) * (x - m);
    s = std::sqrt(s / double(v.size() - 1));
  };
  std::FILE* f = std::fopen(path.c_str(), "wb");
  require(f != nullptr, ErrorCode::io, "cannot open " + path);
  std::fprintf(f, "method,fb,alpha,cases,dsc_mean,dsc_std,asd_mean,asd_std,sen,ppv\n");
  for (auto& [key, a] : byrow) {
    double dm, ds, am, as, sm, ss, pm, ps;
    mean_std(a.dsc, dm, ds);
    mean_std(a.asd, am, as);
    mean_std(a.sen, sm, ss);
    mean_std(a.ppv, pm, ps);
    std::fprintf(f, "%s,%d+%d,%.3g,%zu,%.6g,%.6g,%.6g,%.6g,%.6g,%.6g\n",
                 key.first.c_str(), a.fb_shared, a.fb_tcl, key.second, a.dsc.size(), dm,
                 ds, am, as, sm, pm);
  }
  std::fclose(f);
}

// box-plot data + SVGs for the alpha sweep
void write_alpha_box(const std::string& out_dir, const std::vector<CellResult>& cells) {
  std::map<double, std::pair<std::vector<double>, std::vector<double>>> byalpha;
  for (const CellResult& c : cells) {
    if (!c.ok || c.fb_tcl == 0) continue;
    for (const CaseMetrics& r : c.test_report.rows) {
      if (!r.error.empty()) continue;
      byalpha[c.alpha].first.push_back(r.dsc);
      byalpha[c.alpha].second.push_back(r.asd_mm);
    }
  }
  if (byalpha.size() < 2) return;
  std::FILE* f = std::fopen((fs::path(out_dir) / "alpha_box.csv").string().c_str(), "wb");
  require(f != nullptr, ErrorCode::io, "cannot open alpha_box.csv");
  std::fprintf(f, "alpha,metric,value\n");
  std::vector<plots::BoxGroup> dsc_groups, asd_groups;
  for (auto& [alpha, va] : byalpha) {
    char label[16];
    std::snprintf(label, sizeof(label), "%.1f", alpha);
    dsc_groups.push_back({label, va.first});
    asd_groups.push_back({label, va.second});
    for (double v : va.first) std::fprintf(f, "%.3g,dsc,%.6g\n", alpha, v);
    for (double v : va.second) std::fprintf(f, "%.3g,asd,%.6g\n", alpha, v);
  }
  std::fclose(f);
  plots::svg_box_plot((fs::path(out_dir) / "alpha_dsc_box.svg").string(),
                      "DSC vs alpha", "DSC", dsc_groups);
  plots::svg_box_plot((fs::path(out_dir) / "alpha_asd_box.svg").string(),
                      "ASD vs alpha", "ASD (mm)", asd_groups);
}

std::string source_hash() {
#ifdef HFUNET_SOURCE_HASH
  return HFUNET_SOURCE_HASH;
#else
  return "unknown";
#endif
}

}  // namespace

ExperimentResult run_experiment(const config::ExperimentConfig& cfg,
                                const std::string& out_dir_override,
                                bool propagate_errors) {
  ExperimentResult result;
  result.out_dir = out_dir_override.empty() ? cfg.eval.out_dir : out_dir_override;
  fs::create_directories(result.out_dir);
  {
    std::ofstream snap(fs::path(result.out_dir) / "config.snapshot.cfg");
    snap << serialize(cfg);
    std::ofstream src(fs::path(result.out_dir) / "source_hash.txt");
    src << source_hash() << "\n";
  }

  CaseSet cases = generate_cases(cfg.data);
  std::printf("[experiment] phantom set %s (%s)\n", cases.hash.c_str(),
              cases.from_cache ? "cached" : "generated");

  const config::DataConfig& d = cfg.data;
  std::vector<PreparedCase> prepared;
  for (size_t i = 0; i < cases.images.size(); ++i)
    prepared.push_back(prepare_case("case" + std::to_string(i), cases.images[i],
                                    cases.labels[i], d));

  auto subset = [&](int from, int count) {
    std::vector<const PreparedCase*> out;
    for (int i = from; i < from + count; ++i) out.push_back(&prepared[i]);
    return out;
  };
  auto train_set = subset(0, d.train_cases);
  auto val_set = subset(d.train_cases, d.val_cases);
  auto test_set = subset(d.train_cases + d.val_cases, d.test_cases);

  for (const std::string& tok : cfg.topology.topologies) {
    model::TopologyConfig probe = model::TopologyConfig::from_name(tok);
    bool weighted_hf =
        probe.family == model::Family::hf && probe.attention == model::Attention::none;
    // the alpha axis only multiplies weighted hf topologies
    std::vector<double> alphas =
        weighted_hf ? cfg.topology.alphas : std::vector<double>{cfg.topology.alphas[0]};
    for (double alpha : alphas) {
      for (uint64_t seed : cfg.seeds) {
        CellResult cell;
        cell.topology = tok;
        cell.alpha = alpha;
        cell.seed = seed;
        std::string dir =
            (fs::path(result.out_dir) / "cells" / cell_dir_name(tok, alpha, seed))
                .string();
        cell.dir = dir;
        fs::create_directories(dir);
        try {
          model::TopologyConfig mt = cfg.cell_topology(tok, alpha);
          auto fb = model::count_blocks(mt);
          cell.fb_shared = fb.first;
          cell.fb_tcl = fb.second;

          pipeline::TrainConfig tc = cfg.train;
          tc.seed = subseed(seed, "cell." + tok);

          // stage 1: localizer trained on the training volumes
          std::vector<const Volume*> vols;
          std::vector<const LabelVolume*> gts;
          for (auto* pc : train_set) {
            vols.push_back(&pc->pre);
            gts.push_back(&pc->gt);
          }
          auto loc_model = pipeline::train_localizer(vols, gts, tc);
          model::save_checkpoint(dir + "/localizer.hfck", loc_model);

          // stage 2 data: localize + crop + heatmaps
          auto build_cases = [&](const std::vector<const PreparedCase*>& pcs) {
            std::vector<pipeline::TrainCase> out;
            for (auto* pc : pcs) {
              pipeline::Localization loc =
                  pipeline::localize(pc->pre, loc_model, tc.crop_size);
              out.push_back(to_train_case(*pc, loc, d, tc.crop_size));
            }
            return out;
          };
          std::vector<pipeline::TrainCase> train_cases = build_cases(train_set);
          std::vector<pipeline::TrainCase> val_cases = build_cases(val_set);

          auto m = model::build_topology<float>(mt, {.seed = subseed(seed, "init")});
          pipeline::TrainHistory hist = pipeline::train(m, train_cases, val_cases, tc, dir);
          cell.joint_steps = hist.joint_steps;

          // loss curves
          if (cfg.eval.plots && !hist.steps.empty()) {
            plots::Series total{"total", {}, {}};
            plots::Series cls{"l_cls", {}, {}};
            for (const auto& s : hist.steps) {
              total.x.push_back(double(s.step));
              total.y.push_back(s.loss.total);
              cls.x.push_back(double(s.step));
              cls.y.push_back(s.loss.l_cls);
            }
            plots::svg_line_plot(dir + "/loss.svg", "training loss " + tok, "step",
                                 "loss", {total, cls});
          }

          // train-set DSC for the overfit check
          {
            std::vector<LabelVolume> preds;
            std::vector<EvalPair> pairs;
            for (auto& c : train_cases) preds.push_back(pipeline::infer(m, c.region, tc).mask);
            for (size_t i = 0; i < train_cases.size(); ++i)
              pairs.push_back({train_cases[i].id, &train_cases[i].gt, &preds[i]});
            cell.train_dsc = evaluate_cases(pairs, d.target_spacing).dsc_mean;
          }

          // held-out evaluation through the full two-stage pipeline
          std::vector<LabelVolume> test_preds;
          std::vector<EvalPair> pairs;
          for (auto* pc : test_set) {
            pipeline::TwoStageResult two = pipeline::two_stage_segment(pc->pre, loc_model, m, tc);
            test_preds.push_back(std::move(two.mask));
          }
          for (size_t i = 0; i < test_set.size(); ++i)
            pairs.push_back({test_set[i]->id, &test_set[i]->gt, &test_preds[i]});
          cell.test_report = evaluate_cases(pairs, d.target_spacing);
          cell.test_report.topology = tok;
          cell.test_report.seed = seed;
          cell.test_report.checkpoint_hash = std::to_string(
              model::file_hash(dir + "/checkpoint_final.hfck"));
          write_report_csv(dir + "/test_report.csv", cell.test_report);
          cell.ok = true;
        } catch (const std::exception& e) {
          if (propagate_errors) throw;
          cell.ok = false;
          cell.error = e.what();  // recorded; the sweep continues
        }
        write_cell_meta(dir, cell);
        std::printf("[experiment] %s: %s\n", cell_dir_name(tok, alpha, seed).c_str(),
                    cell.ok ? report_summary(cell.test_report).c_str()
                            : ("FAILED: " + cell.error).c_str());
        result.cells.push_back(std::move(cell));
      }
    }
  }

  write_summary((fs::path(result.out_dir) / "summary.csv").string(), result.cells);
  write_table((fs::path(result.out_dir) / "table.csv").string(), result.cells);
  if (cfg.eval.plots) write_alpha_box(result.out_dir, result.cells);
  return result;
}

void write_report_from_runs(const std::string& runs_dir, const std::string& out_csv) {
  std::vector<CellResult> cells;
  fs::path cells_dir = fs::path(runs_dir) / "cells";
  require(fs::exists(cells_dir), ErrorCode::io,
          "no cells/ directory under " + runs_dir);
  std::vector<fs::path> dirs;
  for (const auto& e : fs::directory_iterator(cells_dir))
    if (e.is_directory()) dirs.push_back(e.path());
  std::sort(dirs.begin(), dirs.end());
  for (const fs::path& p : dirs) {
    std::ifstream in(p / "meta.json");
    if (!in.good()) continue;
    json j = json::parse(in, nullptr, false);
    if (j.is_discarded()) continue;
    CellResult c;
    c.topology = j.value("topology", "?");
    c.alpha = j.value("alpha", 0.0);
    c.seed = j.value("seed", uint64_t(0));
    c.fb_shared = j.value("fb_shared", 0);
    c.fb_tcl = j.value("fb_tcl", 0);
    c.ok = j.value("ok", false);
    c.error = j.value("error", "");
    c.train_dsc = j.value("train_dsc", -1.0);
    c.joint_steps = j.value("joint_steps", 0L);
    c.dir = p.string();
    if (c.ok) {
      c.test_report.dsc_mean = j.value("dsc_mean", 0.0);
      c.test_report.dsc_std = j.value("dsc_std", 0.0);
      c.test_report.asd_mean = j.value("asd_mean", 0.0);
      c.test_report.asd_std = j.value("asd_std", 0.0);
      c.test_report.sen_mean = j.value("sen_mean", 0.0);
      c.test_report.ppv_mean = j.value("ppv_mean", 0.0);
    }
    cells.push_back(std::move(c));
  }
  write_summary(out_csv, cells);
}

void dump_features(const std::string& ckpt_path, const std::string& case_path, int level,
                   const std::string& out_path, int slice) {
  model::ModelState<float> m = model::load_checkpoint(ckpt_path);
  std::vector<int> valid;
  for (const auto& ids : m.levels) valid.push_back(ids.level);
  if (valid.empty())
    fail(ErrorCode::config, "no TCL levels in a '" + m.cfg.name() + "' checkpoint");
  const model::LevelIds* ids = nullptr;
  for (const auto& l : m.levels)
    if (l.level == level) ids = &l;
  if (!ids) {
    std::string msg = "level " + std::to_string(level) + " has no TCL block; valid levels:";
    for (int v : valid) msg += " " + std::to_string(v);
    fail(ErrorCode::config, msg);
  }

  Volume v = read_volume(case_path);
  require(v.dims[0] == v.dims[1], ErrorCode::geometry,
          "dump_features: case must have square axial slices");
  require(v.dims[0] % (1 << m.cfg.depth) == 0, ErrorCode::geometry,
          "dump_features: slice side must be divisible by 8");
  if (slice < 0) slice = v.dims[2] / 2;
  require(slice >= 0 && slice < v.dims[2], ErrorCode::config,
          "dump_features: slice out of range");

  nn::Batch<float> x(1, m.cfg.in_slices, v.dims[1], v.dims[0]);
  const size_t plane = size_t(v.dims[0]) * v.dims[1];
  for (int s = 0; s < m.cfg.in_slices; ++s) {
    int z = std::clamp(slice - m.cfg.in_slices / 2 + s, 0, v.dims[2] - 1);
    std::copy_n(v.data.data() + size_t(z) * plane, plane, x.plane(s, 0));
  }
  m.net.forward(x);

  const nn::Batch<float>& fseg = m.net.out(ids->seg_feat);
  const nn::Batch<float>& fcont = m.net.out(ids->cont_feat);
  const nn::Batch<float>& ftcl = m.net.out(ids->tcl_feat);
  int channels = std::min(14, fseg.c);
  std::vector<std::vector<float>> tiles;
  for (const nn::Batch<float>* f : {&fseg, &fcont, &ftcl})
    for (int ci = 0; ci < channels; ++ci)
      tiles.emplace_back(f->plane(ci, 0), f->plane(ci, 0) + f->spatial());
  plots::ppm_mosaic(out_path, tiles, 3, channels, fseg.h, fseg.w);
}

}  // namespace hf::experiment
