#include "hf/pipeline.hpp"

#include <malloc.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <filesystem>

#include "hf/checkpoint.hpp"
#include "hf/rng.hpp"

namespace hf::pipeline {

namespace fs = std::filesystem;
using nn::Batch;
using nn::Group;

void validate_train_config(const TrainConfig& cfg) {
  require(cfg.epochs >= 1, ErrorCode::config, "epochs must be >= 1");
  require(cfg.batch_size >= 1, ErrorCode::config, "batch_size must be >= 1");
  require(cfg.lr_end <= cfg.lr_start, ErrorCode::config, "lr_end must be <= lr_start");
  require(cfg.lr_start > 0 && cfg.lr_end > 0, ErrorCode::config, "lr must be positive");
  require(cfg.lr_step_iterations >= 1, ErrorCode::config, "lr_step_iterations must be >= 1");
  require(cfg.momentum >= 0 && cfg.momentum < 1, ErrorCode::config, "momentum in [0,1)");
  require(cfg.cold_start_epochs >= 0 && cfg.cold_start_epochs < cfg.epochs,
          ErrorCode::config, "cold_start_epochs must be < epochs");
  require(cfg.crop_size >= 8 && cfg.crop_size % 8 == 0, ErrorCode::config,
          "crop_size must be a positive multiple of 8");
  require(cfg.patch_size >= 8 && cfg.patch_size % 8 == 0 &&
              cfg.patch_size <= cfg.crop_size,
          ErrorCode::config, "patch_size must be a multiple of 8 and fit the crop");
  require(cfg.slices >= 1 && cfg.slices % 2 == 1, ErrorCode::config, "slices must be odd");
  require(cfg.patches_per_volume >= 1, ErrorCode::config, "patches_per_volume >= 1");
}

double lr_decay_factor(const TrainConfig& cfg, long total_steps) {
  long boundaries = total_steps > 1 ? (total_steps - 1) / cfg.lr_step_iterations : 0;
  if (boundaries < 1 || cfg.lr_end == cfg.lr_start) return 1.0;
  return std::pow(cfg.lr_end / cfg.lr_start, 1.0 / double(boundaries));
}

double lr_at(const TrainConfig& cfg, long step, long total_steps) {
  double f = lr_decay_factor(cfg, total_steps);
  double lr = cfg.lr_start * std::pow(f, double(step / cfg.lr_step_iterations));
  return std::max(lr, cfg.lr_end);
}

namespace {

const char* phase_name(Phase p) { return p == Phase::cold_start ? "cold_start" : "joint"; }

// momentum SGD over a fixed parameter registry; frozen groups are skipped
// entirely so their bytes never change
class Sgd {
public:
  explicit Sgd(nn::Network<float>& net) : net_(net) {
    for (nn::Param<float>* p : net.params()) buf_.emplace_back(p->size(), 0.f);
  }
  void step(double lr, double momentum, bool cold_start) {
    const auto& params = net_.params();
    for (size_t i = 0; i < params.size(); ++i) {
      nn::Param<float>* p = params[i];
      if (cold_start && (p->group == Group::cont || p->group == Group::tcl)) continue;
      std::vector<float>& v = buf_[i];
      for (size_t j = 0; j < p->size(); ++j) {
        v[j] = float(momentum) * v[j] + p->grad[j];
        p->value[j] -= float(lr) * v[j];
      }
    }
  }

private:
  nn::Network<float>& net_;
  std::vector<std::vector<float>> buf_;
};

struct BatchData {
  Batch<float> x, mask, heat;
};

// assemble a batch from sampled patches
BatchData make_batch(const std::vector<const TrainingPatch*>& patches, int p, int slices) {
  BatchData b;
  int n = int(patches.size());
  b.x.resize(n, slices, p, p);
  b.mask.resize(n, 1, p, p);
  b.heat.resize(n, 1, p, p);
  const size_t plane = size_t(p) * p;
  for (int i = 0; i < n; ++i) {
    const TrainingPatch& tp = *patches[i];
    for (int s = 0; s < slices; ++s)
      std::copy_n(tp.stack.planes.data() + size_t(s) * plane, plane, b.x.plane(s, i));
    for (size_t j = 0; j < plane; ++j) b.mask.plane(0, i)[j] = float(tp.mask[j]);
    std::copy_n(tp.heat.data(), plane, b.heat.plane(0, i));
  }
  return b;
}

// forward + losses + backward; returns the breakdown (gradients are left in
// the network)
loss::LossBreakdown train_step(model::ModelState<float>& m, const BatchData& b,
                               const loss::LossWeights& w) {
  m.net.forward(b.x);

  const Batch<float>& prob = m.net.out(m.seg_prob);
  Batch<float> fg(prob.n, 1, prob.h, prob.w);
  std::copy(prob.row(1), prob.row(1) + prob.cols(), fg.data.begin());
  Batch<float> gfg;
  double l_cls = loss::classification_loss(fg, b.mask, &gfg);

  double l_reg = 0, l_tcl = 0;
  std::vector<std::pair<int, Batch<float>>> seeds;

  Batch<float> gprob(prob.n, prob.c, prob.h, prob.w);
  for (size_t i = 0; i < gfg.data.size(); ++i)
    gprob.data[prob.cols() + i] = float(w.lambda1) * gfg.data[i];
  seeds.emplace_back(m.seg_prob, std::move(gprob));

  if (m.contour_pred >= 0) {
    Batch<float> gpred;
    l_reg = loss::regression_loss(m.net.out(m.contour_pred), b.heat, &gpred);
    for (auto& v : gpred.data) v *= float(w.lambda2);
    seeds.emplace_back(m.contour_pred, std::move(gpred));
  }
  if (!m.levels.empty()) {
    std::vector<loss::TriplePtrs<float>> triples;
    for (auto& ids : m.levels)
      triples.push_back({ids.level, &m.net.out(ids.seg_feat), &m.net.out(ids.cont_feat),
                         &m.net.out(ids.tcl_feat)});
    std::vector<loss::TripleGrads<float>> tg;
    l_tcl = loss::tcl_consistency_loss(triples, &tg);
    for (size_t i = 0; i < tg.size(); ++i) {
      for (auto& v : tg[i].seg.data) v *= float(w.lambda3);
      for (auto& v : tg[i].cont.data) v *= float(w.lambda3);
      for (auto& v : tg[i].tcl.data) v *= float(w.lambda3);
      seeds.emplace_back(m.levels[i].seg_feat, std::move(tg[i].seg));
      seeds.emplace_back(m.levels[i].cont_feat, std::move(tg[i].cont));
      seeds.emplace_back(m.levels[i].tcl_feat, std::move(tg[i].tcl));
    }
  }

  // combine() rejects non-finite components before any parameter moves
  loss::LossBreakdown breakdown =
      loss::combine(l_cls, l_reg, l_tcl, loss::regularizer(m.net, w.weight_decay), w);

  m.net.zero_grad();
  m.net.backward(std::move(seeds));
  loss::add_regularizer_grads(m.net, w.weight_decay);
  return breakdown;
}

MetricsReport eval_cases(model::ModelState<float>& m,
                         const std::vector<TrainCase>& cases, const TrainConfig& cfg) {
  std::vector<LabelVolume> preds;
  preds.reserve(cases.size());
  for (const TrainCase& c : cases) preds.push_back(infer(m, c.region, cfg).mask);
  std::vector<EvalPair> pairs;
  for (size_t i = 0; i < cases.size(); ++i)
    pairs.push_back({cases[i].id, &cases[i].gt, &preds[i]});
  return evaluate_cases(pairs, cases.empty() ? std::array<float, 3>{1, 1, 1}
                                             : cases[0].region.spacing);
}

}  // namespace

uint64_t model_checksum(const model::ModelState<float>& m) {
  uint64_t h = 1469598103934665603ull;
  for (const nn::Param<float>* p : m.net.params())
    h = fnv1a64(p->value.data(), p->value.size() * sizeof(float), h);
  return h;
}

TrainHistory train(model::ModelState<float>& m, const std::vector<TrainCase>& train_cases,
                   const std::vector<TrainCase>& val_cases, const TrainConfig& cfg,
                   const std::string& run_dir) {
  // keep freed activation blocks in the arena; the step loop reallocates the
  // same sizes every iteration
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  validate_train_config(cfg);
  require(!train_cases.empty(), ErrorCode::config, "train: dataset is empty");
  for (const TrainCase& c : train_cases) {
    require_same_geometry(c.region, c.gt, "train case " + c.id);
    require(int(c.heat.size()) == c.region.dims[2], ErrorCode::geometry,
            "train case " + c.id + ": heatmap stack depth mismatch");
  }

  TrainHistory hist;
  Sgd sgd(m.net);
  const int patches_per_epoch = int(train_cases.size()) * cfg.patches_per_volume;
  const long steps_per_epoch =
      (patches_per_epoch + cfg.batch_size - 1) / cfg.batch_size;
  const long total_steps = steps_per_epoch * cfg.epochs;
  long step = 0;

  if (!run_dir.empty()) fs::create_directories(run_dir);

  bool stop = false;
  for (int epoch = 0; epoch < cfg.epochs && !stop; ++epoch) {
    Phase phase = epoch < cfg.cold_start_epochs ? Phase::cold_start : Phase::joint;

    // fresh patch pool each epoch, shuffled deterministically
    std::vector<TrainingPatch> pool;
    pool.reserve(patches_per_epoch);
    for (const TrainCase& c : train_cases) {
      uint64_t s = subseed(cfg.seed, "patches." + c.id + ".e" + std::to_string(epoch));
      auto ps = sample_training_patches(c.region, c.gt, c.heat, cfg.patches_per_volume,
                                        s, cfg.patch_size, cfg.slices);
      for (auto& p : ps) pool.push_back(std::move(p));
    }
    Rng shuffle_rng = make_rng(cfg.seed, "shuffle.e" + std::to_string(epoch));
    std::shuffle(pool.begin(), pool.end(), shuffle_rng);

    for (size_t start = 0; start < pool.size() && !stop; start += cfg.batch_size) {
      if (phase == Phase::joint && cfg.max_joint_steps >= 0 &&
          hist.joint_steps >= cfg.max_joint_steps) {
        stop = true;
        break;
      }
      size_t end = std::min(pool.size(), start + cfg.batch_size);
      std::vector<const TrainingPatch*> view;
      for (size_t i = start; i < end; ++i) view.push_back(&pool[i]);
      BatchData batch = make_batch(view, cfg.patch_size, cfg.slices);

      double lr = lr_at(cfg, step, total_steps);
      loss::LossBreakdown breakdown;
      try {
        breakdown = train_step(m, batch, cfg.weights);
      } catch (const Error& e) {
        if (e.code() == ErrorCode::numeric) {
          if (!run_dir.empty()) write_history_csv(run_dir + "/history.csv", hist);
          fail(ErrorCode::divergence,
               std::string("training diverged at step ") + std::to_string(step) + ": " +
                   e.what() +
                   (run_dir.empty() ? "" : "; last checkpoint in " + run_dir));
        }
        throw;
      }
      sgd.step(lr, cfg.momentum, phase == Phase::cold_start);
      hist.steps.push_back({step, breakdown, lr, phase});
      ++step;
      if (phase == Phase::joint) ++hist.joint_steps;
    }

    bool last = stop || epoch == cfg.epochs - 1;
    if (!val_cases.empty() &&
        (last || (cfg.val_interval > 0 && (epoch + 1) % cfg.val_interval == 0)))
      hist.val.push_back({epoch, eval_cases(m, val_cases, cfg)});

    if (!stop && cfg.early_stop_train_dsc > 0 && cfg.train_eval_interval > 0 &&
        (epoch + 1) % cfg.train_eval_interval == 0 && phase == Phase::joint) {
      MetricsReport r = eval_cases(m, train_cases, cfg);
      if (r.dsc_mean >= cfg.early_stop_train_dsc) {
        hist.early_stopped = true;
        stop = true;
        if (!val_cases.empty() && (hist.val.empty() || hist.val.back().epoch != epoch))
          hist.val.push_back({epoch, eval_cases(m, val_cases, cfg)});
      }
    }

    if (!run_dir.empty())
      model::save_checkpoint(run_dir + "/checkpoint_last.hfck", m);
  }

  if (!run_dir.empty()) {
    model::save_checkpoint(run_dir + "/checkpoint_final.hfck", m);
    write_history_csv(run_dir + "/history.csv", hist);
  }
  return hist;
}

void write_history_csv(const std::string& path, const TrainHistory& h) {
  std::FILE* f = std::fopen(path.c_str(), "wb");
  require(f != nullptr, ErrorCode::io, "cannot open " + path);
  std::fprintf(f, "step,l_cls,l_reg,l_tcl,l_regularizer,total,lr,phase\n");
  for (const StepRecord& s : h.steps)
    std::fprintf(f, "%ld,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%s\n", s.step, s.loss.l_cls,
                 s.loss.l_reg, s.loss.l_tcl, s.loss.l_regularizer, s.loss.total, s.lr,
                 phase_name(s.phase));
  std::fclose(f);
}

LabelVolume largest_component(const LabelVolume& mask) {
  const int nx = mask.dims[0], ny = mask.dims[1], nz = mask.dims[2];
  std::vector<int32_t> label(mask.voxels(), 0);
  int32_t next = 0;
  size_t best_size = 0;
  int32_t best_label = 0;
  std::deque<size_t> queue;
  const int dx[6] = {1, -1, 0, 0, 0, 0};
  const int dy[6] = {0, 0, 1, -1, 0, 0};
  const int dz[6] = {0, 0, 0, 0, 1, -1};
  for (size_t seed = 0; seed < mask.data.size(); ++seed) {
    if (!mask.data[seed] || label[seed]) continue;
    ++next;
    size_t count = 0;
    label[seed] = next;
    queue.push_back(seed);
    while (!queue.empty()) {
      size_t cur = queue.front();
      queue.pop_front();
      ++count;
      int x = int(cur % nx), y = int((cur / nx) % ny), z = int(cur / (size_t(nx) * ny));
      for (int k = 0; k < 6; ++k) {
        int xx = x + dx[k], yy = y + dy[k], zz = z + dz[k];
        if (xx < 0 || xx >= nx || yy < 0 || yy >= ny || zz < 0 || zz >= nz) continue;
        size_t idx = mask.index(xx, yy, zz);
        if (mask.data[idx] && !label[idx]) {
          label[idx] = next;
          queue.push_back(idx);
        }
      }
    }
    if (count > best_size) {
      best_size = count;
      best_label = next;
    }
  }
  LabelVolume out;
  out.dims = mask.dims;
  out.spacing = mask.spacing;
  out.data.assign(mask.voxels(), 0);
  if (best_label)
    for (size_t i = 0; i < out.data.size(); ++i)
      out.data[i] = label[i] == best_label ? 1 : 0;
  return out;
}

namespace {

// 2.5D slice stacks over a whole (possibly padded) grid, replicating edge
// slices; runs the model over every axial slice in batches
void slide_slices(model::ModelState<float>& m, const Volume& v, int batch_size,
                  int slices, LabelVolume* mask_out, Volume* heat_out) {
  const int nx = v.dims[0], ny = v.dims[1], nz = v.dims[2];
  const size_t plane = size_t(nx) * ny;
  if (mask_out) {
    mask_out->dims = v.dims;
    mask_out->spacing = v.spacing;
    mask_out->data.assign(v.voxels(), 0);
  }
  if (heat_out) {
    heat_out->dims = v.dims;
    heat_out->spacing = v.spacing;
    heat_out->data.assign(v.voxels(), 0.f);
  }
  for (int z0 = 0; z0 < nz; z0 += batch_size) {
    int zn = std::min(nz, z0 + batch_size);
    int n = zn - z0;
    Batch<float> x(n, slices, ny, nx);
    for (int i = 0; i < n; ++i)
      for (int s = 0; s < slices; ++s) {
        int z = std::clamp(z0 + i - slices / 2 + s, 0, nz - 1);
        std::copy_n(v.data.data() + size_t(z) * plane, plane, x.plane(s, i));
      }
    auto r = model::forward(m, x);
    for (int i = 0; i < n; ++i) {
      if (mask_out) {
        // argmax over the two classes; ties resolve to background
        const float* c0 = r.seg_logits.plane(0, i);
        const float* c1 = r.seg_logits.plane(1, i);
        uint8_t* dst = mask_out->data.data() + size_t(z0 + i) * plane;
        for (size_t j = 0; j < plane; ++j) dst[j] = c1[j] > c0[j] ? 1 : 0;
      }
      if (heat_out && !r.contour_pred.empty())
        std::copy_n(r.contour_pred.plane(0, i), plane,
                    heat_out->data.data() + size_t(z0 + i) * plane);
    }
  }
}

}  // namespace

InferenceResult infer(model::ModelState<float>& m, const Volume& region,
                      const TrainConfig& cfg) {
  validate(region);
  require(region.dims[0] == cfg.crop_size && region.dims[1] == cfg.crop_size &&
              region.dims[2] == cfg.crop_size,
          ErrorCode::geometry, "infer: region does not match crop_size");
  InferenceResult res;
  bool want_heat = m.contour_pred >= 0;
  slide_slices(m, region, cfg.batch_size, cfg.slices, &res.mask,
               want_heat ? &res.heat_pred : nullptr);
  res.mask = largest_component(res.mask);
  return res;
}

model::TopologyConfig localizer_topology(int width) {
  model::TopologyConfig cfg;
  cfg.family = model::Family::unet;
  cfg.tcl_count = 0;
  cfg.base_width = width;
  return cfg;
}

namespace {

Volume pad_to_multiple(const Volume& v, int mult, float fill) {
  int nx = (v.dims[0] + mult - 1) / mult * mult;
  int ny = (v.dims[1] + mult - 1) / mult * mult;
  if (nx == v.dims[0] && ny == v.dims[1]) return v;
  Volume out;
  out.dims = {nx, ny, v.dims[2]};
  out.spacing = v.spacing;
  out.data.assign(out.voxels(), fill);
  for (int z = 0; z < v.dims[2]; ++z)
    for (int y = 0; y < v.dims[1]; ++y)
      std::copy_n(v.data.data() + v.index(0, y, z), v.dims[0],
                  out.data.data() + out.index(0, y, z));
  return out;
}

}  // namespace

Localization localize(const Volume& v, model::ModelState<float>& loc_model,
                      int crop_size, int downsample) {
  validate(v);
  std::array<float, 3> ds_spacing{v.spacing[0] * downsample, v.spacing[1] * downsample,
                                  v.spacing[2] * downsample};
  Volume ds = resample_trilinear(v, ds_spacing);
  float fill = *std::min_element(ds.data.begin(), ds.data.end());
  Volume padded = pad_to_multiple(ds, 8, fill);

  LabelVolume coarse;
  slide_slices(loc_model, padded, 16, 3, &coarse, nullptr);
  // crop the padding back off
  LabelVolume pred;
  pred.dims = ds.dims;
  pred.spacing = ds.spacing;
  pred.data.assign(ds.voxels(), 0);
  for (int z = 0; z < ds.dims[2]; ++z)
    for (int y = 0; y < ds.dims[1]; ++y)
      for (int x = 0; x < ds.dims[0]; ++x) pred.at(x, y, z) = coarse.at(x, y, z);
  pred = largest_component(pred);

  Localization out;
  size_t n = pred.foreground_count();
  if (n == 0) {
    out.fallback = true;
    out.center = {v.dims[0] / 2, v.dims[1] / 2, v.dims[2] / 2};
  } else {
    double cx = 0, cy = 0, cz = 0;
    for (int z = 0; z < pred.dims[2]; ++z)
      for (int y = 0; y < pred.dims[1]; ++y)
        for (int x = 0; x < pred.dims[0]; ++x)
          if (pred.at(x, y, z)) {
            cx += x;
            cy += y;
            cz += z;
          }
    cx /= double(n);
    cy /= double(n);
    cz /= double(n);
    auto to_full = [&](double c, int axis) {
      double full = (c + 0.5) * double(ds.spacing[axis]) / double(v.spacing[axis]) - 0.5;
      return int(std::lround(full));
    };
    out.center = {to_full(cx, 0), to_full(cy, 1), to_full(cz, 2)};
  }
  for (int a = 0; a < 3; ++a) out.offset[a] = out.center[a] - crop_size / 2;
  out.region = crop_volume_region(v, out.offset, crop_size);
  return out;
}

Volume crop_volume_region(const Volume& v, std::array<int, 3> offset, int crop) {
  Volume out;
  out.dims = {crop, crop, crop};
  out.spacing = v.spacing;
  out.data.assign(out.voxels(), 0.f);  // zero-padded at borders
  for (int z = 0; z < crop; ++z) {
    int sz = z + offset[2];
    if (sz < 0 || sz >= v.dims[2]) continue;
    for (int y = 0; y < crop; ++y) {
      int sy = y + offset[1];
      if (sy < 0 || sy >= v.dims[1]) continue;
      int x0 = std::max(0, -offset[0]);
      int x1 = std::min(crop, v.dims[0] - offset[0]);
      for (int x = x0; x < x1; ++x) out.at(x, y, z) = v.at(x + offset[0], sy, sz);
    }
  }
  return out;
}

LabelVolume crop_label_region(const LabelVolume& gt, std::array<int, 3> offset, int crop) {
  LabelVolume out;
  out.dims = {crop, crop, crop};
  out.spacing = gt.spacing;
  out.data.assign(out.voxels(), 0);
  for (int z = 0; z < crop; ++z) {
    int sz = z + offset[2];
    if (sz < 0 || sz >= gt.dims[2]) continue;
    for (int y = 0; y < crop; ++y) {
      int sy = y + offset[1];
      if (sy < 0 || sy >= gt.dims[1]) continue;
      int x0 = std::max(0, -offset[0]);
      int x1 = std::min(crop, gt.dims[0] - offset[0]);
      for (int x = x0; x < x1; ++x) out.at(x, y, z) = gt.at(x + offset[0], sy, sz);
    }
  }
  return out;
}

LabelVolume paste_region(std::array<int, 3> full_dims, std::array<float, 3> spacing,
                         const LabelVolume& mask, std::array<int, 3> offset) {
  LabelVolume out;
  out.dims = full_dims;
  out.spacing = spacing;
  out.data.assign(out.voxels(), 0);
  for (int z = 0; z < mask.dims[2]; ++z) {
    int dz = z + offset[2];
    if (dz < 0 || dz >= full_dims[2]) continue;
    for (int y = 0; y < mask.dims[1]; ++y) {
      int dy = y + offset[1];
      if (dy < 0 || dy >= full_dims[1]) continue;
      for (int x = 0; x < mask.dims[0]; ++x) {
        int dx = x + offset[0];
        if (dx < 0 || dx >= full_dims[0]) continue;
        out.at(dx, dy, dz) = mask.at(x, y, z);
      }
    }
  }
  return out;
}

model::ModelState<float> train_localizer(const std::vector<const Volume*>& vols,
                                         const std::vector<const LabelVolume*>& gts,
                                         const TrainConfig& cfg, int downsample) {
  require(!vols.empty() && vols.size() == gts.size(), ErrorCode::config,
          "train_localizer: bad dataset");
  // downsampled, padded whole volumes
  std::vector<Volume> ds;
  std::vector<LabelVolume> dgt;
  for (size_t i = 0; i < vols.size(); ++i) {
    std::array<float, 3> sp{vols[i]->spacing[0] * downsample,
                            vols[i]->spacing[1] * downsample,
                            vols[i]->spacing[2] * downsample};
    Volume d = resample_trilinear(*vols[i], sp);
    float fill = *std::min_element(d.data.begin(), d.data.end());
    ds.push_back(pad_to_multiple(d, 8, fill));
    LabelVolume g = resample_label(*gts[i], sp);
    LabelVolume gp;  // padded to the image grid, zeros outside
    gp.dims = {ds.back().dims[0], ds.back().dims[1], g.dims[2]};
    gp.spacing = g.spacing;
    gp.data.assign(gp.voxels(), 0);
    for (int z = 0; z < g.dims[2]; ++z)
      for (int y = 0; y < g.dims[1]; ++y)
        for (int x = 0; x < g.dims[0]; ++x) gp.at(x, y, z) = g.at(x, y, z);
    dgt.push_back(std::move(gp));
  }

  model::ModelState<float> loc =
      model::build_topology<float>(localizer_topology(cfg.loc_width),
                                   {.seed = subseed(cfg.seed, "loc.init")});
  Sgd sgd(loc.net);
  Rng rng = make_rng(cfg.seed, "loc.batches");
  const int batch = 8;
  std::uniform_int_distribution<size_t> uvol(0, ds.size() - 1);
  for (int step = 0; step < cfg.loc_steps; ++step) {
    size_t vi = uvol(rng);
    const Volume& v = ds[vi];
    const LabelVolume& g = dgt[vi];
    std::uniform_int_distribution<int> uz(0, v.dims[2] - 1);
    const size_t plane = size_t(v.dims[0]) * v.dims[1];
    Batch<float> x(batch, 3, v.dims[1], v.dims[0]), mask(batch, 1, v.dims[1], v.dims[0]);
    for (int i = 0; i < batch; ++i) {
      int z = uz(rng);
      for (int s = 0; s < 3; ++s) {
        int zz = std::clamp(z - 1 + s, 0, v.dims[2] - 1);
        std::copy_n(v.data.data() + size_t(zz) * plane, plane, x.plane(s, i));
      }
      for (size_t j = 0; j < plane; ++j)
        mask.plane(0, i)[j] = float(g.data[size_t(z) * plane + j]);
    }
    loc.net.forward(x);
    const Batch<float>& prob = loc.net.out(loc.seg_prob);
    Batch<float> fg(prob.n, 1, prob.h, prob.w);
    std::copy(prob.row(1), prob.row(1) + prob.cols(), fg.data.begin());
    Batch<float> gfg;
    loss::classification_loss(fg, mask, &gfg);
    Batch<float> gprob(prob.n, prob.c, prob.h, prob.w);
    for (size_t i = 0; i < gfg.data.size(); ++i) gprob.data[prob.cols() + i] = gfg.data[i];
    loc.net.zero_grad();
    std::vector<std::pair<int, Batch<float>>> seeds;
    seeds.emplace_back(loc.seg_prob, std::move(gprob));
    loc.net.backward(std::move(seeds));
    sgd.step(cfg.lr_start, cfg.momentum, false);
  }
  return loc;
}

TwoStageResult two_stage_segment(const Volume& v_pre, model::ModelState<float>& loc_model,
                                 model::ModelState<float>& m, const TrainConfig& cfg) {
  TwoStageResult out;
  out.loc = localize(v_pre, loc_model, cfg.crop_size);
  InferenceResult r = infer(m, out.loc.region, cfg);
  out.mask = paste_region(v_pre.dims, v_pre.spacing, r.mask, out.loc.offset);
  out.heat_pred = std::move(r.heat_pred);
  return out;
}

}  // namespace hf::pipeline
