#include "hf/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "hf/rng.hpp"

namespace hf {

namespace {

// Smooth band-limited scalar field on the unit sphere: a handful of random
// cosine lobes. Normalized so |value| <= 1.
struct AngularNoise {
  struct Lobe {
    std::array<double, 3> axis;
    double freq, phase, amp;
  };
  std::vector<Lobe> lobes;
  double norm = 1.0;

  explicit AngularNoise(Rng& rng, int count = 6) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> uphase(0.0, 2.0 * M_PI);
    std::uniform_int_distribution<int> ufreq(1, 4);
    double total = 0.0;
    for (int i = 0; i < count; ++i) {
      std::array<double, 3> a{gauss(rng), gauss(rng), gauss(rng)};
      double len = std::sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2]);
      if (len < 1e-9) {
        a = {1, 0, 0};
        len = 1;
      }
      for (double& c : a) c /= len;
      double amp = std::abs(gauss(rng)) + 0.1;
      lobes.push_back({a, double(ufreq(rng)), uphase(rng), amp});
      total += amp;
    }
    norm = total;
  }

  double operator()(double ux, double uy, double uz) const {
    double s = 0.0;
    for (const Lobe& l : lobes) {
      double t = ux * l.axis[0] + uy * l.axis[1] + uz * l.axis[2];
      s += l.amp * std::cos(l.freq * 2.0 * M_PI * t + l.phase);
    }
    return s / norm;
  }
};

void gaussian_blur_inplace(std::vector<float>& data, const std::array<int, 3>& dims,
                           float sigma) {
  if (sigma <= 0.f) return;
  int radius = std::max(1, int(std::ceil(3.0 * sigma)));
  std::vector<double> kernel(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    kernel[i + radius] = std::exp(-0.5 * double(i) * i / (double(sigma) * sigma));
    sum += kernel[i + radius];
  }
  for (double& k : kernel) k /= sum;

  const int nx = dims[0], ny = dims[1], nz = dims[2];
  std::vector<float> tmp(data.size());
  auto idx = [&](int x, int y, int z) { return (size_t(z) * ny + y) * nx + x; };
  // three separable passes, clamped at the borders
  for (int z = 0; z < nz; ++z)
    for (int y = 0; y < ny; ++y)
      for (int x = 0; x < nx; ++x) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i)
          acc += kernel[i + radius] * data[idx(std::clamp(x + i, 0, nx - 1), y, z)];
        tmp[idx(x, y, z)] = float(acc);
      }
  for (int z = 0; z < nz; ++z)
    for (int y = 0; y < ny; ++y)
      for (int x = 0; x < nx; ++x) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i)
          acc += kernel[i + radius] * tmp[idx(x, std::clamp(y + i, 0, ny - 1), z)];
        data[idx(x, y, z)] = float(acc);
      }
  for (int z = 0; z < nz; ++z)
    for (int y = 0; y < ny; ++y)
      for (int x = 0; x < nx; ++x) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i)
          acc += kernel[i + radius] * data[idx(x, y, std::clamp(z + i, 0, nz - 1))];
        tmp[idx(x, y, z)] = float(acc);
      }
  data.swap(tmp);
}

}  // namespace

std::pair<Volume, LabelVolume> generate_phantom(const PhantomSpec& spec) {
  for (int d : spec.dims)
    require(d >= 1, ErrorCode::config, "phantom dims must be >= 1");
  for (float s : spec.spacing)
    require(s > 0.f, ErrorCode::config, "phantom spacing must be positive");
  for (float r : spec.radii_mm)
    require(r > 0.f, ErrorCode::config, "phantom radii must be positive");
  require(spec.radial_perturbation_amplitude >= 0.f &&
              spec.radial_perturbation_amplitude < 1.f,
          ErrorCode::config, "radial perturbation amplitude must be in [0,1)");
  require(spec.noise_sigma >= 0.f, ErrorCode::config, "noise sigma must be >= 0");
  require(spec.boundary_blur_sigma >= 0.f, ErrorCode::config, "blur sigma must be >= 0");

  // The perturbed organ must fit with a 4-voxel margin on every side.
  const double amp = spec.radial_perturbation_amplitude;
  for (int a = 0; a < 3; ++a) {
    double r_vox = spec.radii_mm[a] / spec.spacing[a] * (1.0 + amp);
    if (spec.organ_center[a] - r_vox < 4.0 ||
        spec.organ_center[a] + r_vox > spec.dims[a] - 1 - 4.0)
      fail(ErrorCode::config,
           "organ does not fit inside dims with a 4-voxel margin along axis " +
               std::to_string(a));
  }

  Rng shape_rng = make_rng(spec.seed, "phantom.shape");
  AngularNoise noise_field(shape_rng);

  LabelVolume gt;
  gt.dims = spec.dims;
  gt.spacing = spec.spacing;
  gt.data.assign(gt.voxels(), 0);

  const int nx = spec.dims[0], ny = spec.dims[1], nz = spec.dims[2];
  for (int z = 0; z < nz; ++z)
    for (int y = 0; y < ny; ++y)
      for (int x = 0; x < nx; ++x) {
        double dx = (x - spec.organ_center[0]) * spec.spacing[0] / spec.radii_mm[0];
        double dy = (y - spec.organ_center[1]) * spec.spacing[1] / spec.radii_mm[1];
        double dz = (z - spec.organ_center[2]) * spec.spacing[2] / spec.radii_mm[2];
        double rho2 = dx * dx + dy * dy + dz * dz;
        bool inside;
        if (amp == 0.0) {
          inside = rho2 <= 1.0;
        } else {
          double rho = std::sqrt(rho2);
          if (rho < 1e-12) {
            inside = true;
          } else {
            double bound = 1.0 + amp * noise_field(dx / rho, dy / rho, dz / rho);
            inside = rho <= bound;
          }
        }
        if (inside) gt.data[gt.index(x, y, z)] = 1;
      }

  Volume img;
  img.dims = spec.dims;
  img.spacing = spec.spacing;
  img.data.resize(img.voxels());
  for (size_t i = 0; i < img.data.size(); ++i) img.data[i] = float(gt.data[i]);
  gaussian_blur_inplace(img.data, img.dims, spec.boundary_blur_sigma);

  Rng noise_rng = make_rng(spec.seed, "phantom.noise");
  std::normal_distribution<float> gauss(0.f, 1.f);
  for (float& v : img.data) {
    float n = spec.noise_sigma > 0.f ? spec.noise_sigma * gauss(noise_rng) : 0.f;
    v = spec.contrast_delta * v + n;
  }
  return {std::move(img), std::move(gt)};
}

Volume resample_trilinear(const Volume& v, std::array<float, 3> target_spacing) {
  validate(v);
  for (float s : target_spacing)
    require(s > 0.f, ErrorCode::config, "target spacing must be positive");

  Volume out;
  out.spacing = target_spacing;
  for (int a = 0; a < 3; ++a) {
    double extent = double(v.dims[a]) * v.spacing[a];
    out.dims[a] = std::max(1, int(std::llround(extent / target_spacing[a])));
  }
  if (out.dims == v.dims && out.spacing == v.spacing) {
    out.data = v.data;
    return out;
  }
  out.data.resize(out.voxels());

  const int nx = v.dims[0], ny = v.dims[1], nz = v.dims[2];
  auto src_coord = [&](int i, int axis) {
    // voxel-center convention: sample where the new center lands in the old grid
    double mm = (i + 0.5) * target_spacing[axis];
    return mm / v.spacing[axis] - 0.5;
  };
  for (int z = 0; z < out.dims[2]; ++z) {
    double fz = std::clamp(src_coord(z, 2), 0.0, double(nz - 1));
    int z0 = std::min(int(fz), nz - 1), z1 = std::min(z0 + 1, nz - 1);
    double wz = fz - z0;
    for (int y = 0; y < out.dims[1]; ++y) {
      double fy = std::clamp(src_coord(y, 1), 0.0, double(ny - 1));
      int y0 = std::min(int(fy), ny - 1), y1 = std::min(y0 + 1, ny - 1);
      double wy = fy - y0;
      for (int x = 0; x < out.dims[0]; ++x) {
        double fx = std::clamp(src_coord(x, 0), 0.0, double(nx - 1));
        int x0 = std::min(int(fx), nx - 1), x1 = std::min(x0 + 1, nx - 1);
        double wx = fx - x0;
        double c00 = v.at(x0, y0, z0) * (1 - wx) + v.at(x1, y0, z0) * wx;
        double c10 = v.at(x0, y1, z0) * (1 - wx) + v.at(x1, y1, z0) * wx;
        double c01 = v.at(x0, y0, z1) * (1 - wx) + v.at(x1, y0, z1) * wx;
        double c11 = v.at(x0, y1, z1) * (1 - wx) + v.at(x1, y1, z1) * wx;
        double c0 = c00 * (1 - wy) + c10 * wy;
        double c1 = c01 * (1 - wy) + c11 * wy;
        out.at(x, y, z) = float(c0 * (1 - wz) + c1 * wz);
      }
    }
  }
  return out;
}

LabelVolume resample_label(const LabelVolume& v, std::array<float, 3> target_spacing) {
  Volume f;
  f.dims = v.dims;
  f.spacing = v.spacing;
  f.data.resize(v.voxels());
  for (size_t i = 0; i < v.data.size(); ++i) f.data[i] = float(v.data[i]);
  Volume r = resample_trilinear(f, target_spacing);
  LabelVolume out;
  out.dims = r.dims;
  out.spacing = r.spacing;
  out.data.resize(r.voxels());
  for (size_t i = 0; i < r.data.size(); ++i) out.data[i] = r.data[i] > 0.5f ? 1 : 0;
  return out;
}

LabelVolume crop_label(const LabelVolume& v, std::array<int, 3> lo, std::array<int, 3> hi) {
  LabelVolume out;
  out.spacing = v.spacing;
  for (int a = 0; a < 3; ++a) {
    require(lo[a] >= 0 && hi[a] < v.dims[a] && lo[a] <= hi[a], ErrorCode::geometry,
            "crop_label: box out of range");
    out.dims[a] = hi[a] - lo[a] + 1;
  }
  out.data.resize(out.voxels());
  for (int z = 0; z < out.dims[2]; ++z)
    for (int y = 0; y < out.dims[1]; ++y)
      for (int x = 0; x < out.dims[0]; ++x)
        out.at(x, y, z) = v.at(x + lo[0], y + lo[1], z + lo[2]);
  return out;
}

Volume preprocess(const Volume& v, std::array<float, 3> target_spacing,
                  float body_threshold, PreprocessInfo* info) {
  Volume r = resample_trilinear(v, target_spacing);

  std::array<int, 3> lo{r.dims[0], r.dims[1], r.dims[2]}, hi{-1, -1, -1};
  for (int z = 0; z < r.dims[2]; ++z)
    for (int y = 0; y < r.dims[1]; ++y)
      for (int x = 0; x < r.dims[0]; ++x)
        if (r.at(x, y, z) > body_threshold) {
          lo = {std::min(lo[0], x), std::min(lo[1], y), std::min(lo[2], z)};
          hi = {std::max(hi[0], x), std::max(hi[1], y), std::max(hi[2], z)};
        }
  require(hi[0] >= 0, ErrorCode::empty_mask,
          "preprocess: empty foreground after body threshold");
  for (int a = 0; a < 3; ++a) {
    lo[a] = std::max(0, lo[a] - 2);
    hi[a] = std::min(r.dims[a] - 1, hi[a] + 2);
  }
  if (info) *info = {r.dims, lo, hi};

  Volume out;
  out.spacing = r.spacing;
  for (int a = 0; a < 3; ++a) out.dims[a] = hi[a] - lo[a] + 1;
  out.data.resize(out.voxels());
  float mn = std::numeric_limits<float>::max(), mx = std::numeric_limits<float>::lowest();
  for (int z = 0; z < out.dims[2]; ++z)
    for (int y = 0; y < out.dims[1]; ++y)
      for (int x = 0; x < out.dims[0]; ++x) {
        float val = r.at(x + lo[0], y + lo[1], z + lo[2]);
        out.at(x, y, z) = val;
        mn = std::min(mn, val);
        mx = std::max(mx, val);
      }
  if (mx == mn) {
    std::fill(out.data.begin(), out.data.end(), 0.f);  // degenerate rule
    return out;
  }
  // exact at both endpoints: (mx-mn)/(mx-mn) == 1 in double
  double range = double(mx) - double(mn);
  for (float& val : out.data) {
    double t = 2.0 * ((double(val) - double(mn)) / range) - 1.0;
    val = float(std::clamp(t, -1.0, 1.0));
  }
  return out;
}

Volume preprocess(const Volume& v, std::array<float, 3> target_spacing,
                  float body_threshold) {
  return preprocess(v, target_spacing, body_threshold, nullptr);
}

std::vector<TrainingPatch> sample_training_patches(
    const Volume& v, const LabelVolume& gt,
    const std::vector<ContourHeatmap>& heatmaps, int n, uint64_t rng_seed,
    int patch, int slices) {
  validate(v);
  validate(gt);
  require_same_geometry(v, gt, "sample_training_patches");
  require(int(heatmaps.size()) == v.dims[2], ErrorCode::geometry,
          "sample_training_patches: heatmap stack depth mismatch");
  for (const auto& hm : heatmaps)
    require(hm.w == v.dims[0] && hm.h == v.dims[1], ErrorCode::geometry,
            "sample_training_patches: heatmap slice dims mismatch");
  require(slices >= 1 && slices % 2 == 1, ErrorCode::config, "slice count must be odd");
  require(patch >= 1 && patch <= v.dims[0] && patch <= v.dims[1], ErrorCode::config,
          "patch size exceeds volume extent");
  require(n >= 0, ErrorCode::config, "patch count must be >= 0");

  std::array<int, 3> lo{v.dims[0], v.dims[1], v.dims[2]}, hi{-1, -1, -1};
  for (int z = 0; z < gt.dims[2]; ++z)
    for (int y = 0; y < gt.dims[1]; ++y)
      for (int x = 0; x < gt.dims[0]; ++x)
        if (gt.at(x, y, z)) {
          lo = {std::min(lo[0], x), std::min(lo[1], y), std::min(lo[2], z)};
          hi = {std::max(hi[0], x), std::max(hi[1], y), std::max(hi[2], z)};
        }
  require(hi[0] >= 0, ErrorCode::empty_mask, "sample_training_patches: organ is empty");
  // dilate by half the patch (half the stack along z) so boundary-rich
  // windows are reachable, then clamp to the volume
  int half = patch / 2, halfz = slices / 2;
  std::array<int, 3> slo{std::max(0, lo[0] - half), std::max(0, lo[1] - half),
                         std::max(0, lo[2] - halfz)};
  std::array<int, 3> shi{std::min(v.dims[0] - 1, hi[0] + half),
                         std::min(v.dims[1] - 1, hi[1] + half),
                         std::min(v.dims[2] - 1, hi[2] + halfz)};

  Rng rng(rng_seed);
  std::uniform_int_distribution<int> ux(slo[0], shi[0]), uy(slo[1], shi[1]),
      uz(slo[2], shi[2]);

  std::vector<TrainingPatch> out;
  out.reserve(n);
  const size_t plane = size_t(v.dims[0]) * v.dims[1];
  for (int s = 0; s < n; ++s) {
    int cx = ux(rng), cy = uy(rng), cz = uz(rng);
    int x0 = std::clamp(cx - patch / 2, 0, v.dims[0] - patch);
    int y0 = std::clamp(cy - patch / 2, 0, v.dims[1] - patch);

    TrainingPatch tp;
    tp.stack.p = patch;
    tp.stack.k = slices;
    tp.stack.mid = slices / 2;
    tp.stack.offset = {x0, y0, cz};
    tp.stack.planes.resize(size_t(slices) * patch * patch);
    for (int s2 = 0; s2 < slices; ++s2) {
      int z = std::clamp(cz - slices / 2 + s2, 0, v.dims[2] - 1);  // edge replication
      const float* src = v.data.data() + size_t(z) * plane;
      float* dst = tp.stack.planes.data() + size_t(s2) * patch * patch;
      for (int y = 0; y < patch; ++y)
        for (int x = 0; x < patch; ++x)
          dst[size_t(y) * patch + x] = src[size_t(y0 + y) * v.dims[0] + x0 + x];
    }
    tp.mask.resize(size_t(patch) * patch);
    tp.heat.resize(size_t(patch) * patch);
    const uint8_t* msrc = gt.data.data() + size_t(cz) * plane;
    const ContourHeatmap& hm = heatmaps[cz];
    for (int y = 0; y < patch; ++y)
      for (int x = 0; x < patch; ++x) {
        tp.mask[size_t(y) * patch + x] = msrc[size_t(y0 + y) * v.dims[0] + x0 + x];
        tp.heat[size_t(y) * patch + x] = float(hm.at(y0 + y, x0 + x));
      }
    out.push_back(std::move(tp));
  }
  return out;
}

}  // namespace hf
