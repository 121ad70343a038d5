#pragma once

#include <array>
#include <cstdint>
#include <utility>
#include <vector>

#include "hf/contour.hpp"
#include "hf/volume.hpp"

namespace hf {

// Synthetic low-contrast organ phantom: a band-limited radial perturbation of
// an ellipsoid, blurred into the background and drowned in Gaussian noise.
// Same seed means a bit-identical result.
struct PhantomSpec {
  std::array<int, 3> dims{96, 96, 96};
  std::array<float, 3> spacing{1.f, 1.f, 1.f};
  std::array<float, 3> organ_center{47.5f, 47.5f, 47.5f};  // voxel coords
  std::array<float, 3> radii_mm{20.f, 14.f, 16.f};
  float radial_perturbation_amplitude = 0.15f;  // fraction of the radius
  float contrast_delta = 1.f;                   // organ intensity offset
  float noise_sigma = 0.5f;
  float boundary_blur_sigma = 1.f;              // voxels
  uint64_t seed = 1;
};

std::pair<Volume, LabelVolume> generate_phantom(const PhantomSpec& spec);

// Trilinear resample to target_spacing, crop to the bounding box of
// {data > body_threshold} padded by 2 voxels, then min-max rescale to [-1,1].
// A constant crop maps to all zeros (documented degenerate rule).
Volume preprocess(const Volume& v, std::array<float, 3> target_spacing,
                  float body_threshold);

// Geometry bookkeeping for callers that must transform a paired label
// identically (resample + crop box, before normalization).
struct PreprocessInfo {
  std::array<int, 3> resampled_dims;
  std::array<int, 3> crop_lo;  // inclusive, in resampled voxel coords
  std::array<int, 3> crop_hi;  // inclusive
};
Volume preprocess(const Volume& v, std::array<float, 3> target_spacing,
                  float body_threshold, PreprocessInfo* info);

Volume resample_trilinear(const Volume& v, std::array<float, 3> target_spacing);
LabelVolume resample_label(const LabelVolume& v, std::array<float, 3> target_spacing);
LabelVolume crop_label(const LabelVolume& v, std::array<int, 3> lo, std::array<int, 3> hi);

// k consecutive axial slices as channels; the middle slice carries the labels.
struct SliceStack {
  int p = 0;                       // in-plane side
  int k = 0;                       // slice count, odd
  int mid = 0;                     // = k / 2
  std::array<int, 3> offset{0, 0, 0};  // (x0, y0, z of middle slice) in source voxels
  std::vector<float> planes;       // k * p * p, slice-major
};

struct TrainingPatch {
  SliceStack stack;
  std::vector<uint8_t> mask;  // p*p middle-slice ground truth
  std::vector<float> heat;    // p*p middle-slice contour heatmap target
};

// Patch centers are sampled uniformly inside the organ bounding box dilated
// by half the patch size; windows are clamped so they never read outside the
// volume, and edge slices replicate. Deterministic in rng_seed.
std::vector<TrainingPatch> sample_training_patches(
    const Volume& v, const LabelVolume& gt,
    const std::vector<ContourHeatmap>& heatmaps, int n, uint64_t rng_seed,
    int patch = 64, int slices = 3);

}  // namespace hf
